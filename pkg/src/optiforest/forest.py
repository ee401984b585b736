"""Forest fitting, anomaly scoring, and model persistence.

A forest is an ensemble of isolation trees grown on independent
subsamples.  Scoring walks each tree, charging log2(b) per level of a
b-way fork so branching factors trade depth against width on a common
scale, and normalizes the averaged path length by the expected path
length of an unsuccessful binary search over the subsample.

Determinism contract: for a given data matrix and configuration the
fitted forest, and therefore every score, is identical regardless of the
worker count.  Each tree derives its own generator from (seed, tree
index), so trees never share random state.
"""

from __future__ import annotations

import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import BinaryIO, Union

import numpy as np

from .data import DataMatrix, Subsample, subsample
from .errors import DataError, ModelFormatError
from .lsh_tree import CentreNode, HashFunction, Leaf, LshNode, TreeNode, build_lsh_tree
from .opt_tree import build_optimal_tree
from .theory import BranchingDistribution

_MAGIC = b"OIFR"
_FORMAT_VERSION = 1

# Small-sample size threshold for the automatic cut level: subsamples
# whose size-times-dimension product is at most this use the small
# setting, larger ones the large setting.
_AUTO_CELLS = 100_000
_AUTO_EPSILON_SMALL = 55
_AUTO_EPSILON_LARGE = 403

_MODES = ("optiforest", "lsh-only")


def average_path_length(k: int) -> float:
    """Expected unsuccessful-search path length in a binary tree of k items.

    This is the standard isolation forest normalizer: 0 for k <= 1, and
    2*(H(k-1)) - 2*(k-1)/k otherwise, with the harmonic number estimated
    through ln(k-1) plus the Euler-Mascheroni constant.  k = 2 is exact.
    """
    if k <= 1:
        return 0.0
    if k == 2:
        return 1.0
    return 2.0 * (math.log(k - 1.0) + np.euler_gamma) - 2.0 * (k - 1.0) / k


@dataclass(frozen=True)
class ForestConfig:
    """Fitting parameters; frozen so a fitted forest can echo them verbatim."""

    trees: int = 100
    sample_size: int = 512
    epsilon: Union[int, str] = "auto"
    distribution: BranchingDistribution = field(
        default_factory=BranchingDistribution.finite23
    )
    seed: int = 0
    mode: str = "optiforest"

    def __post_init__(self) -> None:
        if self.trees < 1:
            raise ValueError(f"trees must be >= 1, got {self.trees}")
        if self.sample_size < 2:
            raise ValueError(f"sample_size must be >= 2, got {self.sample_size}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must fit in an unsigned 64-bit int, got {self.seed}")
        if isinstance(self.epsilon, str):
            if self.epsilon != "auto":
                raise ValueError(f"epsilon must be an int or 'auto', got {self.epsilon!r}")
        elif not 1 <= self.epsilon <= self.sample_size:
            raise ValueError(
                f"epsilon must be in [1, sample_size={self.sample_size}], "
                f"got {self.epsilon}"
            )
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {self.mode!r}")


def resolve_epsilon(config: ForestConfig, n_rows: int, n_features: int) -> int:
    """Concrete cut level for this data: auto rule, then clamp to [1, psi]."""
    psi = min(config.sample_size, n_rows)
    if config.epsilon == "auto":
        cells = psi * n_features
        value = _AUTO_EPSILON_SMALL if cells <= _AUTO_CELLS else _AUTO_EPSILON_LARGE
    else:
        value = int(config.epsilon)
    return max(1, min(value, psi))


@dataclass
class Forest:
    """A fitted ensemble with everything needed to score and persist."""

    trees: list[TreeNode]
    config: ForestConfig
    c_psi: float
    n_features: int
    psi_effective: int
    epsilon_used: int


def _tree_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def _build_one(
    data: DataMatrix, config: ForestConfig, epsilon: int, index: int
) -> TreeNode:
    rng = _tree_rng(config.seed, index)
    sub = subsample(data, config.sample_size, rng)
    if config.mode == "lsh-only":
        branch_target = (
            config.distribution.v0 if config.distribution.kind == "fixed" else 2
        )
        return build_lsh_tree(data, sub, rng, branch_target=branch_target)
    return build_optimal_tree(data, sub, epsilon, config.distribution, rng)


def fit(data: DataMatrix, config: ForestConfig, jobs: int = 1) -> Forest:
    """Fit a forest; ``jobs`` > 1 builds trees in a thread pool."""
    if jobs < 1:
        raise ValueError(f"jobs must be >= 1, got {jobs}")
    if data.n_rows < 2:
        raise DataError(f"need at least 2 rows to fit, got {data.n_rows}")
    psi = min(config.sample_size, data.n_rows)
    epsilon = resolve_epsilon(config, data.n_rows, data.n_features)
    indices = range(config.trees)
    if jobs == 1:
        trees = [_build_one(data, config, epsilon, i) for i in indices]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            trees = list(pool.map(lambda i: _build_one(data, config, epsilon, i), indices))
    return Forest(
        trees=trees,
        config=config,
        c_psi=average_path_length(psi),
        n_features=data.n_features,
        psi_effective=psi,
        epsilon_used=epsilon,
    )


def path_length(tree: TreeNode, x: np.ndarray) -> float:
    """Weighted path length of one instance through one tree.

    Each traversed fork with b children adds log2(b); stopping in a leaf
    of c instances, or at a hash value the tree never saw, adds the
    expected remaining depth of the instances pooled there.
    """
    x = np.asarray(x, dtype=np.float64)
    acc = 0.0
    node = tree
    while True:
        if isinstance(node, Leaf):
            return acc + average_path_length(node.count)
        if isinstance(node, LshNode):
            child = node.children.get(node.func.hash_value(x))
            if child is None:
                return acc + average_path_length(node.size)
            acc += math.log2(len(node.children))
            node = child
        else:
            acc += math.log2(len(node.children))
            node = node.children[node.route(x)]


def _tree_path_lengths(tree: TreeNode, points: np.ndarray) -> np.ndarray:
    """Vectorized ``path_length`` over the rows of ``points``."""
    out = np.zeros(points.shape[0], dtype=np.float64)
    stack: list[tuple[TreeNode, np.ndarray, float]] = [
        (tree, np.arange(points.shape[0]), 0.0)
    ]
    while stack:
        node, idx, acc = stack.pop()
        if isinstance(node, Leaf):
            out[idx] = acc + average_path_length(node.count)
            continue
        step = acc + math.log2(len(node.children))
        if isinstance(node, LshNode):
            hashes = node.func.hash_all(points[idx])
            matched = np.zeros(idx.size, dtype=bool)
            for key, child in node.children.items():
                mask = hashes == key
                if mask.any():
                    stack.append((child, idx[mask], step))
                    matched |= mask
            unseen = idx[~matched]
            if unseen.size:
                out[unseen] = acc + average_path_length(node.size)
        else:
            deltas = points[idx][:, None, :] - node.centres[None, :, :]
            nearest = np.argmin(np.einsum("rkm,rkm->rk", deltas, deltas), axis=1)
            for i, child in enumerate(node.children):
                mask = nearest == i
                if mask.any():
                    stack.append((child, idx[mask], step))
    return out


def _check_features(forest: Forest, n_features: int) -> None:
    if n_features != forest.n_features:
        raise DataError(
            f"forest was fitted on {forest.n_features} features, "
            f"input has {n_features}"
        )


def _mean_path_lengths(forest: Forest, points: np.ndarray) -> np.ndarray:
    # Sequential per-tree accumulation: the summation order is the same
    # for a single row and for that row inside a batch, so score and
    # score_all agree to the last bit.
    total = np.zeros(points.shape[0], dtype=np.float64)
    for tree in forest.trees:
        total += _tree_path_lengths(tree, points)
    return total / len(forest.trees)


def score(forest: Forest, x: np.ndarray) -> float:
    """Anomaly score in (0, 1]; higher means easier to isolate."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DataError(f"score expects a 1-d vector, got shape {x.shape}")
    _check_features(forest, x.shape[0])
    mean = _mean_path_lengths(forest, x[None, :])
    return float(2.0 ** (-mean[0] / forest.c_psi))


def score_all(forest: Forest, data: DataMatrix) -> np.ndarray:
    """Anomaly scores for every row of ``data``."""
    _check_features(forest, data.n_features)
    return 2.0 ** (-_mean_path_lengths(forest, data.values) / forest.c_psi)


def _encode_node(node: TreeNode, buf: bytearray) -> None:
    if isinstance(node, Leaf):
        buf += struct.pack("<BII", 0, node.count, node.depth)
    elif isinstance(node, LshNode):
        a = np.ascontiguousarray(node.func.a, dtype="<f8")
        buf += struct.pack("<BIII", 1, node.size, node.depth, a.size)
        buf += struct.pack("<dd", node.func.b, node.func.w)
        buf += a.tobytes()
        buf += struct.pack("<I", len(node.children))
        for key, child in node.children.items():
            buf += struct.pack("<q", key)
            _encode_node(child, buf)
    else:
        centres = np.ascontiguousarray(node.centres, dtype="<f8")
        k, dim = centres.shape
        buf += struct.pack("<BIIII", 2, node.size, node.depth, k, dim)
        buf += centres.tobytes()
        for child in node.children:
            _encode_node(child, buf)


class _Reader:
    """Cursor over a tree blob; any overrun is a format error."""

    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def unpack(self, fmt: str) -> tuple:
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.blob):
            raise ModelFormatError("model file is truncated inside a tree record")
        values = struct.unpack_from(fmt, self.blob, self.pos)
        self.pos += size
        return values

    def floats(self, count: int) -> np.ndarray:
        size = 8 * count
        if self.pos + size > len(self.blob):
            raise ModelFormatError("model file is truncated inside a tree record")
        arr = np.frombuffer(self.blob, dtype="<f8", count=count, offset=self.pos)
        self.pos += size
        return arr.astype(np.float64)


def _decode_node(reader: _Reader) -> TreeNode:
    (tag,) = reader.unpack("<B")
    if tag == 0:
        count, depth = reader.unpack("<II")
        return Leaf(count=count, depth=depth)
    if tag == 1:
        size, depth, dim = reader.unpack("<III")
        b, w = reader.unpack("<dd")
        a = reader.floats(dim)
        (n_children,) = reader.unpack("<I")
        children: dict[int, TreeNode] = {}
        for _ in range(n_children):
            (key,) = reader.unpack("<q")
            children[key] = _decode_node(reader)
        return LshNode(
            func=HashFunction(a=a, b=b, w=w), children=children, size=size, depth=depth
        )
    if tag == 2:
        size, depth, k, dim = reader.unpack("<IIII")
        centres = reader.floats(k * dim).reshape(k, dim)
        centres.flags.writeable = False
        children_list = [_decode_node(reader) for _ in range(k)]
        return CentreNode(centres=centres, children=children_list, size=size, depth=depth)
    raise ModelFormatError(f"unknown node tag {tag} in model file")


def _config_to_dict(config: ForestConfig) -> dict:
    return {
        "trees": config.trees,
        "sample_size": config.sample_size,
        "epsilon": config.epsilon,
        "distribution": {
            "kind": config.distribution.kind,
            "v0": config.distribution.v0,
        },
        "seed": config.seed,
        "mode": config.mode,
    }


def _config_from_dict(raw: dict) -> ForestConfig:
    dist = raw["distribution"]
    return ForestConfig(
        trees=raw["trees"],
        sample_size=raw["sample_size"],
        epsilon=raw["epsilon"],
        distribution=BranchingDistribution(dist["kind"], dist["v0"]),
        seed=raw["seed"],
        mode=raw["mode"],
    )


def save_model(forest: Forest, path: str) -> None:
    """Write a forest to ``path`` in the versioned binary model format."""
    header = {
        "format_version": _FORMAT_VERSION,
        "config": _config_to_dict(forest.config),
        "c_psi": forest.c_psi,
        "n_features": forest.n_features,
        "psi_effective": forest.psi_effective,
        "epsilon_used": forest.epsilon_used,
        "tree_count": len(forest.trees),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for tree in forest.trees:
            buf = bytearray()
            _encode_node(tree, buf)
            fh.write(struct.pack("<Q", len(buf)))
            fh.write(buf)


def _read_exact(fh: BinaryIO, size: int, what: str) -> bytes:
    data = fh.read(size)
    if len(data) != size:
        raise ModelFormatError(f"model file is truncated in the {what}")
    return data


def load_model(path: str) -> Forest:
    """Read a forest written by :func:`save_model`."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != _MAGIC:
            raise ModelFormatError("not a forest model file (bad magic)")
        (header_len,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        try:
            header = json.loads(_read_exact(fh, header_len, "header"))
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"model header is not valid JSON: {exc}") from exc
        if header.get("format_version") != _FORMAT_VERSION:
            raise ModelFormatError(
                f"unsupported model format version {header.get('format_version')!r}"
            )
        try:
            config = _config_from_dict(header["config"])
            tree_count = header["tree_count"]
            c_psi = header["c_psi"]
            n_features = header["n_features"]
            psi_effective = header["psi_effective"]
            epsilon_used = header["epsilon_used"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"model header is malformed: {exc}") from exc
        trees = []
        for i in range(tree_count):
            (blob_len,) = struct.unpack("<Q", _read_exact(fh, 8, f"tree {i} length"))
            reader = _Reader(_read_exact(fh, blob_len, f"tree {i}"))
            trees.append(_decode_node(reader))
            if reader.pos != blob_len:
                raise ModelFormatError(f"tree {i} record has trailing bytes")
        if fh.read(1):
            raise ModelFormatError("model file has trailing bytes after last tree")
    return Forest(
        trees=trees,
        config=config,
        c_psi=c_psi,
        n_features=n_features,
        psi_effective=psi_effective,
        epsilon_used=epsilon_used,
    )


def with_seed(config: ForestConfig, seed: int) -> ForestConfig:
    """Copy of ``config`` with a different seed (evaluation repeats)."""
    return replace(config, seed=seed)
