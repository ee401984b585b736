"""Clustering-based construction of optimal isolation trees.

An LSH isolation tree is first cut at the highest nodes holding at most
``epsilon`` instances, yielding a pool of fine-grained clusters.  The pool
is then merged bottom-up: at each step a branching factor ``v`` is drawn
from the configured distribution and the ``v`` clusters whose merge costs
the least total distortion (size-weighted distance to the merged centre)
are combined under a centre-routing node.  The loop ends by joining the
remaining clusters into the root, so the learned top structure replaces
the original tree above the cut while every subtree below it survives.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .data import DataMatrix, Subsample
from .lsh_tree import CentreNode, Leaf, LshNode, TreeNode, assign_depths, build_lsh_tree
from .theory import BranchingDistribution

# best_merge scans candidate groups in lexicographic chunks of this size.
_CHUNK = 1 << 16

# Candidate-group index tables are materialized and cached when the number
# of groups is at most this; larger searches stream through chunks.
_CACHE_LIMIT = 1 << 17


@dataclass(frozen=True)
class Cluster:
    """A cut-off subtree with the centre and count of its member instances."""

    centre: np.ndarray
    size: int
    node: TreeNode

    def __post_init__(self) -> None:
        centre = np.asarray(self.centre, dtype=np.float64)
        centre.flags.writeable = False
        object.__setattr__(self, "centre", centre)


@dataclass(frozen=True)
class CutSet:
    """The clusters produced by cutting a tree at size threshold ``epsilon``."""

    clusters: tuple[Cluster, ...]
    epsilon: int

    @property
    def total_size(self) -> int:
        return sum(c.size for c in self.clusters)


def epsilon_cut(
    tree: TreeNode,
    data: DataMatrix,
    sub: Subsample,
    epsilon: int,
) -> CutSet:
    """Cut ``tree`` at the highest nodes holding at most ``epsilon`` instances.

    Membership is recovered by replaying the routing of the build sample
    from the root, which doubles as a consistency check against the stored
    node sizes.  A leaf is always a cut node even when its count exceeds
    ``epsilon`` (duplicates or depth-capped buckets cannot be descended).
    """
    if not 1 <= epsilon <= sub.size:
        raise ValueError(
            f"epsilon must be in [1, {sub.size}] for this subsample, got {epsilon}"
        )
    points = data.values[sub.indices]
    clusters: list[Cluster] = []
    stack: list[tuple[TreeNode, np.ndarray]] = [(tree, np.arange(points.shape[0]))]
    while stack:
        node, members = stack.pop(0)
        if isinstance(node, CentreNode):
            raise ValueError("epsilon_cut expects a raw LSH tree without merge nodes")
        size = node.count if isinstance(node, Leaf) else node.size
        if members.size != size:
            raise RuntimeError(
                f"routing replay found {members.size} instances at a node "
                f"recording size {size}"
            )
        if size <= epsilon or isinstance(node, Leaf):
            clusters.append(
                Cluster(
                    centre=points[members].mean(axis=0),
                    size=int(size),
                    node=node,
                )
            )
            continue
        hashes = node.func.hash_all(points[members])
        for key, child in node.children.items():
            stack.append((child, members[hashes == key]))
    return CutSet(clusters=tuple(clusters), epsilon=epsilon)


def merged_centre(clusters: Sequence[Cluster]) -> np.ndarray:
    """Size-weighted mean of the cluster centres."""
    if len(clusters) < 2:
        raise ValueError(f"need at least two clusters to merge, got {len(clusters)}")
    centres = np.stack([c.centre for c in clusters])
    sizes = np.array([c.size for c in clusters], dtype=np.float64)
    return np.average(centres, axis=0, weights=sizes)


def distortion(clusters: Sequence[Cluster]) -> float:
    """Total size-weighted distance from each centre to the merged centre."""
    merged = merged_centre(clusters)
    total = 0.0
    for c in clusters:
        total += c.size * float(np.linalg.norm(c.centre - merged))
    return total


@lru_cache(maxsize=32)
def _combo_table(k: int, v: int) -> np.ndarray:
    table = np.fromiter(
        itertools.chain.from_iterable(itertools.combinations(range(k), v)),
        dtype=np.int64,
    ).reshape(-1, v)
    table.flags.writeable = False
    return table


def _group_distortions(
    centres: np.ndarray, sizes: np.ndarray, combos: np.ndarray
) -> np.ndarray:
    group_centres = centres[combos]  # (c, v, m)
    group_sizes = sizes[combos]  # (c, v)
    merged = np.einsum("cv,cvm->cm", group_sizes, group_centres)
    merged /= group_sizes.sum(axis=1, keepdims=True)
    deltas = group_centres - merged[:, None, :]
    dists = np.sqrt(np.einsum("cvm,cvm->cv", deltas, deltas))
    return np.einsum("cv,cv->c", dists, group_sizes)


def best_merge(pool: Sequence[Cluster], v: int) -> tuple[int, ...]:
    """Indices of the ``v`` clusters whose merge has minimal distortion.

    Candidate groups are scanned in lexicographic order and ties keep the
    first group found, so the result is deterministic for a given pool.
    Requires strictly more clusters than ``v``; with ``len(pool) <= v``
    the only option is to merge everything and no search is needed.
    """
    k = len(pool)
    if v < 2:
        raise ValueError(f"branching factor must be >= 2, got {v}")
    if k <= v:
        raise ValueError(f"pool of {k} clusters admits no choice of {v}")
    centres = np.stack([c.centre for c in pool])
    sizes = np.array([c.size for c in pool], dtype=np.float64)

    if math.comb(k, v) <= _CACHE_LIMIT:
        combos = _combo_table(k, v)
        values = _group_distortions(centres, sizes, combos)
        return tuple(int(i) for i in combos[int(np.argmin(values))])

    best_value = np.inf
    best_group: tuple[int, ...] = ()
    source = itertools.combinations(range(k), v)
    while True:
        chunk = list(itertools.islice(source, _CHUNK))
        if not chunk:
            break
        combos = np.array(chunk, dtype=np.int64)
        values = _group_distortions(centres, sizes, combos)
        pos = int(np.argmin(values))
        if values[pos] < best_value:  # strict: earlier chunks win ties
            best_value = float(values[pos])
            best_group = tuple(int(i) for i in combos[pos])
    return best_group


def merge_clusters(group: Sequence[Cluster]) -> Cluster:
    """Combine clusters under a centre-routing node, children in given order."""
    centre = merged_centre(group)
    node = CentreNode(
        centres=np.stack([c.centre for c in group]),
        children=[c.node for c in group],
        size=int(sum(c.size for c in group)),
    )
    node.centres.flags.writeable = False
    return Cluster(centre=centre, size=node.size, node=node)


def build_optimal_tree(
    data: DataMatrix,
    sub: Subsample,
    epsilon: int,
    dist: BranchingDistribution,
    rng: np.random.Generator,
) -> TreeNode:
    """Build an LSH tree, cut it at ``epsilon``, and merge back optimally.

    Each merge round draws its branching factor from ``dist``; when the
    pool no longer exceeds the draw, the remaining clusters are joined
    into the root.  A fixed-branching distribution also widens the LSH
    bucket rule to target ``v0`` buckets per node, so the branching
    choice matters even when ``epsilon`` disables merging.
    """
    branch_target = dist.v0 if dist.kind == "fixed" else 2
    tree = build_lsh_tree(data, sub, rng, branch_target=branch_target)
    cut = epsilon_cut(tree, data, sub, epsilon)
    pool = list(cut.clusters)
    if len(pool) == 1:
        return assign_depths(pool[0].node)
    while True:
        v = int(dist.sample(rng))
        if len(pool) <= v:
            root = merge_clusters(pool)
            break
        group = best_merge(pool, v)
        chosen = [pool[i] for i in group]
        merged = merge_clusters(chosen)
        picked = set(group)
        pool = [c for i, c in enumerate(pool) if i not in picked]
        pool.append(merged)
    return assign_depths(root.node)
