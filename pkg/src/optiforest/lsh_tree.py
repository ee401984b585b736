"""Multi-fork isolation trees built with Euclidean locality-sensitive hashing.

Each internal node draws a random projection ``h(x) = floor((a.x + b) / w)``
with ``a ~ N(0, 1)^m`` and ``b ~ U[0, w)``; instances sharing a hash value
fall into the same branch, so nearby points tend to stay together and a
single draw usually opens two to four branches.  The bucket width ``w`` is
chosen per node from the spread of the projected values, which keeps the
multi-fork behaviour alive at every depth and data scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Union

import numpy as np

from .data import DataMatrix, Subsample
from .errors import DataError

# Floor for the adaptive bucket width; prevents zero-width buckets when a
# node's projections collapse to (nearly) one value.
_MIN_BUCKET_WIDTH = 1e-9

# A draw that leaves every instance in one bucket is redrawn this many
# times before falling back to a forced median split.
_MAX_REDRAWS = 8


@dataclass(frozen=True)
class HashFunction:
    """Euclidean LSH function h(x) = floor((a.x + b) / w)."""

    a: np.ndarray
    b: float
    w: float

    def __post_init__(self) -> None:
        a = np.asarray(self.a, dtype=np.float64)
        a.flags.writeable = False
        object.__setattr__(self, "a", a)
        if self.w <= 0.0:
            raise ValueError(f"bucket width must be positive, got {self.w}")

    def project(self, points: np.ndarray) -> np.ndarray:
        return points @ self.a

    def hash_value(self, x: np.ndarray) -> int:
        """Hash a single vector; raises DataError on dimension mismatch."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.a.shape:
            raise DataError(
                f"dimension mismatch: point has {x.shape}, hash expects {self.a.shape}"
            )
        return int(math.floor((float(x @ self.a) + self.b) / self.w))

    def hash_all(self, points: np.ndarray) -> np.ndarray:
        """Hash the rows of a matrix (no per-row dimension check)."""
        return np.floor((points @ self.a + self.b) / self.w).astype(np.int64)


@dataclass(eq=False)
class Leaf:
    """Terminal node holding ``count`` unisolated (or fully isolated) instances."""

    count: int
    depth: int = 0

    @property
    def size(self) -> int:
        return self.count


@dataclass(eq=False)
class LshNode:
    """Internal node routing by LSH value; children keyed by bucket hash."""

    func: HashFunction
    children: dict[int, "TreeNode"]
    size: int
    depth: int = 0


@dataclass(eq=False)
class CentreNode:
    """Internal node routing to the nearest of its learned centres."""

    centres: np.ndarray  # (k, m), row i is the centre of children[i]
    children: list["TreeNode"] = field(default_factory=list)
    size: int = 0
    depth: int = 0

    def route(self, x: np.ndarray) -> int:
        """Index of the nearest centre; ties go to the smallest index."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.centres.shape[1],):
            raise DataError(
                f"dimension mismatch: point has {x.shape}, "
                f"centres have dimension {self.centres.shape[1]}"
            )
        deltas = self.centres - x
        return int(np.argmin(np.einsum("ij,ij->i", deltas, deltas)))


TreeNode = Union[Leaf, LshNode, CentreNode]


def build_lsh_tree(
    data: DataMatrix,
    sub: Subsample,
    rng: np.random.Generator,
    branch_target: int = 2,
) -> TreeNode:
    """Grow an LSH isolation tree over the subsampled rows of ``data``.

    Recursion stops when a node holds one instance, all its instances are
    identical, or the depth cap 2*ceil(log2(psi)) is reached; capped nodes
    become leaves with count > 1.  ``branch_target`` divides the projected
    range to set the bucket width: the default 2 yields the natural 2-4
    bucket regime, larger values force wider fan-out for ablations.

    Determinism: the tree is a pure function of (data, sub, rng state);
    children are ordered by ascending bucket hash.
    """
    if branch_target < 2:
        raise ValueError(f"branch_target must be >= 2, got {branch_target}")
    points = data.values[sub.indices]
    psi = points.shape[0]
    cap = 2 * math.ceil(math.log2(psi)) if psi > 1 else 0
    return _grow(points, rng, depth=0, cap=cap, branch_target=branch_target)


def _grow(
    points: np.ndarray,
    rng: np.random.Generator,
    depth: int,
    cap: int,
    branch_target: int,
) -> TreeNode:
    count = points.shape[0]
    if count == 1 or depth >= cap or bool(np.all(points == points[0])):
        return Leaf(count=count, depth=depth)

    func = None
    hashes = None
    proj = None
    for _ in range(1 + _MAX_REDRAWS):
        a = rng.standard_normal(points.shape[1])
        proj = points @ a
        lo, hi = float(proj.min()), float(proj.max())
        w = max(_MIN_BUCKET_WIDTH, (hi - lo) / branch_target)
        b = float(rng.uniform(0.0, w))
        candidate = HashFunction(a=a, b=b, w=w)
        candidate_hashes = np.floor((proj + b) / w).astype(np.int64)
        if np.unique(candidate_hashes).size >= 2:
            func, hashes = candidate, candidate_hashes
            break
    if func is None:
        # Every draw left one bucket; force a binary split of the last
        # projection at a midpoint between its central values.
        forced = _forced_split_function(np.asarray(proj), np.asarray(a))
        if forced is None:
            return Leaf(count=count, depth=depth)
        func = forced
        hashes = func.hash_all(points)
        if np.unique(hashes).size < 2:
            return Leaf(count=count, depth=depth)

    children: dict[int, TreeNode] = {}
    for key in np.unique(hashes):  # np.unique sorts: ascending-hash child order
        bucket = points[hashes == key]
        children[int(key)] = _grow(bucket, rng, depth + 1, cap, branch_target)
    return LshNode(func=func, children=children, size=count, depth=depth)


def _forced_split_function(proj: np.ndarray, a: np.ndarray) -> HashFunction | None:
    """Hash function realizing a two-bucket threshold split of ``proj``.

    The cut sits halfway between the two central distinct projection values;
    the width is chosen so exactly one bucket boundary falls inside the
    projected range, and the offset is shifted into [0, w) (a whole-bucket
    shift only relabels hashes).  Returns None when the projections admit
    no split.
    """
    uniq = np.unique(proj)
    if uniq.size < 2:
        return None
    upper = uniq[uniq.size // 2]
    lower = uniq[uniq.size // 2 - 1]
    theta = 0.5 * (lower + upper)
    lo, hi = float(uniq[0]), float(uniq[-1])
    w = 2.0 * max(theta - lo, hi - theta, _MIN_BUCKET_WIDTH)
    b = (w - theta) % w
    return HashFunction(a=a, b=b, w=w)


def iter_nodes(root: TreeNode) -> Iterator[TreeNode]:
    """Depth-first traversal of every node in the tree."""
    stack = [root]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, LshNode):
            stack.extend(reversed(list(node.children.values())))
        elif isinstance(node, CentreNode):
            stack.extend(reversed(node.children))


def assign_depths(root: TreeNode) -> TreeNode:
    """Recompute the stored depth of every node relative to ``root``."""
    stack = [(root, 0)]
    while stack:
        node, depth = stack.pop()
        node.depth = depth
        if isinstance(node, LshNode):
            stack.extend((child, depth + 1) for child in node.children.values())
        elif isinstance(node, CentreNode):
            stack.extend((child, depth + 1) for child in node.children)
    return root


def nodes_equal(left: TreeNode, right: TreeNode) -> bool:
    """Deep structural equality: same topology, routers, sizes, and depths."""
    if type(left) is not type(right):
        return False
    if isinstance(left, Leaf):
        return left.count == right.count and left.depth == right.depth
    if left.size != right.size or left.depth != right.depth:
        return False
    if isinstance(left, LshNode):
        if list(left.children) != list(right.children):
            return False
        if (
            left.func.b != right.func.b
            or left.func.w != right.func.w
            or not np.array_equal(left.func.a, right.func.a)
        ):
            return False
        return all(
            nodes_equal(left.children[k], right.children[k]) for k in left.children
        )
    if not np.array_equal(left.centres, right.centres):
        return False
    if len(left.children) != len(right.children):
        return False
    return all(nodes_equal(a, b) for a, b in zip(left.children, right.children))
