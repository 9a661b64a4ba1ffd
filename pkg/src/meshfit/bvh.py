"""Axis-aligned bounding-box hierarchy with batch-fallback leaves.

The tree is built top-down by median splits on the longest node axis and
stops once a node holds at most ``leaf_size`` triangles; queries then switch
to a flat vectorized kernel over the whole leaf batch. Rigid motion is
handled by a conservative isotropic refit, non-rigid motion by displacement
inflation between periodic rebuilds, so query pruning stays exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .geometry import closest_point_batch
from .mesh import TriangleMesh
from .transforms import ScaledRigidTransform, apply

DEFAULT_LEAF_SIZE = 1000
DEFAULT_REBUILD_CYCLE = 20


@dataclass
class QueryStats:
    """Instrumentation for the bench harness."""

    point_triangle_evals: int = 0
    nodes_visited: int = 0

    def reset(self) -> None:
        self.point_triangle_evals = 0
        self.nodes_visited = 0


@dataclass
class BvhTree:
    node_min: np.ndarray  # (N, 3) as built
    node_max: np.ndarray  # (N, 3)
    node_start: np.ndarray  # (N,) triangle span [start, end) into perm
    node_end: np.ndarray
    node_left: np.ndarray  # (N,) child ids, -1 on leaves
    node_right: np.ndarray
    perm: np.ndarray  # (F,) triangle reorder permutation
    leaf_size: int
    generation: int = 0
    inflation: float = 0.0  # conservative slack applied to every box
    build_positions: np.ndarray | None = None  # vertex snapshot at build time
    stats: QueryStats = field(default_factory=QueryStats)

    @property
    def num_faces(self) -> int:
        return len(self.perm)

    @property
    def leaves(self) -> np.ndarray:
        return np.nonzero(self.node_left < 0)[0]

    def node_boxes(self) -> tuple[np.ndarray, np.ndarray]:
        """Effective boxes including the current inflation slack."""
        if self.inflation == 0.0:
            return self.node_min, self.node_max
        return self.node_min - self.inflation, self.node_max + self.inflation


def build_tree(triangles: np.ndarray, leaf_size: int = DEFAULT_LEAF_SIZE) -> BvhTree:
    """Build over a raw (F, 3, 3) triangle array."""
    triangles = np.asarray(triangles, dtype=np.float64)
    nf = len(triangles)
    if nf == 0:
        raise ValidationError("cannot build a BVH over an empty triangle set")
    if leaf_size < 1:
        raise ValidationError(f"leaf_size must be >= 1, got {leaf_size}")

    tri_min = triangles.min(axis=1)
    tri_max = triangles.max(axis=1)
    centers = 0.5 * (tri_min + tri_max)

    perm = np.arange(nf, dtype=np.int64)
    mins, maxs, starts, ends, lefts, rights = [], [], [], [], [], []

    def alloc(s, e):
        mins.append(tri_min[perm[s:e]].min(axis=0))
        maxs.append(tri_max[perm[s:e]].max(axis=0))
        starts.append(s)
        ends.append(e)
        lefts.append(-1)
        rights.append(-1)
        return len(starts) - 1

    # explicit stack of node ids; children are allocated when their parent
    # splits, so the root sits at index 0
    stack = [alloc(0, nf)]
    while stack:
        node = stack.pop()
        s, e = starts[node], ends[node]
        count = e - s
        if count <= leaf_size:
            # keep leaf triangles ascending by face id so the first-minimum
            # kernel resolves distance ties to the lowest face index
            perm[s:e] = np.sort(perm[s:e])
            continue
        axis = int(np.argmax(maxs[node] - mins[node]))
        keys = centers[perm[s:e], axis]
        mid = count // 2
        # median partition; when all centers are equal this still splits the
        # range at the midpoint, which is the degenerate-node rule
        perm[s:e] = perm[s:e][np.argpartition(keys, mid)]
        left = alloc(s, s + mid)
        right = alloc(s + mid, e)
        lefts[node] = left
        rights[node] = right
        stack.append(right)
        stack.append(left)

    return BvhTree(
        node_min=np.array(mins),
        node_max=np.array(maxs),
        node_start=np.array(starts, dtype=np.int64),
        node_end=np.array(ends, dtype=np.int64),
        node_left=np.array(lefts, dtype=np.int64),
        node_right=np.array(rights, dtype=np.int64),
        perm=perm,
        leaf_size=leaf_size,
    )


def build(mesh: TriangleMesh, leaf_size: int = DEFAULT_LEAF_SIZE) -> BvhTree:
    tree = build_tree(mesh.triangles, leaf_size)
    tree.build_positions = mesh.vertices.copy()
    return tree


def refit_rigid(
    tree: BvhTree, transform: ScaledRigidTransform, pivot: np.ndarray
) -> BvhTree:
    """Conservative refit: box centers move rigidly, half-extents inflate to
    the isotropic bound s * sqrt(3) * max half-extent, which contains the
    rotated box for any rotation."""
    centers = 0.5 * (tree.node_min + tree.node_max)
    half = 0.5 * (tree.node_max - tree.node_min) + tree.inflation
    new_centers = apply(transform, centers, pivot)
    radius = transform.s * np.sqrt(3.0) * half.max(axis=1, keepdims=True)
    new_half = np.broadcast_to(radius, half.shape)
    return replace(
        tree,
        node_min=new_centers - new_half,
        node_max=new_centers + new_half,
        inflation=0.0,
        build_positions=None,
        stats=tree.stats,
    )


def maybe_rebuild(
    tree: BvhTree,
    deformed_mesh: TriangleMesh,
    iteration: int,
    cycle: int = DEFAULT_REBUILD_CYCLE,
) -> BvhTree:
    """Rebuild every ``cycle`` iterations; in between, inflate all boxes by
    the maximum vertex displacement since the last rebuild so queries stay
    conservative."""
    if cycle < 1:
        raise ValidationError(f"rebuild cycle must be >= 1, got {cycle}")
    if iteration % cycle == 0:
        fresh = build(deformed_mesh, tree.leaf_size)
        fresh.generation = tree.generation + 1
        fresh.stats = tree.stats
        return fresh
    if tree.build_positions is None:
        raise ValidationError("tree has no build snapshot; rebuild it first")
    displacement = float(
        np.sqrt(((deformed_mesh.vertices - tree.build_positions) ** 2).sum(axis=1).max())
    )
    return replace(tree, inflation=displacement, stats=tree.stats)


def _aabb_dist2(
    queries: np.ndarray, box_min: np.ndarray, box_max: np.ndarray
) -> np.ndarray:
    """Squared distance from each query to each box. Broadcasts (Q, 3) against
    (3,) or (L, 3)."""
    if box_min.ndim == 1:
        lo = box_min - queries
        hi = queries - box_max
    else:
        lo = box_min[None, :, :] - queries[:, None, :]
        hi = queries[:, None, :] - box_max[None, :, :]
    d = np.maximum(np.maximum(lo, hi), 0.0)
    return np.einsum("...i,...i->...", d, d)


def batch_closest(
    tree: BvhTree,
    triangles: np.ndarray,
    queries: np.ndarray,
    cutoff: float = np.inf,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closest surface point per query, exact below ``cutoff``.

    ``triangles`` is the (F, 3, 3) array matching the tree's current boxes
    (transformed / deformed positions in original face order). Returns
    (distance, closest point, face index); queries whose true distance is
    >= cutoff get (inf, nan, -1). Ties in distance resolve to the lowest
    face index.
    """
    queries = np.asarray(queries, dtype=np.float64)
    nq = len(queries)
    best_d2 = np.full(nq, np.inf)
    best_face = np.full(nq, -1, dtype=np.int64)
    best_point = np.full((nq, 3), np.nan)
    if nq == 0:
        return np.full(0, np.inf), best_point, best_face
    cutoff2 = cutoff * cutoff if np.isfinite(cutoff) else np.inf
    box_min, box_max = tree.node_boxes()

    def evaluate_leaf(node: int, idx: np.ndarray) -> None:
        s, e = tree.node_start[node], tree.node_end[node]
        local_faces = tree.perm[s:e]
        d2, li, pts = closest_point_batch(queries[idx], triangles[local_faces])
        tree.stats.point_triangle_evals += len(idx) * (e - s)
        faces = local_faces[li]
        better = (d2 < best_d2[idx]) | ((d2 == best_d2[idx]) & (faces < best_face[idx]))
        rows = idx[better]
        best_d2[rows] = d2[better]
        best_face[rows] = faces[better]
        best_point[rows] = pts[better]

    # seed pass: evaluate each query's nearest leaf first so the later
    # traversal prunes aggressively
    leaves = tree.leaves
    leaf_bounds = _aabb_dist2(queries, box_min[leaves], box_max[leaves])
    seed = np.argmin(leaf_bounds, axis=1)
    seed_ok = leaf_bounds[np.arange(nq), seed] < cutoff2
    for j in np.unique(seed[seed_ok]):
        idx = np.nonzero(seed_ok & (seed == j))[0]
        tree.stats.nodes_visited += 1
        evaluate_leaf(int(leaves[j]), idx)

    stack: list[tuple[int, np.ndarray]] = [(0, np.arange(nq))]
    while stack:
        node, idx = stack.pop()
        tree.stats.nodes_visited += 1
        d2b = _aabb_dist2(queries[idx], box_min[node], box_max[node])
        keep = (d2b <= best_d2[idx]) & (d2b < cutoff2)
        idx = idx[keep]
        if len(idx) == 0:
            continue
        left = tree.node_left[node]
        if left < 0:
            evaluate_leaf(node, idx)
            continue
        right = tree.node_right[node]
        # visit the child nearer to the active queries first
        mid = queries[idx].mean(axis=0)
        dl = _aabb_dist2(mid[None, :], box_min[left], box_max[left])[0]
        dr = _aabb_dist2(mid[None, :], box_min[right], box_max[right])[0]
        if dl <= dr:
            stack.append((int(right), idx))
            stack.append((int(left), idx))
        else:
            stack.append((int(left), idx))
            stack.append((int(right), idx))

    dist = np.sqrt(best_d2)
    miss = ~(dist < cutoff)
    dist[miss] = np.inf
    best_face[miss] = -1
    best_point[miss] = np.nan
    return dist, best_point, best_face
