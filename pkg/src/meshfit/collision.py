"""Mesh-level intersection verdicts and penetration statistics.

Broad phase walks two BVHs in lockstep and filters with exact per-triangle
boxes at the leaves; the narrow phase is the exact segment/triangle overlap
test. Full containment (one mesh swallowed by the other) is caught with a
parity ray cast, which only applies to watertight targets since an open
surface cannot contain anything.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bvh import BvhTree, batch_closest, build_tree
from .geometry import points_inside_mesh, triangles_intersect
from .mesh import TriangleMesh

CONTACT_TOL = 1e-9


@dataclass
class IntersectionVerdict:
    intersecting: bool
    intersecting_face_pairs: np.ndarray  # (K, 2) of (object face, base face)
    contained: bool


def _boxes_overlap(amin, amax, bmin, bmax, tol: float) -> bool:
    return bool(
        np.all(amin <= bmax + tol) and np.all(bmin <= amax + tol)
    )


def collect_intersecting_pairs(
    tree_a: BvhTree,
    tris_a: np.ndarray,
    tree_b: BvhTree,
    tris_b: np.ndarray,
    find_all: bool = True,
    tol: float = CONTACT_TOL,
) -> np.ndarray:
    """Exact triangle-triangle intersection pairs between two meshes.

    With ``find_all`` false, returns after the first hit (cheap yes/no).
    """
    amin, amax = tree_a.node_boxes()
    bmin, bmax = tree_b.node_boxes()
    a_tri_min = tris_a.min(axis=1) - tol
    a_tri_max = tris_a.max(axis=1) + tol
    b_tri_min = tris_b.min(axis=1) - tol
    b_tri_max = tris_b.max(axis=1) + tol

    pairs: list[np.ndarray] = []
    stack = [(0, 0)]
    while stack:
        na, nb = stack.pop()
        if not _boxes_overlap(amin[na], amax[na], bmin[nb], bmax[nb], tol):
            continue
        a_leaf = tree_a.node_left[na] < 0
        b_leaf = tree_b.node_left[nb] < 0
        if a_leaf and b_leaf:
            fa = tree_a.perm[tree_a.node_start[na] : tree_a.node_end[na]]
            fb = tree_b.perm[tree_b.node_start[nb] : tree_b.node_end[nb]]
            overlap = (
                (a_tri_min[fa][:, None, :] <= b_tri_max[fb][None, :, :])
                & (b_tri_min[fb][None, :, :] <= a_tri_max[fa][None, :, :])
            ).all(axis=2)
            ia, ib = np.nonzero(overlap)
            if len(ia) == 0:
                continue
            cand_a = fa[ia]
            cand_b = fb[ib]
            hit = triangles_intersect(tris_a[cand_a], tris_b[cand_b], tol)
            if np.any(hit):
                found = np.stack([cand_a[hit], cand_b[hit]], axis=1)
                pairs.append(found)
                if not find_all:
                    return found[:1]
        elif b_leaf or (
            not a_leaf
            and (amax[na] - amin[na]).max() >= (bmax[nb] - bmin[nb]).max()
        ):
            stack.append((int(tree_a.node_right[na]), nb))
            stack.append((int(tree_a.node_left[na]), nb))
        else:
            stack.append((na, int(tree_b.node_right[nb])))
            stack.append((na, int(tree_b.node_left[nb])))

    if not pairs:
        return np.zeros((0, 2), dtype=np.int64)
    return np.concatenate(pairs, axis=0)


def mesh_intersects(
    obj_mesh: TriangleMesh,
    obj_triangles: np.ndarray,
    obj_tree: BvhTree,
    base_mesh: TriangleMesh,
    base_tree: BvhTree,
    find_all: bool = False,
    tol: float = CONTACT_TOL,
) -> IntersectionVerdict:
    """Exact intersection verdict between the (transformed) object and base.

    ``obj_triangles`` carries the object's current vertex positions in face
    order; ``obj_tree`` must be a conservative tree over those positions.
    """
    pairs = collect_intersecting_pairs(
        obj_tree, obj_triangles, base_tree, base_mesh.triangles, find_all=find_all, tol=tol
    )
    if len(pairs):
        return IntersectionVerdict(True, pairs, False)

    contained = False
    if base_mesh.is_watertight():
        probe = obj_triangles[0, 0][None, :]
        contained = bool(points_inside_mesh(probe, base_mesh.triangles)[0])
    if not contained and obj_mesh.is_watertight():
        probe = base_mesh.vertices[0][None, :]
        contained = bool(points_inside_mesh(probe, obj_triangles)[0])
    return IntersectionVerdict(contained, pairs, contained)


def penetration_stats(
    obj_mesh: TriangleMesh,
    obj_vertices: np.ndarray,
    base_mesh: TriangleMesh,
    base_tree: BvhTree,
    obj_tree: BvhTree | None = None,
) -> tuple[int, float]:
    """Report-grade metrics: distinct intersecting object faces, and the
    maximum unsigned distance to the base surface over object vertices that
    the parity test classifies as inside the base. (0, 0.0) iff clean."""
    obj_triangles = obj_vertices[obj_mesh.faces]
    if obj_tree is None:
        obj_tree = build_tree(obj_triangles, leaf_size=max(1, len(obj_triangles)))
    pairs = collect_intersecting_pairs(
        obj_tree, obj_triangles, base_tree, base_mesh.triangles, find_all=True
    )
    face_count = int(len(np.unique(pairs[:, 0]))) if len(pairs) else 0

    inside = points_inside_mesh(obj_vertices, base_mesh.triangles)
    if not np.any(inside):
        return face_count, 0.0
    dist, _, _ = batch_closest(base_tree, base_mesh.triangles, obj_vertices[inside])
    return face_count, float(dist.max())
