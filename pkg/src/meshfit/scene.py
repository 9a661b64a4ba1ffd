"""Shared read-only scene state for the fitting stages.

Everything here is built once per run in normalized coordinates (base mesh
bounding-box diagonal = 1) and treated as immutable afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bvh
from .collision import IntersectionVerdict, mesh_intersects
from .energies import Surface
from .mesh import RegionFrame, RegionMask, TriangleMesh, region_frame
from .transforms import ScaledRigidTransform, apply


@dataclass(frozen=True)
class Scene:
    base: TriangleMesh
    mask: RegionMask
    frame: RegionFrame
    obj: TriangleMesh  # rest object (untransformed, normalized scale)
    pivot: np.ndarray  # object centroid, fixed for the whole run
    base_surface: Surface  # full base mesh
    region_surface: Surface  # masked faces only
    obj_tree: bvh.BvhTree  # over the rest object; refit per transform
    region_vertices: np.ndarray  # coordinates of the masked faces' vertices
    leaf_size: int

    def transformed_object(self, transform: ScaledRigidTransform) -> tuple[np.ndarray, Surface]:
        """Object vertex positions and a queryable surface under a transform."""
        verts = apply(transform, self.obj.vertices, self.pivot)
        tree = bvh.refit_rigid(self.obj_tree, transform, self.pivot)
        return verts, Surface(tree, verts[self.obj.faces])

    def intersection(
        self, transform: ScaledRigidTransform, find_all: bool = False
    ) -> IntersectionVerdict:
        verts, surface = self.transformed_object(transform)
        return mesh_intersects(
            self.obj, surface.triangles, surface.tree, self.base, self.base_surface.tree,
            find_all=find_all,
        )


def build_scene(
    base: TriangleMesh,
    obj: TriangleMesh,
    mask: RegionMask,
    region_normal: np.ndarray | None = None,
    leaf_size: int = bvh.DEFAULT_LEAF_SIZE,
) -> Scene:
    frame = region_frame(base, mask, normal=region_normal)
    base_tree = bvh.build(base, leaf_size)
    region_triangles = base.triangles[mask.face_indices]
    region_tree = bvh.build_tree(region_triangles, leaf_size)
    obj_tree = bvh.build(obj, leaf_size)
    region_vertices = base.vertices[mask.region_vertices(base)]
    return Scene(
        base=base,
        mask=mask,
        frame=frame,
        obj=obj,
        pivot=obj.centroid.copy(),
        base_surface=Surface(base_tree, base.triangles),
        region_surface=Surface(region_tree, region_triangles),
        obj_tree=obj_tree,
        region_vertices=region_vertices,
        leaf_size=leaf_size,
    )
