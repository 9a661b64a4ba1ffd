"""Accessory-to-mesh composition: rigid placement, trajectory-based
intersection resolution, barrier-constrained finetuning, and elastic
deformation through a per-face Jacobian field."""

__version__ = "0.1.0"

from .mesh import RegionFrame, RegionMask, TriangleMesh, load_mesh, load_region, region_frame, save_mesh
from .transforms import ScaledRigidTransform

__all__ = [
    "RegionFrame",
    "RegionMask",
    "ScaledRigidTransform",
    "TriangleMesh",
    "load_mesh",
    "load_region",
    "region_frame",
    "save_mesh",
]
