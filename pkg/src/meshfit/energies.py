"""Scalar loss terms and their analytic gradients.

All losses are written against a *pairing*: the set of closest-point
correspondences at the current configuration. During optimization pairings
are recomputed every iteration and the gradients treat the paired point (or
its barycentric weights) as fixed, which is the envelope gradient of the
underlying min-over-faces distance. Finite-difference checks evaluate the
same losses with an explicitly frozen pairing, where the analytic gradients
are exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bvh import BvhTree, batch_closest
from .errors import InversionError, ValidationError
from .geometry import barycentric_coordinates

MIN_YOUNGS_MODULUS = 1000.0
RIGID_PROXIMITY_THRESHOLD = 0.5
DEFORM_PROXIMITY_THRESHOLD = 0.01
BARRIER_WIDTH = 0.01


@dataclass
class ProximityConfig:
    mask_threshold: float = RIGID_PROXIMITY_THRESHOLD
    repair_each_iteration: bool = True

    def __post_init__(self):
        if self.mask_threshold <= 0:
            raise ValidationError("mask threshold must be positive")


@dataclass
class BarrierConfig:
    width: float = BARRIER_WIDTH

    def __post_init__(self):
        if self.width <= 0:
            raise ValidationError("barrier width must be positive")


@dataclass(frozen=True)
class Surface:
    """A queryable surface: a BVH plus the triangle positions its boxes cover."""

    tree: BvhTree
    triangles: np.ndarray  # (F, 3, 3)


@dataclass
class SurfacePairing:
    """Closest-point correspondences for a batch of query points.

    ``face`` is -1 where the query was farther than the pairing cutoff; such
    entries are masked out of every loss.
    """

    distance: np.ndarray  # (Q,)
    face: np.ndarray  # (Q,) int
    point: np.ndarray  # (Q, 3)
    bary: np.ndarray  # (Q, 3) weights of point in its face


def pair_to_surface(points: np.ndarray, surface: Surface, cutoff: float) -> SurfacePairing:
    dist, closest, face = batch_closest(surface.tree, surface.triangles, points, cutoff)
    bary = np.zeros((len(points), 3))
    valid = face >= 0
    if np.any(valid):
        bary[valid] = barycentric_coordinates(closest[valid], surface.triangles[face[valid]])
    return SurfacePairing(dist, face, closest, bary)


def masked_distance(
    query: np.ndarray, surface: Surface, threshold: float
) -> tuple[float, np.ndarray]:
    """Distance to the surface, zeroed at or beyond ``threshold``.

    The gradient is the unit vector from the closest surface point to the
    query; zero when masked or when the query sits on the surface.
    """
    if threshold <= 0:
        raise ValidationError("mask threshold must be positive")
    query = np.asarray(query, dtype=np.float64)
    dist, closest, face = batch_closest(surface.tree, surface.triangles, query[None, :], threshold)
    if face[0] < 0 or dist[0] < 1e-12:
        return 0.0 if face[0] < 0 else float(dist[0]), np.zeros(3)
    return float(dist[0]), (query - closest[0]) / dist[0]


@dataclass
class ProximityResult:
    value: float
    gradients: np.ndarray  # (V, 3) w.r.t. the object vertex positions
    pairings: tuple[SurfacePairing, SurfacePairing]


def proximity_loss(
    obj_vertices: np.ndarray,
    obj_faces: np.ndarray,
    region_vertices: np.ndarray,
    threshold: float,
    region_surface: Surface | None = None,
    object_surface: Surface | None = None,
    pairings: tuple[SurfacePairing, SurfacePairing] | None = None,
) -> ProximityResult:
    """Two-sided sum of squared masked distances.

    Side 1 pairs each object vertex with the fit region; side 2 pairs each
    region vertex with the (moving) object surface and transports its
    gradient to the object vertices through the closest triangle's
    barycentric weights. Pass ``pairings`` to evaluate with frozen
    correspondences instead of re-pairing.
    """
    if pairings is None:
        if region_surface is None or object_surface is None:
            raise ValidationError("need surfaces to compute fresh pairings")
        pairings = (
            pair_to_surface(obj_vertices, region_surface, threshold),
            pair_to_surface(region_vertices, object_surface, threshold),
        )
    side1, side2 = pairings

    value = 0.0
    grads = np.zeros_like(obj_vertices)

    active = side1.face >= 0
    if np.any(active):
        diff = obj_vertices[active] - side1.point[active]
        value += float(np.sum(diff * diff))
        grads[active] += 2.0 * diff

    active2 = side2.face >= 0
    if np.any(active2):
        faces = obj_faces[side2.face[active2]]  # (K, 3) vertex ids
        weights = side2.bary[active2]  # (K, 3)
        corners = obj_vertices[faces]  # (K, 3, 3)
        closest = np.einsum("kc,kcj->kj", weights, corners)
        diff = closest - region_vertices[active2]
        value += float(np.sum(diff * diff))
        contrib = 2.0 * weights[:, :, None] * diff[:, None, :]  # (K, 3, 3)
        np.add.at(grads, faces.ravel(), contrib.reshape(-1, 3))

    return ProximityResult(value, grads, pairings)


def barrier(x, width: float):
    """Log-barrier energy, C2 at the boundary x = width, zero beyond it.

    Accepts scalars or arrays; non-positive inputs are clamped to 1e-9 (the
    caller records the overflow). Returns (value, derivative).
    """
    if width <= 0:
        raise ValidationError("barrier width must be positive")
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 0
    x = np.atleast_1d(x).copy()
    x[x <= 0] = 1e-9
    value = np.zeros_like(x)
    deriv = np.zeros_like(x)
    inside = x < width
    if np.any(inside):
        xi = x[inside]
        gap = xi - width
        log_ratio = np.log(xi / width)
        value[inside] = -gap * gap * log_ratio
        deriv[inside] = -2.0 * gap * log_ratio - gap * gap / xi
    if scalar:
        return float(value[0]), float(deriv[0])
    return value, deriv


@dataclass
class BarrierResult:
    value: float
    gradients: np.ndarray  # (V, 3)
    overflow_count: int  # vertices at non-positive distance (intersecting state)
    pairing: SurfacePairing


def barrier_loss(
    obj_vertices: np.ndarray,
    width: float,
    base_surface: Surface | None = None,
    pairing: SurfacePairing | None = None,
) -> BarrierResult:
    """Sum of barrier energies over object vertices within ``width`` of the
    full base surface (the near-contact set)."""
    if pairing is None:
        if base_surface is None:
            raise ValidationError("need the base surface to compute a fresh pairing")
        pairing = pair_to_surface(obj_vertices, base_surface, width)

    grads = np.zeros_like(obj_vertices)
    active = pairing.face >= 0
    if not np.any(active):
        return BarrierResult(0.0, grads, 0, pairing)

    diff = obj_vertices[active] - pairing.point[active]
    dist = np.sqrt(np.sum(diff * diff, axis=1))
    overflow = int(np.sum(dist <= 0))
    values, derivs = barrier(dist, width)
    safe = np.where(dist > 0, dist, 1.0)
    grads[active] = (derivs / safe)[:, None] * diff
    return BarrierResult(float(values.sum()), grads, overflow, pairing)


@dataclass
class MaterialParams:
    youngs_modulus: float
    poisson_ratio: float
    mu: float
    lam: float


def lame_from_material(youngs: float, poisson: float) -> MaterialParams:
    """Convert (E, nu) to Lame parameters, clamping E to the stability floor."""
    if not 0.0 <= poisson < 0.5:
        raise ValidationError(f"poisson ratio must be in [0, 0.5), got {poisson}")
    e = max(float(youngs), MIN_YOUNGS_MODULUS)
    mu = e / (2.0 * (1.0 + poisson))
    lam = e * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson))
    return MaterialParams(e, float(poisson), mu, lam)


def neo_hookean(field: np.ndarray, material: MaterialParams) -> tuple[float, np.ndarray]:
    """NeoHookean elastic energy of a per-face Jacobian field.

    The gradient is the first Piola-Kirchhoff stress per face. Raises
    InversionError when any determinant drops to or below 1e-9 so the
    optimizer can backtrack the offending step.
    """
    field = np.asarray(field, dtype=np.float64)
    dets = np.linalg.det(field)
    bad = dets <= 1e-9
    if np.any(bad):
        face = int(np.nonzero(bad)[0][0])
        raise InversionError(face, float(dets[face]))
    mu, lam = material.mu, material.lam
    log_dets = np.log(dets)
    traces = np.einsum("fij,fij->f", field, field)
    value = float(
        np.sum(0.5 * mu * (traces - 3.0) - mu * log_dets + 0.5 * lam * log_dets**2)
    )
    inv_t = np.linalg.inv(field).transpose(0, 2, 1)
    grads = mu * (field - inv_t) + lam * log_dets[:, None, None] * inv_t
    return value, grads


_MATERIAL_TABLE: dict[str, tuple[float, float]] | None = None


def load_material_table(path=None) -> dict[str, tuple[float, float]]:
    """Name -> (E, nu) table from a TOML file; defaults ship with the package."""
    try:
        import tomllib
    except ModuleNotFoundError:  # Python 3.10
        import tomli as tomllib
    if path is None:
        path = Path(__file__).parent / "data" / "materials.toml"
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    table = {}
    for name, entry in raw.items():
        table[name] = (float(entry["youngs"]), float(entry["poisson"]))
    return table


def material_by_name(name: str) -> MaterialParams:
    global _MATERIAL_TABLE
    if _MATERIAL_TABLE is None:
        _MATERIAL_TABLE = load_material_table()
    if name not in _MATERIAL_TABLE:
        known = ", ".join(sorted(_MATERIAL_TABLE))
        raise ValidationError(f"unknown material {name!r} (known: {known})")
    youngs, poisson = _MATERIAL_TABLE[name]
    return lame_from_material(youngs, poisson)
