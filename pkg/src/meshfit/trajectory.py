"""Trajectory-based intersection resolution.

When the tight rigid fit interpenetrates the base, candidate detached poses
are drawn from structured distributions around it (rotation perturbations,
translation split along/across the region normal, uniform scale), keeping
only exactly non-intersecting draws and widening the rotation and parallel
spreads each round until enough survive. Interpolating each candidate back
toward the tight fit and keeping the non-intersecting timesteps turns the
"putting it on" motion into a finite search; the winner is the timestep
with the lowest proximity loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .energies import RIGID_PROXIMITY_THRESHOLD, proximity_loss
from .errors import DegenerateRotationError, SamplingError
from .scene import Scene
from .transforms import (
    ScaledRigidTransform,
    rotation_from_6d,
    slerp_transform,
)


@dataclass
class SamplingConfig:
    sigma_rot: float = 0.1
    sigma_perp: float | None = None  # default: 0.05 * region bbox diagonal
    mu_par: float | None = None  # default: transformed object bbox diagonal
    sigma_par: float | None = None  # default: 0.25 * mu_par
    s_min: float | None = None  # default: 0.8 * incoming scale
    s_max: float | None = None  # default: 1.25 * incoming scale
    n_candidates: int = 100
    m_timesteps: int = 25
    escalation_factor: float = 1.5
    max_rounds: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.n_candidates < 1 or self.m_timesteps < 1:
            raise ValueError("need at least one candidate and one timestep")
        if self.escalation_factor <= 1.0:
            raise ValueError("escalation_factor must exceed 1")


@dataclass
class ResolvedSampling:
    sigma_rot: float
    sigma_perp: float
    mu_par: float
    sigma_par: float
    s_min: float
    s_max: float


def resolve_sampling(
    config: SamplingConfig, scene: Scene, start: ScaledRigidTransform
) -> ResolvedSampling:
    """Fill geometry-relative defaults so fixtures of any size behave alike."""
    from .transforms import apply

    verts = apply(start, scene.obj.vertices, scene.pivot)
    obj_diag = float(np.linalg.norm(verts.max(axis=0) - verts.min(axis=0)))
    sigma_perp = config.sigma_perp if config.sigma_perp is not None else 0.05 * scene.frame.bbox_diag
    mu_par = config.mu_par if config.mu_par is not None else obj_diag
    sigma_par = config.sigma_par if config.sigma_par is not None else 0.25 * mu_par
    s_min = config.s_min if config.s_min is not None else 0.8 * start.s
    s_max = config.s_max if config.s_max is not None else 1.25 * start.s
    if not 0 < s_min <= s_max:
        raise ValueError(f"invalid scale bounds [{s_min}, {s_max}]")
    return ResolvedSampling(config.sigma_rot, sigma_perp, mu_par, sigma_par, s_min, s_max)


@dataclass
class SampleStats:
    candidates_tried: int
    rounds: int
    per_round_accepted: list[int]
    round_sigmas_rot: list[float]
    warnings: list[str]


def sample_candidates(
    start: ScaledRigidTransform,
    config: SamplingConfig,
    scene: Scene,
) -> tuple[list[ScaledRigidTransform], SampleStats]:
    """Draw non-intersecting candidate poses around ``start``.

    Each round draws ``n_candidates`` fresh poses; rotation and parallel
    spreads are multiplied by the escalation factor after every round that
    leaves the quota unfilled.
    """
    resolved = resolve_sampling(config, scene, start)
    rng = np.random.default_rng(config.seed)
    normal = scene.frame.average_normal
    rotation0 = start.rotation

    accepted: list[ScaledRigidTransform] = []
    tried = 0
    rounds = 0
    sigma_rot = resolved.sigma_rot
    sigma_par = resolved.sigma_par
    per_round: list[int] = []
    sigmas: list[float] = []
    warnings: list[str] = []

    while len(accepted) < config.n_candidates and rounds < config.max_rounds:
        rounds += 1
        sigmas.append(sigma_rot)
        found_this_round = 0
        for _ in range(config.n_candidates):
            e1 = np.array([1.0, 0.0, 0.0]) + rng.normal(0.0, sigma_rot, 3)
            e2 = np.array([0.0, 1.0, 0.0]) + rng.normal(0.0, sigma_rot, 3)
            perp = rng.normal(0.0, resolved.sigma_perp, 3)
            par = rng.normal(resolved.mu_par, sigma_par)
            scale = rng.uniform(resolved.s_min, resolved.s_max)
            tried += 1
            try:
                perturbation = rotation_from_6d(e1, e2)
            except DegenerateRotationError:
                continue
            rotation = rotation0 @ perturbation
            perp = perp - (perp @ normal) * normal
            translation = start.t + perp + par * normal
            candidate = ScaledRigidTransform.from_rotation(rotation, translation, scale)
            if len(accepted) < config.n_candidates and not scene.intersection(
                candidate
            ).intersecting:
                accepted.append(candidate)
                found_this_round += 1
        per_round.append(found_this_round)
        sigma_rot *= config.escalation_factor
        sigma_par *= config.escalation_factor

    if not accepted:
        raise SamplingError(
            "no non-intersecting candidate found after "
            f"{rounds} rounds; increase the parallel offset (mu_par)"
        )
    if len(accepted) < config.n_candidates:
        warnings.append(
            f"only {len(accepted)}/{config.n_candidates} candidates found "
            f"after {rounds} rounds; proceeding with the partial set"
        )
    return accepted, SampleStats(tried, rounds, per_round, sigmas, warnings)


@dataclass
class TimestepRecord:
    candidate: int
    u: float
    proximity: float


@dataclass
class TrajectoryResult:
    transform: ScaledRigidTransform  # certified non-intersecting
    candidates_tried: int
    rounds: int
    accepted_timesteps: int
    best_loss: float
    records: list[TimestepRecord] = field(default_factory=list)
    per_round_accepted: list[int] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def _proximity_value(scene: Scene, transform: ScaledRigidTransform, threshold: float) -> float:
    verts, surface = scene.transformed_object(transform)
    return proximity_loss(
        verts,
        scene.obj.faces,
        scene.region_vertices,
        threshold,
        region_surface=scene.region_surface,
        object_surface=surface,
    ).value


def resolve_intersections(
    tight: ScaledRigidTransform,
    config: SamplingConfig,
    scene: Scene,
    threshold: float = RIGID_PROXIMITY_THRESHOLD,
) -> TrajectoryResult:
    """Pick the lowest-proximity non-intersecting timestep over all candidate
    trajectories into the (possibly intersecting) tight fit.

    A tight fit that is already clean short-circuits to itself. Ties break
    to the lower candidate index, then the later timestep.
    """
    if not scene.intersection(tight).intersecting:
        return TrajectoryResult(
            tight.copy(), 0, 0, 0, _proximity_value(scene, tight, threshold)
        )

    candidates, stats = sample_candidates(tight, config, scene)
    records: list[TimestepRecord] = []
    best: TimestepRecord | None = None
    best_transform: ScaledRigidTransform | None = None
    m = config.m_timesteps

    for index, candidate in enumerate(candidates):
        for k in range(m):
            u = k / (m - 1) if m > 1 else 0.0
            pose = slerp_transform(candidate, tight, u)
            if scene.intersection(pose).intersecting:
                continue
            value = _proximity_value(scene, pose, threshold)
            record = TimestepRecord(index, u, value)
            records.append(record)
            if (
                best is None
                or value < best.proximity
                or (value == best.proximity and index == best.candidate and u > best.u)
            ):
                best = record
                best_transform = pose

    if best is None or best_transform is None:
        raise SamplingError("every sampled trajectory timestep intersects the base")
    return TrajectoryResult(
        best_transform,
        stats.candidates_tried,
        stats.rounds,
        len(records),
        best.proximity,
        records=records,
        per_round_accepted=stats.per_round_accepted,
        warnings=stats.warnings,
    )
