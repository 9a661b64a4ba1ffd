"""Gradient-based rigid pose optimization.

Two entry points: :func:`tight_fit` pulls the object onto the fit region
minimizing the proximity loss alone (intersections permitted), and
:func:`rigid_finetune` minimizes proximity plus the contact barrier while
rejecting any step that would create an actual intersection, so its result
is certified intersection-free by the exact test rather than the barrier
proxy.

Pose parameters are theta = (e1, e2, t, log s); scale lives in log space so
positivity is structural and user bounds become simple clamps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .energies import (
    BARRIER_WIDTH,
    RIGID_PROXIMITY_THRESHOLD,
    barrier_loss,
    proximity_loss,
)
from .errors import ContractViolationError, DegenerateRotationError
from .scene import Scene
from .transforms import ScaledRigidTransform, rotation_6d_gradient, rotation_from_6d

_MIN_STEP = 1e-12
_ADAM_EPS = 1e-8


@dataclass
class OptimizerConfig:
    step_size: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    max_iterations: int = 500
    convergence_tol: float = 1e-7
    backtrack_factor: float = 0.5
    seed: int = 0
    scale_min: float | None = None
    scale_max: float | None = None

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if not 0.0 < self.backtrack_factor < 1.0:
            raise ValueError("backtrack_factor must be in (0, 1)")


@dataclass
class StepResult:
    transform: ScaledRigidTransform
    final_losses: tuple[float, float]  # (proximity, contact barrier)
    iterations_used: int
    loss_trace: list[float]
    warnings: list[str] = field(default_factory=list)
    barrier_overflows: int = 0


def _theta_of(transform: ScaledRigidTransform) -> np.ndarray:
    return np.concatenate(
        [transform.e1, transform.e2, transform.t, [np.log(transform.s)]]
    )


def _transform_of(theta: np.ndarray) -> ScaledRigidTransform:
    return ScaledRigidTransform(theta[0:3], theta[3:6], theta[6:9], float(np.exp(theta[9])))


def _clamp_scale(theta: np.ndarray, config: OptimizerConfig) -> None:
    if config.scale_min is not None:
        theta[9] = max(theta[9], np.log(config.scale_min))
    if config.scale_max is not None:
        theta[9] = min(theta[9], np.log(config.scale_max))


@dataclass
class _Evaluation:
    value: float
    proximity: float
    contact: float
    overflow: int
    has_active: bool
    vertex_grads: np.ndarray
    verts: np.ndarray


class _RigidObjective:
    def __init__(self, scene: Scene, threshold: float, barrier_width: float | None):
        self.scene = scene
        self.threshold = threshold
        self.barrier_width = barrier_width

    def evaluate(self, theta: np.ndarray) -> _Evaluation:
        transform = _transform_of(theta)
        verts, obj_surface = self.scene.transformed_object(transform)
        prox = proximity_loss(
            verts,
            self.scene.obj.faces,
            self.scene.region_vertices,
            self.threshold,
            region_surface=self.scene.region_surface,
            object_surface=obj_surface,
        )
        value = prox.value
        grads = prox.gradients
        contact = 0.0
        overflow = 0
        if self.barrier_width is not None:
            bres = barrier_loss(verts, self.barrier_width, base_surface=self.scene.base_surface)
            value += bres.value
            grads = grads + bres.gradients
            contact = bres.value
            overflow = bres.overflow_count
        has_active = bool(np.any(prox.pairings[0].face >= 0) or np.any(prox.pairings[1].face >= 0))
        return _Evaluation(value, prox.value, contact, overflow, has_active, grads, verts)

    def theta_gradient(self, theta: np.ndarray, ev: _Evaluation) -> np.ndarray:
        """Chain per-vertex gradients through x = s R (p - pivot) + pivot + t."""
        transform = _transform_of(theta)
        rotation = transform.rotation
        rest_offsets = self.scene.obj.vertices - self.scene.pivot
        g = ev.vertex_grads

        grad_t = g.sum(axis=0)
        rotated = rest_offsets @ rotation.T
        grad_log_s = transform.s * float(np.sum(g * rotated))
        grad_rotation = transform.s * (g.T @ rest_offsets)
        grad_e1, grad_e2 = rotation_6d_gradient(transform.e1, transform.e2, grad_rotation)
        return np.concatenate([grad_e1, grad_e2, grad_t, [grad_log_s]])


def _repair_rotation(theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Re-initialize e2 with a random perturbation orthogonal-ish to e1."""
    theta = theta.copy()
    theta[3:6] = theta[3:6] + rng.normal(0.0, 0.1, 3)
    return theta


def _run(
    objective: _RigidObjective,
    theta0: np.ndarray,
    config: OptimizerConfig,
    certify: bool,
) -> tuple[np.ndarray, list[float], list[str], int]:
    rng = np.random.default_rng(config.seed)
    theta = theta0.copy()
    for _ in range(8):
        try:
            current = objective.evaluate(theta)
            break
        except DegenerateRotationError:
            theta = _repair_rotation(theta, rng)
    else:
        raise DegenerateRotationError("could not repair degenerate rotation parameters")

    warnings: list[str] = []
    overflows = current.overflow
    trace: list[float] = []
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)

    for it in range(1, config.max_iterations + 1):
        grad = objective.theta_gradient(theta, current)
        m = config.beta1 * m + (1.0 - config.beta1) * grad
        v = config.beta2 * v + (1.0 - config.beta2) * grad * grad
        m_hat = m / (1.0 - config.beta1**it)
        v_hat = v / (1.0 - config.beta2**it)
        step = -config.step_size * m_hat / (np.sqrt(v_hat) + _ADAM_EPS)

        alpha = 1.0
        accepted = None
        while alpha * np.abs(step).max() >= _MIN_STEP:
            cand = theta + alpha * step
            _clamp_scale(cand, config)
            try:
                ev = objective.evaluate(cand)
            except DegenerateRotationError:
                cand = _repair_rotation(cand, rng)
                try:
                    ev = objective.evaluate(cand)
                except DegenerateRotationError:
                    alpha *= config.backtrack_factor
                    continue
            if ev.value <= current.value + 1e-12 and (
                not certify
                or not objective.scene.intersection(_transform_of(cand)).intersecting
            ):
                accepted = (cand, ev)
                break
            alpha *= config.backtrack_factor

        if accepted is None:
            # step frozen: no non-increasing (and admissible) step exists
            break
        previous_value = current.value
        theta, current = accepted
        overflows += current.overflow
        trace.append(current.value)
        if abs(previous_value - current.value) <= config.convergence_tol * max(
            1.0, abs(previous_value)
        ):
            break

    return theta, trace, warnings, overflows


def tight_fit(
    initial: ScaledRigidTransform,
    scene: Scene,
    config: OptimizerConfig,
    threshold: float = RIGID_PROXIMITY_THRESHOLD,
    barrier_width: float = BARRIER_WIDTH,
) -> StepResult:
    """Minimize the proximity loss over the pose; intersections permitted.

    If every correspondence is masked at the start (object too far from the
    region), the object is first snapped to hover above the region centroid
    along its average normal, then optimized.
    """
    objective = _RigidObjective(scene, threshold, barrier_width=None)
    theta = _theta_of(initial)
    warnings: list[str] = []

    start = objective.evaluate(theta)
    if not start.has_active:
        frame = scene.frame
        theta = theta.copy()
        theta[6:9] = (
            frame.centroid + frame.average_normal * frame.bbox_diag - scene.pivot
        )
        warnings.append(
            "object farther than the mask threshold from the region; "
            "snapped above the region centroid before optimizing"
        )
        start = objective.evaluate(theta)

    if start.value <= 1e-18 and start.has_active:
        transform = _transform_of(theta)
        contact = barrier_loss(
            start.verts, barrier_width, base_surface=scene.base_surface
        ).value
        return StepResult(transform, (start.value, contact), 0, [], warnings)

    theta, trace, run_warnings, _ = _run(objective, theta, config, certify=False)
    warnings.extend(run_warnings)
    transform = _transform_of(theta)
    final = objective.evaluate(theta)
    contact = barrier_loss(final.verts, barrier_width, base_surface=scene.base_surface).value
    return StepResult(transform, (final.proximity, contact), len(trace), trace, warnings)


def rigid_finetune(
    start: ScaledRigidTransform,
    scene: Scene,
    config: OptimizerConfig,
    threshold: float = RIGID_PROXIMITY_THRESHOLD,
    barrier_width: float = BARRIER_WIDTH,
    certify: bool = True,
) -> StepResult:
    """Minimize proximity + contact barrier from a non-intersecting pose.

    Every candidate step is re-checked with the exact intersection test and
    rejected (with backtracking) if it would penetrate, so the returned pose
    is certified intersection-free whenever ``certify`` is on.
    """
    if certify and scene.intersection(start).intersecting:
        raise ContractViolationError(
            "rigid finetune requires a non-intersecting starting pose"
        )
    objective = _RigidObjective(scene, threshold, barrier_width=barrier_width)
    theta = _theta_of(start)
    theta, trace, warnings, overflows = _run(objective, theta, config, certify=certify)
    transform = _transform_of(theta)
    final = objective.evaluate(theta)
    if overflows:
        warnings.append(f"barrier overflow flagged on {overflows} vertex evaluations")
    return StepResult(
        transform,
        (final.proximity, final.contact),
        len(trace),
        trace,
        warnings,
        barrier_overflows=overflows,
    )
