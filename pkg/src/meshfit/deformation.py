"""Elastic deformation through a per-face Jacobian field.

Vertex positions are never free variables: they are recovered from the
field by an area-weighted least-squares solve against per-face gradients
(prefactored once), so the optimization landscape is the composition of the
losses with that linear solve. Gradients chain back through the solve by a
single adjoint backsolve per coordinate.

The per-face gradient completes the rest triangle's edge pair with its unit
normal, so the identity field reproduces the rest pose exactly and constant
rotation / uniform scale fields reproduce the rigidly moved rest pose.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from . import bvh
from .collision import mesh_intersects
from .energies import (
    BARRIER_WIDTH,
    DEFORM_PROXIMITY_THRESHOLD,
    MaterialParams,
    Surface,
    barrier_loss,
    lame_from_material,
    neo_hookean,
    proximity_loss,
)
from .errors import ContractViolationError, InversionError, ValidationError
from .mesh import TriangleMesh
from .scene import Scene

_MIN_STEP = 1e-12
_ADAM_EPS = 1e-8
_DET_FLOOR = 1e-9


def identity_field(num_faces: int) -> np.ndarray:
    return np.broadcast_to(np.eye(3), (num_faces, 3, 3)).copy()


@dataclass
class DeformationConfig:
    lambda_e: float | None = None  # None: comparability default, see resolve_lambda_e
    max_iterations: int = 200
    step_size: float = 0.01
    rebuild_cycle: int = bvh.DEFAULT_REBUILD_CYCLE
    proximity_threshold: float = DEFORM_PROXIMITY_THRESHOLD
    barrier_width: float = BARRIER_WIDTH
    beta1: float = 0.9
    beta2: float = 0.999
    convergence_tol: float = 1e-7
    backtrack_factor: float = 0.5

    def __post_init__(self):
        if self.rebuild_cycle < 1:
            raise ValidationError("rebuild_cycle must be >= 1")
        if self.max_iterations < 0:
            raise ValidationError("max_iterations must be >= 0")


def resolve_lambda_e(config: DeformationConfig, rest: TriangleMesh) -> float:
    """Default elastic weight: scaled so that, for the softest admissible
    material, the elastic term at one percent uniform strain is comparable
    to the proximity loss at mask-threshold-sized offsets. Material choice
    then shifts the balance by the actual stiffness ratio."""
    if config.lambda_e is not None:
        return float(config.lambda_e)
    reference = lame_from_material(1000.0, 0.3)
    per_face, _ = neo_hookean(identity_field(1) * 1.01, reference)
    proximity_scale = rest.num_vertices * config.proximity_threshold**2
    return proximity_scale / (rest.num_faces * per_face)


class GradientOperator:
    """Linear map between vertex positions and per-face 3x3 Jacobians, plus
    the prefactored least-squares inverse with per-component centroids
    pinned to the rest pose."""

    def __init__(self, rest: TriangleMesh):
        self.rest = rest
        verts = rest.vertices
        faces = rest.faces
        nf = rest.num_faces
        nv = rest.num_vertices

        e1 = verts[faces[:, 1]] - verts[faces[:, 0]]
        e2 = verts[faces[:, 2]] - verts[faces[:, 0]]
        normals = rest.face_normals
        frames = np.stack([e1, e2, normals], axis=2)  # columns (e1, e2, n)
        self.inverse_frames = np.linalg.inv(frames)  # (F, 3, 3)
        self.normals = normals
        self.areas = rest.face_areas

        # rows 3f+j of G express column j of the Jacobian's vertex-dependent
        # part as a linear functional of one coordinate of the positions
        b0 = self.inverse_frames[:, 0, :]  # weight of (t1 - t0) per column j
        b1 = self.inverse_frames[:, 1, :]  # weight of (t2 - t0)
        row_idx = np.repeat(np.arange(3 * nf), 3)
        col_idx = np.repeat(faces, 3, axis=0).ravel()
        data = np.stack([-(b0 + b1), b0, b1], axis=1)  # (F, vertex, j)
        data = data.transpose(0, 2, 1).reshape(-1)  # row-major over (f, j, vertex)
        self.gradient_matrix = sp.csr_matrix(
            (data, (row_idx, col_idx)), shape=(3 * nf, nv)
        )

        # constant part of the Jacobian coming from the rest normal column
        b2 = self.inverse_frames[:, 2, :]
        self.normal_term = normals[:, :, None] * b2[:, None, :]  # (F, k, j)

        weights = np.repeat(self.areas, 3)
        self.weighted = sp.diags(weights) @ self.gradient_matrix  # A G
        normal_eq = self.gradient_matrix.T @ self.weighted  # G^T A G

        adjacency = sp.coo_matrix(
            (
                np.ones(3 * nf),
                (
                    faces[:, [0, 1, 2]].ravel(),
                    faces[:, [1, 2, 0]].ravel(),
                ),
            ),
            shape=(nv, nv),
        )
        n_comp, labels = connected_components(adjacency, directed=False)
        self.component_labels = labels
        self.num_components = n_comp
        counts = np.bincount(labels, minlength=n_comp)
        constraint = sp.csr_matrix(
            (1.0 / counts[labels], (labels, np.arange(nv))), shape=(n_comp, nv)
        )
        self.rest_centroids = constraint @ verts  # (n_comp, 3)

        system = sp.bmat(
            [[normal_eq, constraint.T], [constraint, None]], format="csc"
        )
        self.factor = splu(system)
        self.num_faces = nf
        self.num_vertices = nv

    def jacobians_from_positions(self, positions: np.ndarray) -> np.ndarray:
        m = self.gradient_matrix @ positions  # (3F, 3) columns are coordinates
        return m.reshape(self.num_faces, 3, 3).transpose(0, 2, 1) + self.normal_term

    def solve(self, jacobians: np.ndarray) -> np.ndarray:
        """Exact least-squares positions for a target Jacobian field."""
        target = (jacobians - self.normal_term).transpose(0, 2, 1).reshape(3 * self.num_faces, 3)
        rhs = np.vstack([self.weighted.T @ target, self.rest_centroids])
        solution = self.factor.solve(rhs)
        return solution[: self.num_vertices]

    def adjoint(self, vertex_grads: np.ndarray) -> np.ndarray:
        """Pull a gradient w.r.t. the solved positions back to field space."""
        rhs = np.vstack([vertex_grads, np.zeros((self.num_components, 3))])
        dual = self.factor.solve(rhs)[: self.num_vertices]
        w = self.weighted @ dual  # (3F, 3)
        return w.reshape(self.num_faces, 3, 3).transpose(0, 2, 1)

    def solve_residual(self, jacobians: np.ndarray) -> tuple[float, float]:
        """Normal-equation residual of a solve; the centroid multipliers
        vanish so the unconstrained stationarity must hold."""
        target = (jacobians - self.normal_term).transpose(0, 2, 1).reshape(3 * self.num_faces, 3)
        rhs = self.weighted.T @ target
        positions = self.solve(jacobians)
        lhs = self.gradient_matrix.T @ (self.weighted @ positions)
        return float(np.linalg.norm(lhs - rhs)), float(np.linalg.norm(rhs))


@dataclass
class DeformResult:
    mesh: TriangleMesh
    jacobians: np.ndarray
    final_losses: tuple[float, float, float]  # (proximity, contact, weighted elastic)
    iterations_used: int
    loss_trace: list[float]
    warnings: list[str] = field(default_factory=list)
    barrier_overflows: int = 0


def _inflated(tree: bvh.BvhTree, positions: np.ndarray) -> bvh.BvhTree:
    displacement = float(
        np.sqrt(((positions - tree.build_positions) ** 2).sum(axis=1).max())
    )
    if displacement == 0.0:
        return tree
    return replace(tree, inflation=displacement, stats=tree.stats)


def elastic_deform(
    rest: TriangleMesh,
    scene: Scene,
    material: MaterialParams,
    config: DeformationConfig,
    certify: bool = True,
    extra_gradient_hook=None,
) -> DeformResult:
    """Optimize the Jacobian field under proximity + contact + elasticity.

    ``rest`` is the rigidly placed object; it must be intersection-free when
    ``certify`` is on, and every accepted step is re-verified with the exact
    intersection test. ``extra_gradient_hook(positions) -> (V, 3)`` lets an
    external guidance term inject additional vertex-space gradients; it is
    disabled by default and contributes nothing to the reported losses.
    """
    warnings: list[str] = []
    if config.max_iterations == 0:
        return DeformResult(rest, identity_field(rest.num_faces), (0.0, 0.0, 0.0), 0, [])

    obj_tree = bvh.build(rest, scene.leaf_size)
    if certify:
        verdict = mesh_intersects(
            rest, rest.triangles, obj_tree, scene.base, scene.base_surface.tree
        )
        if verdict.intersecting:
            raise ContractViolationError(
                "elastic deformation requires an intersection-free rest state"
            )

    operator = GradientOperator(rest)
    lambda_e = resolve_lambda_e(config, rest)
    jac = identity_field(rest.num_faces)
    overflow_total = 0

    def losses(jacobians, tree):
        positions = operator.solve(jacobians)
        tree_now = _inflated(tree, positions)
        surface = Surface(tree_now, positions[rest.faces])
        prox = proximity_loss(
            positions,
            rest.faces,
            scene.region_vertices,
            config.proximity_threshold,
            region_surface=scene.region_surface,
            object_surface=surface,
        )
        contact = barrier_loss(
            positions, config.barrier_width, base_surface=scene.base_surface
        )
        elastic, stress = neo_hookean(jacobians, material)
        total = prox.value + contact.value + lambda_e * elastic
        return positions, tree_now, surface, prox, contact, elastic, stress, total

    current = losses(jac, obj_tree)
    m = np.zeros_like(jac)
    v = np.zeros_like(jac)
    trace: list[float] = []

    for it in range(1, config.max_iterations + 1):
        positions, _, _, prox, contact, _, stress, total = current
        overflow_total += contact.overflow_count
        vertex_grads = prox.gradients + contact.gradients
        if extra_gradient_hook is not None:
            vertex_grads = vertex_grads + extra_gradient_hook(positions)
        grad = operator.adjoint(vertex_grads) + lambda_e * stress

        m = config.beta1 * m + (1.0 - config.beta1) * grad
        v = config.beta2 * v + (1.0 - config.beta2) * grad * grad
        m_hat = m / (1.0 - config.beta1**it)
        v_hat = v / (1.0 - config.beta2**it)
        step = -config.step_size * m_hat / (np.sqrt(v_hat) + _ADAM_EPS)

        alpha = 1.0
        accepted = None
        while alpha * np.abs(step).max() >= _MIN_STEP:
            cand = jac + alpha * step
            if np.any(np.linalg.det(cand) <= _DET_FLOOR):
                alpha *= config.backtrack_factor
                continue
            try:
                ev = losses(cand, obj_tree)
            except InversionError:
                alpha *= config.backtrack_factor
                continue
            if ev[-1] > total + 1e-12:
                alpha *= config.backtrack_factor
                continue
            if certify:
                verdict = mesh_intersects(
                    rest, ev[2].triangles, ev[1], scene.base, scene.base_surface.tree
                )
                if verdict.intersecting:
                    alpha *= config.backtrack_factor
                    continue
            accepted = (cand, ev)
            break

        if accepted is None:
            warnings.append(f"deformation step frozen at iteration {it}")
            break
        jac, current = accepted
        trace.append(current[-1])
        if abs(total - current[-1]) <= config.convergence_tol * max(1.0, abs(total)):
            break
        if it % config.rebuild_cycle == 0:
            deformed = rest.replace_vertices(current[0])
            obj_tree = bvh.maybe_rebuild(obj_tree, deformed, it, config.rebuild_cycle)
            current = losses(jac, obj_tree)

    positions, _, _, prox, contact, elastic, _, _ = current
    deformed = rest.replace_vertices(positions)
    if overflow_total:
        warnings.append(f"barrier overflow flagged on {overflow_total} vertex evaluations")
    return DeformResult(
        deformed,
        jac,
        (prox.value, contact.value, lambda_e * elastic),
        len(trace),
        trace,
        warnings,
        barrier_overflows=overflow_total,
    )
