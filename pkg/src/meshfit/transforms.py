"""Scaled rigid transforms with a continuous 6D rotation parameterization.

A transform is (e1, e2, t, s): two 3-vectors that orthonormalize into a
rotation, a translation and a positive uniform scale. Points map as

    p  ->  s * R (p - pivot) + pivot + t

with a pivot fixed for the whole run (the object's initial centroid), which
decouples rotation from translation during optimization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRotationError


def rotation_from_6d(e1: np.ndarray, e2: np.ndarray) -> np.ndarray:
    """Gram-Schmidt the two parameter vectors into a proper rotation matrix.

    Columns are (r1, r2, r1 x r2). Scale of e1 and any component of e2 along
    e1 are irrelevant, which is what makes the representation continuous.
    """
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    n1 = np.linalg.norm(e1)
    if n1 < 1e-9:
        raise DegenerateRotationError("e1 has near-zero length")
    r1 = e1 / n1
    w = e2 - (e2 @ r1) * r1
    n2 = np.linalg.norm(w)
    if n2 < 1e-9:
        raise DegenerateRotationError("e2 is near-parallel to e1")
    r2 = w / n2
    r3 = np.cross(r1, r2)
    return np.column_stack([r1, r2, r3])


def rotation_6d_gradient(
    e1: np.ndarray, e2: np.ndarray, grad_rotation: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Backpropagate a gradient w.r.t. the rotation matrix to (e1, e2)."""
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    n1 = np.linalg.norm(e1)
    r1 = e1 / n1
    w = e2 - (e2 @ r1) * r1
    n2 = np.linalg.norm(w)
    r2 = w / n2

    g1 = grad_rotation[:, 0]
    g2 = grad_rotation[:, 1]
    g3 = grad_rotation[:, 2]

    # r3 = r1 x r2
    d_r1 = g1 + np.cross(r2, g3)
    d_r2 = g2 + np.cross(g3, r1)
    # r2 = w / |w|
    d_w = (d_r2 - (d_r2 @ r2) * r2) / n2
    # w = e2 - (e2 . r1) r1
    d_e2 = d_w - (d_w @ r1) * r1
    d_r1 = d_r1 - (d_w @ r1) * e2 - (e2 @ r1) * d_w
    # r1 = e1 / |e1|
    d_e1 = (d_r1 - (d_r1 @ r1) * r1) / n1
    return d_e1, d_e2


@dataclass
class ScaledRigidTransform:
    e1: np.ndarray
    e2: np.ndarray
    t: np.ndarray
    s: float

    def __post_init__(self):
        self.e1 = np.asarray(self.e1, dtype=np.float64).copy()
        self.e2 = np.asarray(self.e2, dtype=np.float64).copy()
        self.t = np.asarray(self.t, dtype=np.float64).copy()
        self.s = float(self.s)
        if self.s <= 0:
            raise ValueError(f"scale must be positive, got {self.s}")

    @staticmethod
    def identity() -> "ScaledRigidTransform":
        return ScaledRigidTransform(
            np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), np.zeros(3), 1.0
        )

    @staticmethod
    def from_rotation(rotation: np.ndarray, t=None, s: float = 1.0) -> "ScaledRigidTransform":
        rotation = np.asarray(rotation, dtype=np.float64)
        return ScaledRigidTransform(
            rotation[:, 0], rotation[:, 1], np.zeros(3) if t is None else t, s
        )

    @property
    def rotation(self) -> np.ndarray:
        return rotation_from_6d(self.e1, self.e2)

    def copy(self) -> "ScaledRigidTransform":
        return ScaledRigidTransform(self.e1, self.e2, self.t, self.s)

    def with_translation(self, t) -> "ScaledRigidTransform":
        return ScaledRigidTransform(self.e1, self.e2, t, self.s)


def apply(transform: ScaledRigidTransform, points: np.ndarray, pivot: np.ndarray) -> np.ndarray:
    """p -> s * R (p - pivot) + pivot + t."""
    points = np.asarray(points, dtype=np.float64)
    pivot = np.asarray(pivot, dtype=np.float64)
    rotated = (points - pivot) @ transform.rotation.T
    return transform.s * rotated + pivot + transform.t


def compose_matrix(transform: ScaledRigidTransform, pivot: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Equivalent affine map (A, b) with p -> A p + b."""
    a = transform.s * transform.rotation
    b = pivot + transform.t - a @ np.asarray(pivot, dtype=np.float64)
    return a, b


def _quat_from_rotation(rotation: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) from a rotation matrix (Shepperd's method)."""
    m = rotation
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] >= m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    return q / np.linalg.norm(q)


def _rotation_from_quat(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _slerp_quat(qa: np.ndarray, qb: np.ndarray, u: float) -> np.ndarray:
    dot = float(qa @ qb)
    if dot < 0.0:  # shortest arc
        qb = -qb
        dot = -dot
    if dot > 1.0 - 1e-9:  # nearly identical: linear fallback
        q = (1.0 - u) * qa + u * qb
        return q / np.linalg.norm(q)
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    sin_theta = np.sin(theta)
    wa = np.sin((1.0 - u) * theta) / sin_theta
    wb = np.sin(u * theta) / sin_theta
    q = wa * qa + wb * qb
    return q / np.linalg.norm(q)


def slerp_transform(
    a: ScaledRigidTransform, b: ScaledRigidTransform, u: float
) -> ScaledRigidTransform:
    """Geodesic interpolation: quaternion SLERP for rotation, linear
    translation, log-linear scale. Endpoints return the inputs exactly."""
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"interpolation parameter must be in [0, 1], got {u}")
    if u == 0.0:
        return a.copy()
    if u == 1.0:
        return b.copy()
    q = _slerp_quat(_quat_from_rotation(a.rotation), _quat_from_rotation(b.rotation), u)
    rotation = _rotation_from_quat(q)
    t = (1.0 - u) * a.t + u * b.t
    s = a.s ** (1.0 - u) * b.s**u
    return ScaledRigidTransform.from_rotation(rotation, t, s)


def rotation_angle_between(ra: np.ndarray, rb: np.ndarray) -> float:
    """Geodesic angle between two rotation matrices, radians."""
    cos = (np.trace(ra.T @ rb) - 1.0) * 0.5
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def decompose_translation(t: np.ndarray, normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split t into components orthogonal and parallel to a unit normal."""
    t = np.asarray(t, dtype=np.float64)
    normal = np.asarray(normal, dtype=np.float64)
    t_par = (t @ normal) * normal
    return t - t_par, t_par


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about a (not necessarily unit) axis."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array(
        [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
    )
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def rotation_between_vectors(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimal rotation taking direction a to direction b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    axis = np.cross(a, b)
    sin = np.linalg.norm(axis)
    cos = float(a @ b)
    if sin < 1e-12:
        if cos > 0:
            return np.eye(3)
        # opposite directions: rotate half-turn about any perpendicular axis
        helper = np.array([1.0, 0.0, 0.0])
        if abs(a[0]) > 0.9:
            helper = np.array([0.0, 1.0, 0.0])
        axis = np.cross(a, helper)
        return rotation_about_axis(axis, np.pi)
    return rotation_about_axis(axis, float(np.arctan2(sin, cos)))
