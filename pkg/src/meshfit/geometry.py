"""Exact local geometric primitives.

Point-to-triangle closest points (scalar with Voronoi-region classification,
and a broadcast kernel used by the BVH leaves), barycentric coordinates,
segment/triangle-based triangle-triangle overlap, and parity ray casting for
inside/outside classification.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

# Fixed, irrationally-oriented ray directions: a majority vote over these
# three makes the parity test robust to rays grazing edges.
RAY_DIRECTIONS = np.array(
    [
        [0.2857186237, 0.8640293728, 0.4142135624],
        [-0.5772156649, 0.3010299957, 0.7575757576],
        [0.6931471806, -0.1618033989, 0.7018347127],
    ]
)
RAY_DIRECTIONS /= np.linalg.norm(RAY_DIRECTIONS, axis=1, keepdims=True)

_CHUNK = 1 << 20  # max pairwise entries evaluated per numpy pass


@dataclass
class ClosestPointResult:
    distance: float
    point: np.ndarray
    region: str  # "face-interior", "edge(k)" or "vertex(k)"


def point_triangle(query: np.ndarray, tri: np.ndarray) -> ClosestPointResult:
    """Exact closest point on a single triangle (Ericson's case analysis).

    Edges are numbered 0: v0-v1, 1: v1-v2, 2: v2-v0.
    """
    query = np.asarray(query, dtype=np.float64)
    tri = np.asarray(tri, dtype=np.float64)
    a, b, c = tri
    ab = b - a
    ac = c - a
    if np.linalg.norm(np.cross(ab, ac)) < 1e-15:
        raise ValidationError("degenerate triangle in closest-point query")

    ap = query - a
    d1 = ab @ ap
    d2 = ac @ ap
    if d1 <= 0 and d2 <= 0:
        return ClosestPointResult(float(np.linalg.norm(query - a)), a.copy(), "vertex(0)")
    bp = query - b
    d3 = ab @ bp
    d4 = ac @ bp
    if d3 >= 0 and d4 <= d3:
        return ClosestPointResult(float(np.linalg.norm(query - b)), b.copy(), "vertex(1)")
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        v = d1 / (d1 - d3)
        p = a + v * ab
        return ClosestPointResult(float(np.linalg.norm(query - p)), p, "edge(0)")
    cp = query - c
    d5 = ab @ cp
    d6 = ac @ cp
    if d6 >= 0 and d5 <= d6:
        return ClosestPointResult(float(np.linalg.norm(query - c)), c.copy(), "vertex(2)")
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        w = d2 / (d2 - d6)
        p = a + w * ac
        return ClosestPointResult(float(np.linalg.norm(query - p)), p, "edge(2)")
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        p = b + w * (c - b)
        return ClosestPointResult(float(np.linalg.norm(query - p)), p, "edge(1)")
    denom = va + vb + vc
    v = vb / denom
    w = vc / denom
    p = a + v * ab + w * ac
    return ClosestPointResult(float(np.linalg.norm(query - p)), p, "face-interior")


def _closest_points_flat(queries: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Closest point per (query, triangle) pair, both arrays of length N."""
    a = tris[:, 0]
    b = tris[:, 1]
    c = tris[:, 2]
    ab = b - a
    ac = c - a
    ap = queries - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = queries - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = queries - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    out = np.empty_like(queries)
    remain = np.ones(len(queries), dtype=bool)

    is_a = (d1 <= 0) & (d2 <= 0)
    out[is_a] = a[is_a]
    remain &= ~is_a

    is_b = (d3 >= 0) & (d4 <= d3) & remain
    out[is_b] = b[is_b]
    remain &= ~is_b

    is_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0) & remain
    if np.any(is_ab):
        v = (d1[is_ab] / (d1[is_ab] - d3[is_ab]))[:, None]
        out[is_ab] = a[is_ab] + v * ab[is_ab]
        remain &= ~is_ab

    is_c = (d6 >= 0) & (d5 <= d6) & remain
    out[is_c] = c[is_c]
    remain &= ~is_c

    is_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0) & remain
    if np.any(is_ac):
        w = (d2[is_ac] / (d2[is_ac] - d6[is_ac]))[:, None]
        out[is_ac] = a[is_ac] + w * ac[is_ac]
        remain &= ~is_ac

    is_bc = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0) & remain
    if np.any(is_bc):
        d43 = d4[is_bc] - d3[is_bc]
        w = (d43 / (d43 + d5[is_bc] - d6[is_bc]))[:, None]
        out[is_bc] = b[is_bc] + w * (c[is_bc] - b[is_bc])
        remain &= ~is_bc

    if np.any(remain):
        denom = va[remain] + vb[remain] + vc[remain]
        v = (vb[remain] / denom)[:, None]
        w = (vc[remain] / denom)[:, None]
        out[remain] = a[remain] + v * ab[remain] + w * ac[remain]
    return out


def closest_point_batch(
    queries: np.ndarray, tris: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Best triangle per query over a triangle batch.

    Returns (squared distance, index into ``tris``, closest point). Ties in
    distance resolve to the first triangle in batch order, so callers wanting
    lowest-face-index ties pre-sort the batch.
    """
    nq = len(queries)
    nt = len(tris)
    best_d2 = np.full(nq, np.inf)
    best_idx = np.full(nq, -1, dtype=np.int64)
    best_point = np.zeros((nq, 3))
    if nt == 0 or nq == 0:
        return best_d2, best_idx, best_point

    rows_per_pass = max(1, _CHUNK // nt)
    for start in range(0, nq, rows_per_pass):
        stop = min(nq, start + rows_per_pass)
        q_chunk = queries[start:stop]
        nq_c = len(q_chunk)
        flat_q = np.repeat(q_chunk, nt, axis=0)
        flat_t = np.tile(tris, (nq_c, 1, 1))
        pts = _closest_points_flat(flat_q, flat_t).reshape(nq_c, nt, 3)
        d2 = np.sum((pts - q_chunk[:, None, :]) ** 2, axis=2)
        idx = np.argmin(d2, axis=1)
        rows = np.arange(nq_c)
        best_d2[start:stop] = d2[rows, idx]
        best_idx[start:stop] = idx
        best_point[start:stop] = pts[rows, idx]
    return best_d2, best_idx, best_point


def barycentric_coordinates(points: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Barycentric weights of points known to lie on their triangles' planes."""
    a = tris[:, 0]
    e1 = tris[:, 1] - a
    e2 = tris[:, 2] - a
    p = points - a
    d11 = np.einsum("ij,ij->i", e1, e1)
    d12 = np.einsum("ij,ij->i", e1, e2)
    d22 = np.einsum("ij,ij->i", e2, e2)
    p1 = np.einsum("ij,ij->i", p, e1)
    p2 = np.einsum("ij,ij->i", p, e2)
    det = d11 * d22 - d12 * d12
    det = np.where(np.abs(det) < 1e-300, 1.0, det)
    v = (d22 * p1 - d12 * p2) / det
    w = (d11 * p2 - d12 * p1) / det
    return np.stack([1.0 - v - w, v, w], axis=1)


def _segment_crosses_triangle(
    p: np.ndarray, q: np.ndarray, tris: np.ndarray, tol: float
) -> np.ndarray:
    """Whether segment p->q properly crosses the triangle interior, per row."""
    a = tris[:, 0]
    n = np.cross(tris[:, 1] - a, tris[:, 2] - a)
    norm = np.linalg.norm(n, axis=1)
    ok = norm > 1e-300
    n = n / np.where(ok, norm, 1.0)[:, None]
    dp = np.einsum("ij,ij->i", p - a, n)
    dq = np.einsum("ij,ij->i", q - a, n)
    crossing = ((dp > tol) & (dq < -tol)) | ((dp < -tol) & (dq > tol))
    crossing &= ok
    result = np.zeros(len(tris), dtype=bool)
    if not np.any(crossing):
        return result
    pc = p[crossing]
    qc = q[crossing]
    dpc = dp[crossing]
    dqc = dq[crossing]
    x = pc + ((dpc / (dpc - dqc))[:, None]) * (qc - pc)
    bary = barycentric_coordinates(x, tris[crossing])
    inside = np.all(bary > tol, axis=1)
    result[crossing] = inside
    return result


def triangles_intersect(tris_a: np.ndarray, tris_b: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Pairwise exact triangle-triangle overlap test.

    An edge of one triangle must properly cross the other's interior;
    touching or coplanar contact within ``tol`` counts as non-intersecting.
    """
    tris_a = np.asarray(tris_a, dtype=np.float64)
    tris_b = np.asarray(tris_b, dtype=np.float64)
    hit = np.zeros(len(tris_a), dtype=bool)
    for i, j in ((0, 1), (1, 2), (2, 0)):
        hit |= _segment_crosses_triangle(tris_a[:, i], tris_a[:, j], tris_b, tol)
        hit |= _segment_crosses_triangle(tris_b[:, i], tris_b[:, j], tris_a, tol)
    return hit


def _ray_crossings(points: np.ndarray, tris: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Number of triangle crossings along +direction from each point."""
    e1 = tris[:, 1] - tris[:, 0]
    e2 = tris[:, 2] - tris[:, 0]
    h = np.cross(direction[None, :], e2)
    det = np.einsum("ij,ij->i", e1, h)
    valid = np.abs(det) > 1e-14
    inv_det = np.where(valid, 1.0 / np.where(valid, det, 1.0), 0.0)

    counts = np.zeros(len(points), dtype=np.int64)
    nt = len(tris)
    rows_per_pass = max(1, _CHUNK // max(nt, 1))
    for start in range(0, len(points), rows_per_pass):
        stop = min(len(points), start + rows_per_pass)
        s = points[start:stop, None, :] - tris[None, :, 0, :]
        u = np.einsum("qfj,fj->qf", s, h) * inv_det
        qv = np.cross(s, e1[None, :, :])
        v = np.einsum("qfj,j->qf", qv, direction) * inv_det
        t = np.einsum("qfj,fj->qf", qv, e2) * inv_det
        eps = 1e-12
        hits = valid[None, :] & (u > eps) & (v > eps) & (u + v < 1.0 - eps) & (t > eps)
        counts[start:stop] = hits.sum(axis=1)
    return counts


def points_inside_mesh(points: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Parity-based inside test; majority vote over three fixed directions."""
    points = np.asarray(points, dtype=np.float64)
    votes = np.zeros(len(points), dtype=np.int64)
    for direction in RAY_DIRECTIONS:
        votes += _ray_crossings(points, tris, direction) % 2
    return votes >= 2
