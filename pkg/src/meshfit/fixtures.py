"""Procedural meshes and the bundled test fixtures.

Every fixture is a (base mesh, accessory mesh, region mask) triple small
enough to drive the whole pipeline in seconds. Bases are watertight so the
parity ray cast and penetration metrics are meaningful; accessories may be
open shells (caps, bands). Accessories start mis-scaled, displaced and
rotated so each run exercises the initializer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import RegionMask, TriangleMesh
from .transforms import rotation_about_axis


def mesh_from_arrays(vertices, faces) -> TriangleMesh:
    return TriangleMesh(np.asarray(vertices, dtype=np.float64), np.asarray(faces, dtype=np.int64))


def _place(mesh: TriangleMesh, rotation=None, offset=(0.0, 0.0, 0.0)) -> TriangleMesh:
    verts = mesh.vertices
    if rotation is not None:
        verts = (verts - verts.mean(axis=0)) @ np.asarray(rotation).T + verts.mean(axis=0)
    return mesh.replace_vertices(verts + np.asarray(offset, dtype=np.float64))


def uv_sphere(radius=1.0, center=(0.0, 0.0, 0.0), n_lon=24, n_lat=16) -> TriangleMesh:
    center = np.asarray(center, dtype=np.float64)
    verts = [center + [0, 0, radius]]
    for i in range(1, n_lat):
        theta = np.pi * i / n_lat
        for j in range(n_lon):
            phi = 2 * np.pi * j / n_lon
            verts.append(
                center
                + radius
                * np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
            )
    verts.append(center + [0, 0, -radius])
    top, bottom = 0, len(verts) - 1

    def ring(i, j):
        return 1 + (i - 1) * n_lon + (j % n_lon)

    faces = []
    for j in range(n_lon):
        faces.append((top, ring(1, j), ring(1, j + 1)))
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces.append((a, c, d))
            faces.append((a, d, b))
    for j in range(n_lon):
        faces.append((bottom, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)))
    return mesh_from_arrays(verts, faces)


def icosphere(subdivisions=2, radius=1.0, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = list(verts)
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    verts = np.array(verts) * radius + np.asarray(center, dtype=np.float64)
    return mesh_from_arrays(verts, faces)


def capped_cylinder(radius=0.5, height=2.0, n_seg=32, n_rings=8, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    center = np.asarray(center, dtype=np.float64)
    verts = []
    for i in range(n_rings + 1):
        z = -height / 2 + height * i / n_rings
        for j in range(n_seg):
            phi = 2 * np.pi * j / n_seg
            verts.append(center + [radius * np.cos(phi), radius * np.sin(phi), z])
    bottom_center = len(verts)
    verts.append(center + [0, 0, -height / 2])
    top_center = len(verts)
    verts.append(center + [0, 0, height / 2])

    def ring(i, j):
        return i * n_seg + (j % n_seg)

    faces = []
    for i in range(n_rings):
        for j in range(n_seg):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces.append((a, b, d))
            faces.append((a, d, c))
    for j in range(n_seg):
        faces.append((bottom_center, ring(0, j + 1), ring(0, j)))
        faces.append((top_center, ring(n_rings, j), ring(n_rings, j + 1)))
    return mesh_from_arrays(verts, faces)


def torus(major_radius=1.0, minor_radius=0.3, n_major=32, n_minor=12, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    center = np.asarray(center, dtype=np.float64)
    verts = []
    for i in range(n_major):
        phi = 2 * np.pi * i / n_major
        ring_center = np.array([np.cos(phi), np.sin(phi), 0.0]) * major_radius
        radial = np.array([np.cos(phi), np.sin(phi), 0.0])
        for j in range(n_minor):
            psi = 2 * np.pi * j / n_minor
            verts.append(center + ring_center + minor_radius * (np.cos(psi) * radial + [0, 0, np.sin(psi)]))

    def vid(i, j):
        return (i % n_major) * n_minor + (j % n_minor)

    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i, j + 1), vid(i + 1, j + 1)
            faces.append((a, b, d))
            faces.append((a, d, c))
    return mesh_from_arrays(verts, faces)


def subdivided_box(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0), cells=(2, 2, 2)) -> TriangleMesh:
    """Axis-aligned closed box with each side gridded; duplicate vertices welded."""
    size = np.asarray(size, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    lo = center - size / 2
    nx, ny, nz = cells
    raw_verts: list[np.ndarray] = []
    raw_faces: list[tuple[int, int, int]] = []

    def grid(axis, fixed_value, flip, nu, nv, u_axis, v_axis):
        base = len(raw_verts)
        for i in range(nu + 1):
            for j in range(nv + 1):
                p = lo.copy()
                p[axis] = fixed_value
                p[u_axis] = lo[u_axis] + size[u_axis] * i / nu
                p[v_axis] = lo[v_axis] + size[v_axis] * j / nv
                raw_verts.append(p)
        for i in range(nu):
            for j in range(nv):
                a = base + i * (nv + 1) + j
                b = a + nv + 1
                quad = [(a, b, b + 1), (a, b + 1, a + 1)]
                if flip:
                    quad = [(a, b + 1, b), (a, a + 1, b + 1)]
                raw_faces.extend(quad)

    grid(2, lo[2] + size[2], False, nx, ny, 0, 1)  # top (+z)
    grid(2, lo[2], True, nx, ny, 0, 1)  # bottom
    grid(1, lo[1] + size[1], True, nx, nz, 0, 2)  # +y
    grid(1, lo[1], False, nx, nz, 0, 2)  # -y
    grid(0, lo[0] + size[0], False, ny, nz, 1, 2)  # +x
    grid(0, lo[0], True, ny, nz, 1, 2)  # -x

    verts = np.array(raw_verts)
    rounded = np.round(verts / (size.max() * 1e-12 + 1e-12)).astype(np.int64)
    _, first, inverse = np.unique(rounded, axis=0, return_index=True, return_inverse=True)
    welded = verts[first]
    faces = inverse[np.array(raw_faces, dtype=np.int64)]
    return mesh_from_arrays(welded, faces)


def open_spherical_cap(radius=1.0, opening_deg=55.0, n_rings=6, n_seg=24, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Open bowl: the part of a sphere above the opening angle, rim left free."""
    center = np.asarray(center, dtype=np.float64)
    opening = np.deg2rad(opening_deg)
    verts = [center + [0, 0, radius]]
    for i in range(1, n_rings + 1):
        theta = opening * i / n_rings
        for j in range(n_seg):
            phi = 2 * np.pi * j / n_seg
            verts.append(
                center
                + radius
                * np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
            )

    def ring(i, j):
        return 1 + (i - 1) * n_seg + (j % n_seg)

    faces = []
    for j in range(n_seg):
        faces.append((0, ring(1, j), ring(1, j + 1)))
    for i in range(1, n_rings):
        for j in range(n_seg):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces.append((a, c, d))
            faces.append((a, d, b))
    return mesh_from_arrays(verts, faces)


def open_tube(radius=0.5, height=0.5, n_seg=28, n_rings=3, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Cylindrical band without caps."""
    center = np.asarray(center, dtype=np.float64)
    verts = []
    for i in range(n_rings + 1):
        z = -height / 2 + height * i / n_rings
        for j in range(n_seg):
            phi = 2 * np.pi * j / n_seg
            verts.append(center + [radius * np.cos(phi), radius * np.sin(phi), z])

    def ring(i, j):
        return i * n_seg + (j % n_seg)

    faces = []
    for i in range(n_rings):
        for j in range(n_seg):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces.append((a, b, d))
            faces.append((a, d, c))
    return mesh_from_arrays(verts, faces)


def concat_meshes(*meshes: TriangleMesh) -> TriangleMesh:
    verts = np.concatenate([m.vertices for m in meshes])
    offsets = np.cumsum([0] + [m.num_vertices for m in meshes[:-1]])
    faces = np.concatenate([m.faces + off for m, off in zip(meshes, offsets)])
    return mesh_from_arrays(verts, faces)


@dataclass
class Fixture:
    name: str
    base: TriangleMesh
    obj: TriangleMesh
    region: RegionMask
    region_normal: np.ndarray | None = None


def _faces_where(mesh: TriangleMesh, predicate) -> RegionMask:
    centroids = mesh.triangles.mean(axis=1)
    picked = np.nonzero(predicate(centroids, mesh.face_normals))[0]
    return RegionMask(picked)


def cap_on_sphere() -> Fixture:
    base = icosphere(3, radius=1.0)
    region = _faces_where(base, lambda c, n: c[:, 2] > 0.62)
    cap = open_spherical_cap(radius=1.3, opening_deg=55.0, n_rings=7, n_seg=28)
    cap = _place(cap, rotation_about_axis([1, 0.3, 0], 0.7), offset=(1.7, 1.2, 0.9))
    return Fixture("cap-on-sphere", base, cap, region)


def ring_on_cylinder() -> Fixture:
    base = capped_cylinder(radius=0.6, height=3.0, n_seg=36, n_rings=12)
    region = _faces_where(
        base,
        lambda c, n: (np.abs(n[:, 2]) < 0.5) & (c[:, 2] > 0.5) & (c[:, 2] < 1.1),
    )
    ring = torus(major_radius=0.78, minor_radius=0.12, n_major=28, n_minor=10)
    ring = _place(ring, rotation_about_axis([1, 0, 0], 0.5), offset=(2.0, 1.0, 3.0))
    return Fixture("ring-on-cylinder", base, ring, region, region_normal=np.array([0.0, 0.0, 1.0]))


def band_on_torus_arm() -> Fixture:
    base = torus(major_radius=1.2, minor_radius=0.35, n_major=36, n_minor=14)
    region = _faces_where(base, lambda c, n: np.abs(np.arctan2(c[:, 1], c[:, 0])) < 0.5)
    band = open_tube(radius=0.48, height=0.5, n_seg=28, n_rings=3)
    band = _place(band, rotation_about_axis([0, 1, 0.2], 1.1), offset=(-2.0, 2.0, 1.0))
    # approach along the arm's axis at the region, not the cancelled mean normal
    return Fixture("band-on-torus-arm", base, band, region, region_normal=np.array([0.0, 1.0, 0.0]))


def plate_on_plane() -> Fixture:
    base = subdivided_box(size=(3.2, 3.2, 0.3), center=(0, 0, -0.15), cells=(8, 8, 1))
    region = _faces_where(
        base,
        lambda c, n: (n[:, 2] > 0.9) & (np.abs(c[:, 0]) < 1.1) & (np.abs(c[:, 1]) < 1.1),
    )
    plate = uv_sphere(radius=1.0, n_lon=20, n_lat=12)
    plate = plate.replace_vertices(plate.vertices * np.array([1.0, 1.0, 0.18]))
    plate = _place(plate, rotation_about_axis([0.2, 1, 0], 0.45), offset=(1.5, -2.0, 1.0))
    return Fixture("plate-on-plane", base, plate, region)


def glasses_bar_on_bust() -> Fixture:
    head = uv_sphere(radius=0.8, center=(0, 0, 1.8), n_lon=22, n_lat=14)
    shoulders = subdivided_box(size=(2.6, 1.0, 0.9), center=(0, 0, 0.35), cells=(4, 2, 2))
    base = concat_meshes(head, shoulders)
    region = _faces_where(
        base,
        lambda c, n: (c[:, 1] > 0.55) & (c[:, 2] > 1.7) & (c[:, 2] < 2.1),
    )
    bar = subdivided_box(size=(1.5, 0.10, 0.16), cells=(8, 1, 1))
    bar = _place(bar, rotation_about_axis([0, 0, 1], 0.9), offset=(-1.5, 2.5, 0.2))
    return Fixture("glasses-bar-on-bust-proxy", base, bar, region)


def plane_cap() -> Fixture:
    """Deformation fixture: a shallow bowl pressed onto a slab."""
    base = subdivided_box(size=(2.6, 2.6, 0.3), center=(0, 0, -0.15), cells=(8, 8, 1))
    region = _faces_where(
        base, lambda c, n: (n[:, 2] > 0.9) & (np.abs(c[:, 0]) < 0.9) & (np.abs(c[:, 1]) < 0.9)
    )
    cap = open_spherical_cap(radius=0.9, opening_deg=50.0, n_rings=6, n_seg=22)
    cap = _place(cap, rotation_about_axis([1, 0, 0], np.pi), offset=(0.6, 0.5, 0.8))
    return Fixture("plane-cap", base, cap, region)


def sphere_on_plane() -> Fixture:
    base = subdivided_box(size=(2.6, 2.6, 0.3), center=(0, 0, -0.15), cells=(8, 8, 1))
    region = _faces_where(
        base, lambda c, n: (n[:, 2] > 0.9) & (np.abs(c[:, 0]) < 0.9) & (np.abs(c[:, 1]) < 0.9)
    )
    ball = uv_sphere(radius=0.5, n_lon=18, n_lat=12, center=(0.3, -0.4, 1.2))
    return Fixture("sphere-on-plane", base, ball, region)


FIXTURE_BUILDERS = {
    "cap-on-sphere": cap_on_sphere,
    "ring-on-cylinder": ring_on_cylinder,
    "band-on-torus-arm": band_on_torus_arm,
    "plate-on-plane": plate_on_plane,
    "glasses-bar-on-bust-proxy": glasses_bar_on_bust,
    "plane-cap": plane_cap,
    "sphere-on-plane": sphere_on_plane,
}

ACCEPTANCE_FIXTURES = (
    "cap-on-sphere",
    "ring-on-cylinder",
    "band-on-torus-arm",
    "plate-on-plane",
    "glasses-bar-on-bust-proxy",
)


def build_fixture(name: str) -> Fixture:
    return FIXTURE_BUILDERS[name]()
