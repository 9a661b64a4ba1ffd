"""Triangle meshes, Wavefront OBJ I/O, and face-index region masks.

Meshes are immutable after construction: deformation stages produce new
instances via :meth:`TriangleMesh.replace_vertices`. When a mesh was loaded
from an OBJ file we keep the raw source lines so that saving writes back
every non-geometry record (vt/vn/usemtl/...) untouched and only rewrites
the ``v`` records.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateFrameError, MeshIOError, ValidationError

DEGENERATE_AREA = 1e-12


def _format_float(x: float) -> str:
    # %.17g round-trips doubles exactly
    return format(float(x), ".17g")


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray  # (F, 3) int64
    source_lines: list[str] | None = None
    vertex_line_map: np.ndarray | None = None  # index into source_lines per vertex
    _face_areas: np.ndarray | None = field(default=None, repr=False)
    _face_normals: np.ndarray | None = field(default=None, repr=False)
    _watertight: bool | None = field(default=None, repr=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValidationError(f"vertices must be (V, 3), got {self.vertices.shape}")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValidationError(f"faces must be (F, 3), got {self.faces.shape}")
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValidationError("face index out of range")

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    @property
    def triangles(self) -> np.ndarray:
        """Per-face vertex coordinates, shape (F, 3, 3)."""
        return self.vertices[self.faces]

    def _cross(self) -> np.ndarray:
        tri = self.triangles
        return np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])

    @property
    def face_areas(self) -> np.ndarray:
        if self._face_areas is None:
            self._face_areas = 0.5 * np.linalg.norm(self._cross(), axis=1)
        return self._face_areas

    @property
    def face_normals(self) -> np.ndarray:
        if self._face_normals is None:
            c = self._cross()
            n = np.linalg.norm(c, axis=1)
            n = np.where(n > 0, n, 1.0)
            self._face_normals = c / n[:, None]
        return self._face_normals

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def bbox_diagonal(self) -> float:
        lo, hi = self.bounds
        return float(np.linalg.norm(hi - lo))

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def is_watertight(self) -> bool:
        """Every edge shared by exactly two faces (per connected component)."""
        if self._watertight is None:
            edges = np.concatenate(
                [self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]]
            )
            edges = np.sort(edges, axis=1)
            _, counts = np.unique(edges, axis=0, return_counts=True)
            self._watertight = bool(len(counts)) and bool(np.all(counts == 2))
        return self._watertight

    def replace_vertices(self, vertices: np.ndarray) -> "TriangleMesh":
        """New mesh with the same topology and source records, moved vertices."""
        if len(vertices) != len(self.vertices):
            raise ValidationError("replacement vertex count differs")
        return TriangleMesh(
            np.asarray(vertices, dtype=np.float64),
            self.faces,
            source_lines=self.source_lines,
            vertex_line_map=self.vertex_line_map,
        )

    def scaled(self, factor: float) -> "TriangleMesh":
        return self.replace_vertices(self.vertices * float(factor))


def _validate_loaded(mesh: TriangleMesh, path) -> None:
    f = mesh.faces
    repeated = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
    if np.any(repeated):
        bad = int(np.nonzero(repeated)[0][0])
        raise ValidationError(f"{path}: face {bad} repeats a vertex index")
    diag = mesh.bbox_diagonal
    scale = diag if diag > 0 else 1.0
    areas = mesh.face_areas / (scale * scale)
    tiny = areas <= DEGENERATE_AREA
    if np.any(tiny):
        bad = np.nonzero(tiny)[0]
        raise ValidationError(
            f"{path}: degenerate (zero-area) faces after triangulation: {bad[:8].tolist()}"
        )


def load_mesh(path) -> TriangleMesh:
    """Parse a Wavefront OBJ, fan-triangulating polygonal faces.

    Vertex order is preserved so region files written against the source
    stay valid. All lines are retained for attribute-preserving saves.
    """
    path = Path(path)
    try:
        raw = path.read_text()
    except OSError as exc:
        raise MeshIOError(str(exc), path=path) from exc

    lines = raw.splitlines()
    vertices: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    v_line_map: list[int] = []

    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        tokens = stripped.split()
        rec = tokens[0]
        if rec == "v":
            if len(tokens) < 4:
                raise MeshIOError("vertex record needs 3 coordinates", path, lineno)
            try:
                vertices.append([float(t) for t in tokens[1:4]])
            except ValueError as exc:
                raise MeshIOError(f"bad vertex coordinate: {exc}", path, lineno) from exc
            v_line_map.append(lineno - 1)
        elif rec == "f":
            if len(tokens) < 4:
                raise MeshIOError("face record needs at least 3 vertices", path, lineno)
            idx = []
            for t in tokens[1:]:
                head = t.split("/")[0]
                try:
                    i = int(head)
                except ValueError as exc:
                    raise MeshIOError(f"bad face index {head!r}", path, lineno) from exc
                if i > 0:
                    i -= 1
                elif i < 0:
                    i += len(vertices)
                else:
                    raise MeshIOError("face index 0 is invalid in OBJ", path, lineno)
                if i < 0 or i >= len(vertices):
                    raise MeshIOError(f"face index {head} out of range", path, lineno)
                idx.append(i)
            for k in range(2, len(idx)):
                faces.append((idx[0], idx[k - 1], idx[k]))
        # every other record type is passed through untouched on save

    if not vertices:
        raise MeshIOError("no vertices found", path)
    if not faces:
        raise MeshIOError("no faces found", path)

    mesh = TriangleMesh(
        np.array(vertices, dtype=np.float64),
        np.array(faces, dtype=np.int64),
        source_lines=lines,
        vertex_line_map=np.array(v_line_map, dtype=np.int64),
    )
    _validate_loaded(mesh, path)
    return mesh


def save_mesh(mesh: TriangleMesh, path) -> None:
    """Write an OBJ. Meshes loaded from a file keep every non-``v`` record
    verbatim; fresh meshes get plain v/f records."""
    path = Path(path)
    if mesh.source_lines is not None and mesh.vertex_line_map is not None and len(
        mesh.vertex_line_map
    ) == len(mesh.vertices):
        out = list(mesh.source_lines)
        for vid, lineidx in enumerate(mesh.vertex_line_map):
            old = out[lineidx].strip().split()
            coords = " ".join(_format_float(c) for c in mesh.vertices[vid])
            extra = ""
            if len(old) > 4:  # e.g. per-vertex colors after xyz
                extra = " " + " ".join(old[4:])
            out[lineidx] = f"v {coords}{extra}"
        path.write_text("\n".join(out) + "\n")
        return
    parts = [f"v {_format_float(x)} {_format_float(y)} {_format_float(z)}" for x, y, z in mesh.vertices]
    parts += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    path.write_text("\n".join(parts) + "\n")


@dataclass
class RegionMask:
    """Sorted, deduplicated base-mesh face indices defining the fit region."""

    face_indices: np.ndarray  # (K,) int64, sorted unique

    def __post_init__(self):
        self.face_indices = np.unique(np.asarray(self.face_indices, dtype=np.int64))
        if len(self.face_indices) == 0:
            raise ValidationError("region mask is empty")

    def validate_against(self, mesh: TriangleMesh) -> None:
        if self.face_indices[0] < 0 or self.face_indices[-1] >= mesh.num_faces:
            raise ValidationError(
                f"region face index {int(self.face_indices[-1])} out of range "
                f"for mesh with {mesh.num_faces} faces"
            )

    def region_vertices(self, mesh: TriangleMesh) -> np.ndarray:
        """Unique vertex indices touched by the masked faces."""
        return np.unique(mesh.faces[self.face_indices])


def load_region(path, mesh: TriangleMesh) -> RegionMask:
    """Region file: 0-based face indices, one per line, '#' comments allowed."""
    path = Path(path)
    try:
        raw = path.read_text()
    except OSError as exc:
        raise MeshIOError(str(exc), path=path) from exc
    indices = []
    for lineno, line in enumerate(raw.splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        try:
            value = int(text)
        except ValueError as exc:
            raise MeshIOError(f"bad face index {text!r}", path, lineno) from exc
        if value < 0:
            raise ValidationError(f"{path}:{lineno}: negative face index {value}")
        indices.append(value)
    if not indices:
        raise ValidationError(f"{path}: region file lists no faces")
    mask = RegionMask(np.array(indices, dtype=np.int64))
    mask.validate_against(mesh)
    return mask


def save_region(mask: RegionMask, path) -> None:
    Path(path).write_text("\n".join(str(int(i)) for i in mask.face_indices) + "\n")


@dataclass
class RegionFrame:
    """Area-weighted centroid, outward direction and extent of the fit region."""

    centroid: np.ndarray  # (3,)
    average_normal: np.ndarray  # (3,) unit
    bbox_diag: float


def region_frame(
    mesh: TriangleMesh, mask: RegionMask, normal: np.ndarray | None = None
) -> RegionFrame:
    """Frame of the masked region.

    ``normal`` overrides the area-weighted mean normal; required when the
    region's normals cancel (closed loops, full spheres).
    """
    mask.validate_against(mesh)
    idx = mask.face_indices
    areas = mesh.face_areas[idx]
    tri = mesh.triangles[idx]
    face_centroids = tri.mean(axis=1)
    total = areas.sum()
    if total <= 0:
        raise ValidationError("region has zero total area")
    centroid = (face_centroids * areas[:, None]).sum(axis=0) / total

    verts = mesh.vertices[mask.region_vertices(mesh)]
    bbox_diag = float(np.linalg.norm(verts.max(axis=0) - verts.min(axis=0)))
    if bbox_diag <= 0:
        raise ValidationError("region bounding box is degenerate")

    if normal is not None:
        n = np.asarray(normal, dtype=np.float64)
        norm = np.linalg.norm(n)
        if norm < 1e-9:
            raise ValidationError("explicit region normal has near-zero length")
        return RegionFrame(centroid, n / norm, bbox_diag)

    mean = (mesh.face_normals[idx] * areas[:, None]).sum(axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-9:
        raise DegenerateFrameError(
            "region normals cancel out (norm < 1e-9); supply a normal explicitly"
        )
    return RegionFrame(centroid, mean / norm, bbox_diag)
