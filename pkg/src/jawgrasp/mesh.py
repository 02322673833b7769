"""Triangle-mesh ingestion, validation, surface sampling and ray casting.

Meshes are immutable once constructed. Units are meters throughout.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .bvh import BVH, RAY_EPS

MERGE_TOL = 1e-9


class MeshError(ValueError):
    """Raised for unreadable, malformed or empty mesh files."""


# ---------------------------------------------------------------------------
# Data types
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError("face index out of range")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @cached_property
    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    @cached_property
    def _cross(self) -> np.ndarray:
        tri = self.triangles
        return np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])

    @cached_property
    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._cross, axis=1)

    @cached_property
    def face_normals(self) -> np.ndarray:
        c = self._cross
        n = np.linalg.norm(c, axis=1, keepdims=True)
        return c / np.where(n > 0, n, 1.0)

    @cached_property
    def bvh(self) -> BVH:
        return BVH(self.triangles)

    @cached_property
    def bounds(self) -> np.ndarray:
        return np.stack([self.vertices.min(axis=0), self.vertices.max(axis=0)])

    @cached_property
    def volume(self) -> float:
        tri = self.triangles
        return float(np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6.0)

    @cached_property
    def center_of_mass(self) -> np.ndarray:
        """Volume centroid of a closed mesh (uniform density)."""
        tri = self.triangles
        vol6 = np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2]))
        total = vol6.sum()
        if abs(total) < 1e-30:
            return self.vertices.mean(axis=0)
        return (vol6[:, None] * tri.sum(axis=1)).sum(axis=0) / (4.0 * total)

    @cached_property
    def bounding_radius(self) -> float:
        """Radius of the sphere about the center of mass enclosing every vertex."""
        return float(np.linalg.norm(self.vertices - self.center_of_mass, axis=1).max())

    def transformed(self, R=np.eye(3), t=np.zeros(3), scale: float = 1.0) -> "TriMesh":
        v = scale * self.vertices @ np.asarray(R).T + np.asarray(t)
        return TriMesh(v, self.faces)

    def content_hash(self) -> bytes:
        h = hashlib.sha256()
        h.update(self.vertices.tobytes())
        h.update(self.faces.tobytes())
        return h.digest()


@dataclass(frozen=True)
class SurfaceSample:
    point: np.ndarray
    normal: np.ndarray
    face_index: int


@dataclass(frozen=True)
class RayHit:
    point: np.ndarray
    face_index: int
    distance: float
    normal: np.ndarray


@dataclass(frozen=True, eq=False)
class SurfaceSamples:
    """Struct-of-arrays batch of surface samples."""

    points: np.ndarray
    normals: np.ndarray
    face_index: np.ndarray

    def __len__(self) -> int:
        return len(self.points)

    def __getitem__(self, i: int) -> SurfaceSample:
        return SurfaceSample(self.points[i], self.normals[i], int(self.face_index[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))


# ---------------------------------------------------------------------------
# Construction / cleanup
# ---------------------------------------------------------------------------
def clean_mesh(vertices, faces, merge_tol: float = MERGE_TOL) -> TriMesh:
    """Merge coincident vertices, drop degenerate and orphaned geometry.

    Vertex order follows first appearance in the input, so the result is
    deterministic.
    """
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(v) == 0 or len(f) == 0:
        raise MeshError("mesh is empty")
    if f.min() < 0 or f.max() >= len(v):
        raise MeshError("face index out of range")

    # union coincident vertices onto the lowest index
    rep = np.arange(len(v))
    pairs = cKDTree(v).query_pairs(merge_tol, output_type="ndarray")
    if len(pairs):
        parent = np.arange(len(v))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for a, b in pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
        rep = np.array([find(i) for i in range(len(v))])
    f = rep[f]

    # degenerate faces: repeated index or (near) zero area
    tri = v[f]
    area2 = np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    diag = float(np.linalg.norm(v.max(axis=0) - v.min(axis=0)))
    keep = (f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 0] != f[:, 2])
    keep &= area2 > 1e-14 * max(diag, 1e-12) ** 2
    f = f[keep]
    if len(f) == 0:
        raise MeshError("mesh has no non-degenerate faces")

    # compact vertices in order of first appearance in the vertex list
    used = np.zeros(len(v), dtype=bool)
    used[f.ravel()] = True
    new_index = np.cumsum(used) - 1
    return TriMesh(v[used], new_index[f])


# ---------------------------------------------------------------------------
# File IO
# ---------------------------------------------------------------------------
def load_mesh(path, scale: float = 1.0) -> TriMesh:
    """Read an OBJ (ASCII) or STL (binary or ASCII) file and clean it."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise MeshError(f"{path}: {exc}") from exc
    suffix = path.suffix.lower()
    if suffix == ".obj":
        v, f = _parse_obj(data, path)
    elif suffix == ".stl":
        v, f = _parse_stl(data, path)
    else:
        raise MeshError(f"{path}: unsupported mesh format {suffix!r}")
    if len(v) == 0 or len(f) == 0:
        raise MeshError(f"{path}: mesh is empty")
    return clean_mesh(np.asarray(v) * scale, f)


def _parse_obj(data: bytes, path) -> tuple[np.ndarray, np.ndarray]:
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    text = data.decode("utf-8", errors="replace")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag = parts[0]
        try:
            if tag == "v":
                if len(parts) < 4:
                    raise ValueError("vertex needs 3 coordinates")
                verts.append([float(x) for x in parts[1:4]])
            elif tag == "f":
                if len(parts) < 4:
                    raise ValueError("face needs at least 3 vertices")
                idx = []
                for tok in parts[1:]:
                    k = int(tok.split("/")[0])
                    if k == 0:
                        raise ValueError("OBJ indices are 1-based")
                    k = k - 1 if k > 0 else len(verts) + k
                    if not 0 <= k < len(verts):
                        raise ValueError(f"vertex index {tok} out of range")
                    idx.append(k)
                for j in range(1, len(idx) - 1):  # fan triangulation
                    faces.append([idx[0], idx[j], idx[j + 1]])
        except ValueError as exc:
            raise MeshError(f"{path}:{lineno}: {exc}") from None
    return np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def _parse_stl(data: bytes, path) -> tuple[np.ndarray, np.ndarray]:
    if len(data) >= 84:
        (n,) = struct.unpack_from("<I", data, 80)
        if len(data) == 84 + 50 * n:
            rec = np.frombuffer(data, dtype=np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)), ("a", "<u2")]),
                                count=n, offset=84)
            v = rec["v"].astype(np.float64).reshape(-1, 3)
            return v, np.arange(3 * n, dtype=np.int64).reshape(-1, 3)
    if data.lstrip().startswith(b"solid"):
        return _parse_ascii_stl(data, path)
    if len(data) < 84:
        raise MeshError(f"{path}: truncated STL header ({len(data)} bytes)")
    (n,) = struct.unpack_from("<I", data, 80)
    raise MeshError(f"{path}: truncated STL: expected {84 + 50 * n} bytes for {n} triangles, got {len(data)}")


def _parse_ascii_stl(data: bytes, path):
    verts = []
    for lineno, raw in enumerate(data.decode("ascii", errors="replace").splitlines(), start=1):
        parts = raw.split()
        if parts and parts[0] == "vertex":
            try:
                verts.append([float(x) for x in parts[1:4]])
                if len(parts) != 4:
                    raise ValueError
            except ValueError:
                raise MeshError(f"{path}:{lineno}: malformed vertex") from None
    if len(verts) % 3:
        raise MeshError(f"{path}: truncated ASCII STL")
    v = np.array(verts, dtype=np.float64).reshape(-1, 3)
    return v, np.arange(len(v), dtype=np.int64).reshape(-1, 3)


def save_obj(mesh: TriMesh, path) -> Path:
    path = Path(path)
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, path)
    return path


def save_stl(mesh: TriMesh, path) -> Path:
    """Binary little-endian STL (float32 coordinates)."""
    path = Path(path)
    n = mesh.num_faces
    rec = np.zeros(n, dtype=np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)), ("a", "<u2")]))
    rec["n"] = mesh.face_normals
    rec["v"] = mesh.triangles
    path.write_bytes(b"\0" * 80 + struct.pack("<I", n) + rec.tobytes())
    return path


def file_digest(path) -> bytes:
    return hashlib.sha256(Path(path).read_bytes()).digest()


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------
def directed_edges(mesh: TriMesh) -> np.ndarray:
    f = mesh.faces
    return np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])


def unique_edges(mesh: TriMesh) -> np.ndarray:
    e = np.sort(directed_edges(mesh), axis=1)
    return np.unique(e, axis=0)


def is_watertight(mesh: TriMesh) -> bool:
    """Every edge is shared by exactly two faces that traverse it in opposite directions."""
    n = mesh.num_vertices
    e = directed_edges(mesh)
    fwd = e[:, 0] * n + e[:, 1]
    rev = e[:, 1] * n + e[:, 0]
    fwd_sorted = np.sort(fwd)
    if np.any(fwd_sorted[1:] == fwd_sorted[:-1]):
        return False  # a directed edge used twice: inconsistent orientation or non-manifold
    return bool(np.array_equal(fwd_sorted, np.sort(rev)))


# ---------------------------------------------------------------------------
# Sampling and queries
# ---------------------------------------------------------------------------
def sample_surface(mesh: TriMesh, n: int, seed: int) -> SurfaceSamples:
    """Area-weighted uniform samples; identical output for identical seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    areas = mesh.face_areas
    cdf = np.cumsum(areas)
    cdf /= cdf[-1]
    face = np.searchsorted(cdf, rng.random(n), side="right")
    face = np.minimum(face, mesh.num_faces - 1)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    tri = mesh.triangles[face]
    a, b, c = 1.0 - r1, r1 * (1.0 - r2), r1 * r2
    pts = a[:, None] * tri[:, 0] + b[:, None] * tri[:, 1] + c[:, None] * tri[:, 2]
    return SurfaceSamples(pts, mesh.face_normals[face], face)


def raycast(mesh: TriMesh, origin, direction, t_min: float = RAY_EPS) -> list[RayHit]:
    """All intersections of a single ray beyond ``t_min``, nearest first."""
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    _, tri, t = mesh.bvh.intersect(o[None], d[None], t_min)
    return [RayHit(o + ti * d, int(fi), float(ti), mesh.face_normals[fi]) for fi, ti in zip(tri, t)]


def raycast_first(mesh: TriMesh, origins, directions, t_min: float = RAY_EPS):
    """Batched nearest hit: ``(face_index, distance)``, -1/inf on a miss."""
    return mesh.bvh.first_hit(origins, directions, t_min)


_PARITY_DIRS = np.array([
    [0.5773502691896258, 0.5773502691896258, 0.5773502691896258],
    [-0.2672612419124244, 0.5345224838248488, -0.8017837257372732],
    [0.8164965809277261, -0.4082482904638631, -0.4082482904638631],
])
_PARITY_DIRS = _PARITY_DIRS / np.linalg.norm(_PARITY_DIRS, axis=1, keepdims=True)


def contains(mesh: TriMesh, points) -> np.ndarray:
    """Inside test by ray-crossing parity, majority-voted over three skew directions."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = len(pts)
    votes = np.zeros(n, dtype=np.int64)
    lo, hi = mesh.bounds
    inside_box = np.all((pts >= lo) & (pts <= hi), axis=1)
    idx = np.flatnonzero(inside_box)
    if len(idx) == 0:
        return np.zeros(n, dtype=bool)
    for d in _PARITY_DIRS:
        r, _, _ = mesh.bvh.intersect(pts[idx], np.broadcast_to(d, (len(idx), 3)), t_min=0.0)
        crossings = np.bincount(r, minlength=len(idx))
        votes[idx] += crossings % 2
    return votes >= 2


def point_mesh_distance(mesh: TriMesh, points, chunk: int = 256) -> np.ndarray:
    """Unsigned distance from each point to the closest point on the surface (brute force)."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    out = np.empty(len(pts))
    tri = mesh.triangles
    for s in range(0, len(pts), chunk):
        p = pts[s:s + chunk]
        cp = closest_point_on_triangles(p[:, None, :], tri[None, :, 0], tri[None, :, 1], tri[None, :, 2])
        out[s:s + chunk] = np.linalg.norm(cp - p[:, None, :], axis=2).min(axis=1)
    return out


def closest_point_on_triangles(p, a, b, c):
    """Closest point on triangle(s) abc to p; broadcasting (Ericson's region test)."""
    p, a, b, c = np.broadcast_arrays(p, a, b, c)
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("...i,...i", ab, ap)
    d2 = np.einsum("...i,...i", ac, ap)
    bp = p - b
    d3 = np.einsum("...i,...i", ab, bp)
    d4 = np.einsum("...i,...i", ac, bp)
    cp = p - c
    d5 = np.einsum("...i,...i", ab, cp)
    d6 = np.einsum("...i,...i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = np.where(denom != 0, vb / denom, 0.0)
        w = np.where(denom != 0, vc / denom, 0.0)
        res = a + v[..., None] * ab + w[..., None] * ac
        # edge regions
        t_ab = np.where(d1 - d3 != 0, d1 / (d1 - d3), 0.0)
        t_ac = np.where(d2 - d6 != 0, d2 / (d2 - d6), 0.0)
        t_bc = np.where((d4 - d3) + (d5 - d6) != 0, (d4 - d3) / ((d4 - d3) + (d5 - d6)), 0.0)
    m_bc = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
    res = np.where(m_bc[..., None], b + t_bc[..., None] * (c - b), res)
    m_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    res = np.where(m_ac[..., None], a + t_ac[..., None] * ac, res)
    m_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    res = np.where(m_ab[..., None], a + t_ab[..., None] * ab, res)
    # vertex regions
    res = np.where(((d6 >= 0) & (d5 <= d6))[..., None], c, res)
    res = np.where(((d3 >= 0) & (d4 <= d3))[..., None], b, res)
    res = np.where(((d1 <= 0) & (d2 <= 0))[..., None], a, res)
    return res


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------
def diversity_stats(mesh: TriMesh) -> dict:
    e = unique_edges(mesh)
    lengths = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    return {
        "num_triangles": mesh.num_faces,
        "num_vertices": mesh.num_vertices,
        "edge_length_mean": float(lengths.mean()),
        "edge_length_std": float(lengths.std()),
    }
