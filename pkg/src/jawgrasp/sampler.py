"""Antipodal grasp-candidate generation.

For every surface sample a few rays are cast into the object inside a narrow
cone around the inward normal. Where a ray exits through a surface whose
normal opposes the sample normal, the contact line is re-cast along the
bisector of the two normals and the resulting contact pair is turned into
four gripper poses rolled 90 degrees apart about the contact line.

A second pass samples a decimated copy of the mesh; its contact lines are
snapped back onto the original surface and re-tested there.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .decimate import DecimationError, decimate
from .geometry import GraspPose, quat_from_matrix
from .gripper import GripperModel
from .mesh import SurfaceSample, SurfaceSamples, TriMesh, raycast_first, sample_surface

log = logging.getLogger(__name__)

SELF_HIT_OFFSET = 1e-6  # m, ray origins start this far inside the surface
SOURCE_ORIGINAL = 0
SOURCE_DECIMATED = 1
SOURCES = ("original", "decimated")


@dataclass(frozen=True)
class SamplerConfig:
    samples_per_object: int = 4096
    rays_per_point: int = 3
    cone_vertex_angle_deg: float = 30.0
    antipodal_tol_deg: float = 30.0
    decimation_factor: float = 0.6
    dedup_eps: float = 1e-3

    def __post_init__(self):
        if self.samples_per_object < 1 or self.rays_per_point < 1:
            raise ValueError("samples_per_object and rays_per_point must be >= 1")
        if not 0.0 < self.cone_vertex_angle_deg < 180.0:
            raise ValueError("cone_vertex_angle_deg must be in (0, 180)")
        if not 0.0 < self.decimation_factor <= 1.0:
            raise ValueError("decimation_factor must be in (0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class ContactPair:
    p1: np.ndarray
    p2: np.ndarray
    n1: np.ndarray  # outward normal at p1
    n2: np.ndarray  # outward normal at p2

    @property
    def width(self) -> float:
        """Contact separation in millimeters."""
        return 1000.0 * float(np.linalg.norm(self.p2 - self.p1))

    def opposition_angle(self) -> float:
        """Angle between -n1 and n2 (radians); zero for perfectly antipodal normals."""
        return float(np.arccos(np.clip(-np.dot(self.n1, self.n2), -1.0, 1.0)))

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.p1, self.p2, self.n1, self.n2])

    @classmethod
    def from_array(cls, a) -> "ContactPair":
        a = np.asarray(a, dtype=np.float64)
        return cls(a[0:3], a[3:6], a[6:9], a[9:12])


@dataclass(frozen=True, eq=False)
class GraspCandidate:
    pose: GraspPose
    width: float  # mm
    contacts: ContactPair
    source: int = SOURCE_ORIGINAL
    roll_index: int = 0

    @property
    def source_name(self) -> str:
        return SOURCES[self.source]


# ---------------------------------------------------------------------------
def _orthonormal_basis(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors completing ``axis`` to a right-handed frame (batched)."""
    axis = np.atleast_2d(axis)
    helper = np.where((np.abs(axis[:, 0]) < 0.9)[:, None], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    u = np.cross(axis, helper)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v = np.cross(axis, u)
    return u, v


def _cone_directions(axes: np.ndarray, half_angle: float, rng: np.random.Generator) -> np.ndarray:
    """One direction per row of ``axes``, uniform over the spherical cap."""
    n = len(axes)
    cos_t = 1.0 - rng.random(n) * (1.0 - np.cos(half_angle))
    phi = 2.0 * np.pi * rng.random(n)
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t ** 2))
    u, v = _orthonormal_basis(axes)
    d = cos_t[:, None] * axes + sin_t[:, None] * (np.cos(phi)[:, None] * u + np.sin(phi)[:, None] * v)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def cone_rays(axis, vertex_angle: float, k: int, seed: int) -> np.ndarray:
    """``k`` unit directions uniform within the cone of full apex angle ``vertex_angle`` about ``axis``."""
    if not 0.0 <= vertex_angle < np.pi:
        raise ValueError("vertex_angle must be in [0, pi)")
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    rng = np.random.default_rng(seed)
    return _cone_directions(np.broadcast_to(axis, (k, 3)).copy(), vertex_angle / 2.0, rng)


def _angle_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.arccos(np.clip(np.einsum("ij,ij->i", a, b), -1.0, 1.0))


def antipodal_contacts(mesh: TriMesh, points: np.ndarray, normals: np.ndarray, directions: np.ndarray,
                       tol: float, max_opening_mm: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched antipodal search.

    Casts one ray per row from just inside ``points`` along ``directions``.
    Returns ``(accepted_mask, p2, face2)`` for the bisector-recast contacts.
    """
    fn = mesh.face_normals
    origins = points - SELF_HIT_OFFSET * normals
    f_hit, t_hit = raycast_first(mesh, origins, directions)
    ok = f_hit >= 0
    n2 = fn[np.maximum(f_hit, 0)]
    ok &= _angle_between(-normals, n2) <= tol

    # align the contact line with the bisector of the opposed normals
    axis = n2 - normals
    norm = np.linalg.norm(axis, axis=1, keepdims=True)
    axis = np.where(norm > 0, axis / np.where(norm > 0, norm, 1.0), directions)
    f2 = np.full(len(points), -1, dtype=np.int64)
    t2 = np.full(len(points), np.inf)
    idx = np.flatnonzero(ok)
    if len(idx):
        f2[idx], t2[idx] = raycast_first(mesh, origins[idx], axis[idx])
    ok &= f2 >= 0
    p2 = origins + np.where(np.isfinite(t2), t2, 0.0)[:, None] * axis
    ok &= _angle_between(-normals, fn[np.maximum(f2, 0)]) <= tol
    width = 1000.0 * np.linalg.norm(p2 - points, axis=1)
    ok &= (width > 0.0) & (width <= max_opening_mm)
    return ok, p2, f2


def find_antipodal(mesh: TriMesh, sample: SurfaceSample, cfg: SamplerConfig, max_opening_mm: float,
                   seed: int = 0) -> list[ContactPair]:
    """Antipodal partners of a single surface sample (empty list when none qualify)."""
    k = cfg.rays_per_point
    dirs = cone_rays(-sample.normal, np.deg2rad(cfg.cone_vertex_angle_deg), k, seed)
    pts = np.broadcast_to(sample.point, (k, 3)).copy()
    nrm = np.broadcast_to(sample.normal, (k, 3)).copy()
    ok, p2, f2 = antipodal_contacts(mesh, pts, nrm, dirs, np.deg2rad(cfg.antipodal_tol_deg), max_opening_mm)
    return [ContactPair(sample.point.copy(), p2[i], sample.normal.copy(), mesh.face_normals[f2[i]])
            for i in np.flatnonzero(ok)]


# ---------------------------------------------------------------------------
def _roll0_approach(x: np.ndarray) -> np.ndarray:
    """Object -z projected perpendicular to the closing axis; -x when degenerate."""
    for ref in (np.array([0.0, 0.0, -1.0]), np.array([-1.0, 0.0, 0.0])):
        z = ref - np.dot(ref, x) * x
        n = np.linalg.norm(z)
        if n > 1e-6:
            return z / n
    raise AssertionError("unreachable: -z and -x cannot both be parallel to x")


def grasp_frames(p1: np.ndarray, p2: np.ndarray) -> list[np.ndarray]:
    """Four rotation matrices [x y z] with x along p2-p1, z rolled by 0/90/180/270 degrees."""
    x = p2 - p1
    x = x / np.linalg.norm(x)
    z0 = _roll0_approach(x)
    z1 = np.cross(x, z0)
    frames = []
    for z in (z0, z1, -z0, -z1):
        y = np.cross(z, x)
        frames.append(np.column_stack([x, y, z]))
    return frames


def grasps_from_contacts(c: ContactPair, gripper: GripperModel | None = None,
                         source: int = SOURCE_ORIGINAL) -> list[GraspCandidate]:
    center = 0.5 * (c.p1 + c.p2)
    width = c.width
    out = []
    for roll, R in enumerate(grasp_frames(c.p1, c.p2)):
        out.append(GraspCandidate(GraspPose(quat_from_matrix(R), center), width, c, source, roll))
    return out


def _snap_to_surface(mesh: TriMesh, points: np.ndarray, axes: np.ndarray):
    """Entering hit of each line ``points + s * axes`` on ``mesh`` nearest to ``points``.

    Returns ``(found_mask, hit_points, hit_normals)``.
    """
    n = len(points)
    found = np.zeros(n, dtype=bool)
    hp = np.zeros((n, 3))
    hn = np.zeros((n, 3))
    if n == 0:
        return found, hp, hn
    lo, hi = mesh.bounds
    back = float(np.linalg.norm(hi - lo)) + float(np.abs(points).max())
    origins = points - back * axes
    r, tri, t = mesh.bvh.intersect(origins, axes)
    entering = np.einsum("ij,ij->i", mesh.face_normals[tri], axes[r]) < 0.0
    r, tri, t = r[entering], tri[entering], t[entering]
    if len(r):
        order = np.lexsort((t, np.abs(t - back), r))
        r, tri, t = r[order], tri[order], t[order]
        first = np.ones(len(r), dtype=bool)
        first[1:] = r[1:] != r[:-1]
        r, tri, t = r[first], tri[first], t[first]
        found[r] = True
        hp[r] = origins[r] + t[:, None] * axes[r]
        hn[r] = mesh.face_normals[tri]
    return found, hp, hn


def _sample_pass(mesh: TriMesh, gripper: GripperModel, cfg: SamplerConfig, seed: int,
                 source: int, surface: TriMesh | None = None) -> list[GraspCandidate]:
    """Candidates from one mesh.

    With ``surface`` given, contact lines found on ``mesh`` are only proposals:
    each is snapped onto ``surface`` and re-tested there, so every emitted
    contact lies on the true object.
    """
    ss = np.random.SeedSequence(seed)
    surf_seed, ray_seed = ss.spawn(2)
    samples: SurfaceSamples = sample_surface(mesh, cfg.samples_per_object,
                                             int(surf_seed.generate_state(1, np.uint64)[0]))
    k = cfg.rays_per_point
    tol = np.deg2rad(cfg.antipodal_tol_deg)
    # rows ordered sample-major so merge order follows the sample index
    pts = np.repeat(samples.points, k, axis=0)
    nrm = np.repeat(samples.normals, k, axis=0)
    dirs = _cone_directions(-nrm, np.deg2rad(cfg.cone_vertex_angle_deg) / 2.0, np.random.default_rng(ray_seed))
    ok, p2, f2 = antipodal_contacts(mesh, pts, nrm, dirs, tol, gripper.max_opening)
    fn = mesh.face_normals
    if surface is not None:
        idx = np.flatnonzero(ok)
        axes = p2[idx] - pts[idx]
        axes /= np.linalg.norm(axes, axis=1, keepdims=True)
        found, pts, nrm = _snap_to_surface(surface, pts[idx], axes)
        pts, nrm, axes = pts[found], nrm[found], axes[found]
        ok, p2, f2 = antipodal_contacts(surface, pts, nrm, axes, tol, gripper.max_opening)
        fn = surface.face_normals
    out: list[GraspCandidate] = []
    for i in np.flatnonzero(ok):
        c = ContactPair(pts[i], p2[i], nrm[i], fn[f2[i]])
        out.extend(grasps_from_contacts(c, gripper, source))
    return out


def dedup_candidates(cands: list[GraspCandidate], eps: float, rotation_weight: float = 1.0) -> list[GraspCandidate]:
    """Drop candidates within ``eps`` grasp distance of an earlier kept candidate."""
    if eps <= 0 or len(cands) < 2:
        return list(cands)
    T = np.array([c.pose.translation for c in cands])
    Q = np.array([c.pose.rotation for c in cands])
    pairs = cKDTree(T).query_pairs(eps, output_type="ndarray")
    if len(pairs) == 0:
        return list(cands)
    pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    i, j = pairs[:, 0], pairs[:, 1]
    d = np.linalg.norm(T[i] - T[j], axis=1) + rotation_weight * np.arccos(
        np.clip(np.abs(np.einsum("ij,ij->i", Q[i], Q[j])), 0.0, 1.0))
    pairs = pairs[d < eps]
    removed = np.zeros(len(cands), dtype=bool)
    for a, b in pairs:  # sorted by a, so every keeper is final before it removes others
        if not removed[a]:
            removed[b] = True
    return [c for c, r in zip(cands, removed) if not r]


def sample_candidates(mesh: TriMesh, gripper: GripperModel, cfg: SamplerConfig, seed: int,
                      warnings: list[str] | None = None) -> list[GraspCandidate]:
    """Candidates from the original mesh followed by candidates from its decimation."""
    ss = np.random.SeedSequence(seed)
    s_orig, s_dec = (int(s.generate_state(1, np.uint64)[0]) for s in ss.spawn(2))
    cands = _sample_pass(mesh, gripper, cfg, s_orig, SOURCE_ORIGINAL)
    if cfg.decimation_factor < 1.0:
        try:
            dec = decimate(mesh, cfg.decimation_factor)
        except DecimationError as exc:
            msg = f"decimation skipped: {exc}"
            log.warning(msg)
            if warnings is not None:
                warnings.append(msg)
        else:
            cands += _sample_pass(dec, gripper, cfg, s_dec, SOURCE_DECIMATED, surface=mesh)
    return dedup_candidates(cands, cfg.dedup_eps)
