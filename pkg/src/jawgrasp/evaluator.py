"""Quasi-static grasp evaluation.

Each grasp is closed onto the mesh, the resulting contact patches are turned
into friction-cone wrench primitives, and the grasp is scored by the
grasp-wrench-space epsilon and by whether it can hold a fixed set of
perturbation wrenches with the available grip force.

Wrench primitives use a soft-contact model: every contact contributes
``cone_edges`` friction-cone edges (unit normal component), each paired
with +/- torsional friction ``mu * contact_patch_radius_m`` about the normal.
Torques are taken about the center of mass; the epsilon metric divides them
by the object radius so forces and torques share units.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

from .bvh import BVH
from .collision import check_opening, sat_overlap
from .geometry import GraspPose
from .gripper import GripperModel, local_boxes
from .mesh import TriMesh

EVAL_METHOD = "quasi_static_gws_v1"
CONTACT_BAND_M = 1e-4   # contacts: mesh within 0.1 mm of the finger face
SEARCH_TOL_M = 1e-6     # binary search resolution, 1e-3 mm
MAX_OUTLINE_POINTS = 8
SMOOTH_COS = math.cos(math.radians(15.0))
LEFT, RIGHT = 0, 1


class Reason(enum.IntEnum):
    OK = 0
    NO_CONTACT = 1
    SINGLE_FINGER = 2
    PERTURBATION = 3
    LOW_QUALITY = 4
    ERROR = 5


class NoContactError(RuntimeError):
    pass


@dataclass(frozen=True)
class PhysicalAssumptions:
    mass_kg: float = 0.1
    mu: float = 0.5
    cone_edges: int = 8
    gravity: float = 9.81
    quality_threshold: float = 0.01
    grip_force_n: float = 40.0
    contact_patch_radius_m: float = 0.002

    def __post_init__(self):
        if not self.mass_kg > 0:
            raise ValueError("mass_kg must be > 0")
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        if self.cone_edges < 3:
            raise ValueError("cone_edges must be >= 3")
        if not self.grip_force_n > 0:
            raise ValueError("grip_force_n must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class ContactSet:
    points: np.ndarray   # (k, 3) m
    normals: np.ndarray  # (k, 3) unit, pointing into the object
    finger: np.ndarray   # (k,) LEFT / RIGHT

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls) -> "ContactSet":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, dtype=np.int64))

    @classmethod
    def from_lists(cls, points, normals, finger) -> "ContactSet":
        n = np.asarray(normals, dtype=float).reshape(-1, 3)
        n = n / np.linalg.norm(n, axis=1, keepdims=True)
        return cls(np.asarray(points, dtype=float).reshape(-1, 3), n, np.asarray(finger, dtype=np.int64).reshape(-1))

    def fingers_touching(self) -> set[int]:
        return set(int(f) for f in np.unique(self.finger))

    def transformed(self, R, t) -> "ContactSet":
        return ContactSet(self.points @ np.asarray(R).T + t, self.normals @ np.asarray(R).T, self.finger)


@dataclass(frozen=True)
class EvalOutcome:
    success: bool
    quality: float
    close_width: float  # mm
    contact_count: int
    reason: int = Reason.OK


# ---------------------------------------------------------------------------
# Finger closing
# ---------------------------------------------------------------------------
def _clip_polygon(poly: list[np.ndarray], lo: np.ndarray, hi: np.ndarray) -> list[np.ndarray]:
    """Sutherland-Hodgman clip of a convex polygon against an axis-aligned box."""
    for axis in range(3):
        for bound, keep_le in ((hi[axis], True), (lo[axis], False)):
            if not poly:
                return poly
            out = []
            for k in range(len(poly)):
                a, b = poly[k - 1], poly[k]
                ina = a[axis] <= bound if keep_le else a[axis] >= bound
                inb = b[axis] <= bound if keep_le else b[axis] >= bound
                if ina != inb:
                    s = (bound - a[axis]) / (b[axis] - a[axis])
                    p = a + s * (b - a)
                    p[axis] = bound
                    out.append(p)
                if inb:
                    out.append(b)
            poly = out
    return poly


def _hull_reduce(points: np.ndarray) -> np.ndarray:
    """Indices of the 2D convex-hull vertices of coplanar-ish points (all if degenerate)."""
    if len(points) <= 3:
        return np.arange(len(points))
    c = points - points.mean(axis=0)
    _, s, vt = np.linalg.svd(c, full_matrices=False)
    if s[1] <= 1e-9 * max(s[0], 1e-300):
        # collinear: keep the two extremes
        proj = c @ vt[0]
        return np.unique([int(np.argmin(proj)), int(np.argmax(proj))])
    try:
        return np.sort(ConvexHull(c @ vt[:2].T).vertices)
    except QhullError:
        return np.arange(len(points))


class _FingerGeometry:
    """Finger sweep queries for one grasp, computed in the gripper frame."""

    def __init__(self, mesh: TriMesh, gripper: GripperModel, pose: GraspPose, opening_mm: float):
        self.pose = pose
        R = pose.rotation_matrix()
        self.R = R
        local_tri = (mesh.triangles - pose.translation) @ R  # gripper frame
        self.local_tri = local_tri
        self.local_normals = mesh.face_normals @ R
        left, right, _ = local_boxes(gripper, opening_mm)
        self.s_open = opening_mm / 2000.0
        self.t = gripper.finger_thickness / 1000.0
        self.yz_lo = right[0][1:]
        self.yz_hi = right[1][1:]
        # triangles that can meet either finger during the full sweep
        sweep_lo = np.array([-self.s_open - self.t, *self.yz_lo])
        sweep_hi = np.array([self.s_open + self.t, *self.yz_hi])
        lt = local_tri
        near = np.all((lt.min(axis=1) <= sweep_hi) & (lt.max(axis=1) >= sweep_lo), axis=1)
        self.near = np.flatnonzero(near)

    def _box(self, side: int, s: float):
        if side == RIGHT:
            lo = np.array([s, *self.yz_lo])
            hi = np.array([self.s_open + self.t, *self.yz_hi])
        else:
            lo = np.array([-self.s_open - self.t, *self.yz_lo])
            hi = np.array([-s, *self.yz_hi])
        return lo, hi

    def hits(self, side: int, s: float) -> bool:
        if not len(self.near):
            return False
        lo, hi = self._box(side, s)
        tri = self.local_tri[self.near]
        m = np.all((tri.min(axis=1) <= hi) & (tri.max(axis=1) >= lo), axis=1)
        if not m.any():
            return False
        tri = tri[m]
        k = len(tri)
        return bool(sat_overlap(tri, np.broadcast_to((lo + hi) / 2, (k, 3)), np.broadcast_to(np.eye(3), (k, 3, 3)),
                                np.broadcast_to((hi - lo) / 2, (k, 3))).any())

    def first_touch(self, side: int) -> float | None:
        """Inner-face offset from the TCP (m) at first touch; None if the finger reaches the center."""
        if self.hits(side, self.s_open):
            return self.s_open
        if not self.hits(side, 0.0):
            return None
        lo, hi = 0.0, self.s_open  # hits(lo) is True, hits(hi) is False
        while hi - lo > SEARCH_TOL_M:
            mid = 0.5 * (lo + hi)
            if self.hits(side, mid):
                lo = mid
            else:
                hi = mid
        return lo

    def _clip_facing(self, side: int, x_lo: float, x_hi: float, faces=None):
        """Facing triangles clipped to the finger's y/z window and the signed closing-axis band [x_lo, x_hi]."""
        sign = 1.0 if side == RIGHT else -1.0
        lo = np.array([x_lo, *self.yz_lo])
        hi = np.array([x_hi, *self.yz_hi])
        if side == LEFT:
            lo[0], hi[0] = -x_hi, -x_lo
        out = []
        for fi in self.near if faces is None else faces:
            n = self.local_normals[fi]
            if sign * n[0] <= 1e-9:  # surface must face the finger
                continue
            tri = self.local_tri[fi]
            if np.any(tri.max(axis=0) < lo) or np.any(tri.min(axis=0) > hi):
                continue
            poly = _clip_polygon([p.copy() for p in tri], lo, hi)
            if poly:
                out.append((fi, np.array(poly)))
        return out

    def contacts(self, side: int, s: float) -> tuple[np.ndarray, np.ndarray]:
        sign = 1.0 if side == RIGHT else -1.0
        coarse = self._clip_facing(side, s - CONTACT_BAND_M - 2 * SEARCH_TOL_M, s + 2 * SEARCH_TOL_M)
        if not coarse:
            return np.zeros((0, 3)), np.zeros((0, 3))
        # anchor the band at the exact first-touch depth so the patch does not
        # depend on where the bisection stopped
        top = max(float((sign * P[:, 0]).max()) for _, P in coarse)
        pts, nrm = [], []
        for fi, P in self._clip_facing(side, top - CONTACT_BAND_M, top, [fi for fi, _ in coarse]):
            keep = _hull_reduce(P)
            for p in P[keep]:
                pts.append(p)
                nrm.append(-self.local_normals[fi])
        return _patch_outline(np.array(pts), np.array(nrm))


def _patch_outline(pts: np.ndarray, nrm: np.ndarray, max_points: int = MAX_OUTLINE_POINTS):
    """Contacts on the outline of a finger's patch (gripper-frame y/z), at most ``max_points`` sites.

    Interior contacts add little to either metric and make the 6D hull slow
    and ill-conditioned. Face normals meeting at a site are merged when within 15 degrees of each
    other (tessellation of a smooth surface); sharper edges keep one contact per side.
    """
    key = np.round(np.hstack([pts, nrm]), 12)
    _, first = np.unique(key, axis=0, return_index=True)
    first = np.sort(first)
    pts, nrm = pts[first], nrm[first]
    sites, site_of = np.unique(np.round(pts, 12), axis=0, return_inverse=True)
    site_of = site_of.ravel()
    if len(sites) > 3:
        try:
            order = ConvexHull(sites[:, 1:]).vertices  # counter-clockwise
        except QhullError:
            order = _hull_reduce(sites)
    else:
        order = np.arange(len(sites))
    if len(order) > max_points:
        start = int(np.argmin(order))
        order = np.roll(order, -start)[np.floor(np.arange(max_points) * len(order) / max_points).astype(int)]
    out_p, out_n = [], []
    for site in np.sort(order):
        group = nrm[site_of == site]
        used = np.zeros(len(group), dtype=bool)
        for k in range(len(group)):
            if used[k]:
                continue
            near = ~used & (group @ group[k] >= SMOOTH_COS)
            used |= near
            n = group[near].sum(axis=0)
            out_p.append(sites[site])
            out_n.append(n / np.linalg.norm(n))
    return np.array(out_p), np.array(out_n)


def close_fingers(mesh: TriMesh, gripper: GripperModel, pose: GraspPose,
                  opening: float | None = None) -> tuple[ContactSet, float]:
    """Close both fingers onto the mesh from ``opening`` mm (default: fully open).

    Each finger advances along the closing axis until its inner face first
    touches the mesh. Contacts are the mesh points within 0.1 mm of each
    touching face, clipped to the face rectangle.
    """
    if opening is None:
        opening = gripper.max_opening
    geo = _FingerGeometry(mesh, gripper, pose, opening)
    s = {side: geo.first_touch(side) for side in (LEFT, RIGHT)}
    if s[LEFT] is None and s[RIGHT] is None:
        raise NoContactError("fingers closed completely without touching the object")
    pts, nrm, fing = [], [], []
    for side in (LEFT, RIGHT):
        if s[side] is None:
            continue
        p, n = geo.contacts(side, s[side])
        pts.append(p)
        nrm.append(n)
        fing.append(np.full(len(p), side, dtype=np.int64))
    R, t = geo.R, pose.translation
    P = np.concatenate(pts) @ R.T + t
    N = np.concatenate(nrm) @ R.T
    N /= np.linalg.norm(N, axis=1, keepdims=True)
    width = 1000.0 * sum(v for v in s.values() if v is not None)
    return ContactSet(P, N, np.concatenate(fing)), width


# ---------------------------------------------------------------------------
# Wrench space
# ---------------------------------------------------------------------------
def _reference_direction(contacts: ContactSet, com: np.ndarray) -> np.ndarray:
    """Frame-equivariant unit vector used to orient the discretized friction cones."""
    e1 = contacts.normals[0]
    cands = list(contacts.points - com) + list(contacts.normals) + list(contacts.points - contacts.points[0])
    for v in cands:
        w = v - np.dot(v, e1) * e1
        n = np.linalg.norm(w)
        if n > 1e-9:
            return w / n
    # configuration is symmetric about e1; any perpendicular works
    u = np.cross(e1, [1.0, 0.0, 0.0] if abs(e1[0]) < 0.9 else [0.0, 1.0, 0.0])
    return u / np.linalg.norm(u)


def contact_primitives(contacts: ContactSet, a: PhysicalAssumptions, com) -> tuple[np.ndarray, np.ndarray]:
    """Wrench primitives (forces, torques about ``com``) in N and N*m per newton of normal force.

    Returns ``(W, owner)`` with W of shape (k * cone_edges * 2, 6) and the
    contact index of each primitive.
    """
    com = np.asarray(com, dtype=float)
    if len(contacts) == 0:
        return np.zeros((0, 6)), np.zeros(0, dtype=np.int64)
    ref = _reference_direction(contacts, com)
    m = a.cone_edges
    phi = 2.0 * np.pi * np.arange(m) / m
    gamma = a.mu * a.contact_patch_radius_m
    rows, owner = [], []
    for k, (p, n) in enumerate(zip(contacts.points, contacts.normals)):
        t1 = ref - np.dot(ref, n) * n
        if np.linalg.norm(t1) < 1e-9:
            alt = np.cross(n, ref)
            t1 = alt if np.linalg.norm(alt) > 1e-9 else np.cross(n, [1.0, 0.0, 0.0])
        t1 /= np.linalg.norm(t1)
        t2 = np.cross(n, t1)
        f = n + a.mu * (np.cos(phi)[:, None] * t1 + np.sin(phi)[:, None] * t2)
        tau = np.cross(p - com, f)
        for s in (1.0, -1.0):
            rows.append(np.hstack([f, tau + s * gamma * n]))
            owner.append(np.full(m, k))
    return np.vstack(rows), np.concatenate(owner)


def wrench_quality(contacts: ContactSet, assumptions: PhysicalAssumptions, com, radius: float | None = None) -> float:
    """Largest origin-centred ball inside the convex hull of the contact wrench primitives."""
    if len(contacts) == 0:
        return 0.0
    com = np.asarray(com, dtype=float)
    if radius is None:
        radius = float(np.linalg.norm(contacts.points - com, axis=1).max()) or 1.0
    W, _ = contact_primitives(contacts, assumptions, com)
    W = W.copy()
    W[:, 3:] /= radius
    W = np.unique(np.round(W, 12), axis=0)
    if len(W) < 7 or np.linalg.matrix_rank(W - W.mean(axis=0), tol=1e-10) < 6:
        return 0.0
    try:
        hull = ConvexHull(W)
    except QhullError:
        # near-degenerate input; joggled hull is always simplicial
        try:
            hull = ConvexHull(W, qhull_options="QJ")
        except QhullError:
            return 0.0
    offsets = hull.equations[:, -1]  # n . x + b <= 0 inside
    if np.any(offsets >= -1e-12):
        return 0.0
    return float(-offsets.max())


def _resists(W: np.ndarray, finger_of: np.ndarray, wrench: np.ndarray, budget: float) -> bool:
    """LP feasibility: nonnegative primitive weights cancel ``wrench`` within per-finger budgets."""
    if len(W) == 0:
        return False
    fingers = np.unique(finger_of)
    A_ub = np.array([(finger_of == f).astype(float) for f in fingers])
    res = linprog(np.zeros(len(W)), A_ub=A_ub, b_ub=np.full(len(fingers), budget),
                  A_eq=W.T, b_eq=-wrench, bounds=(0, None), method="highs")
    return res.status == 0


def squeeze_stable(contacts: ContactSet, pose: GraspPose, mu: float) -> np.ndarray:
    """Contacts whose own friction cone contains the finger's squeeze direction.

    Wedge contacts (finger resting on an edge or vertex) hold the squeeze only
    jointly; a small rotation about the approach axis unloads one side and the
    rest slips, so they do not count toward torsional holding.
    """
    x = pose.axis(0)
    squeeze = np.where((contacts.finger == RIGHT)[:, None], -x, x)
    cosang = np.einsum("ij,ij->i", contacts.normals, squeeze)
    return cosang >= math.cos(math.atan(mu)) - 1e-9


def perturbation_wrenches(assumptions: PhysicalAssumptions, pose: GraspPose, radius: float):
    """Gravity along +/- each grasp axis, then +/- torque about the approach axis."""
    mg = assumptions.mass_kg * assumptions.gravity
    R = pose.rotation_matrix()
    loads = []
    for i in range(3):
        for s in (1.0, -1.0):
            loads.append(np.concatenate([s * mg * R[:, i], np.zeros(3)]))
    torques = [np.concatenate([np.zeros(3), s * mg * radius * R[:, 2]]) for s in (1.0, -1.0)]
    return loads, torques


def perturbation_test(contacts: ContactSet, assumptions: PhysicalAssumptions, com, pose: GraspPose,
                      radius: float) -> bool:
    """Whether the grasp holds every perturbation wrench with the available grip force."""
    if len(contacts) == 0:
        return False
    com = np.asarray(com, dtype=float)
    W, owner = contact_primitives(contacts, assumptions, com)
    finger_of = contacts.finger[owner]
    loads, torques = perturbation_wrenches(assumptions, pose, radius)
    F = assumptions.grip_force_n
    for w in loads:
        if not _resists(W, finger_of, w, F):
            return False
    stable = squeeze_stable(contacts, pose, assumptions.mu)
    if len(set(contacts.finger[stable].tolist())) < 2:
        return False
    keep = stable[owner]
    for w in torques:
        if not _resists(W[keep], finger_of[keep], w, F):
            return False
    return True


# ---------------------------------------------------------------------------
def evaluate_grasp(mesh: TriMesh, gripper: GripperModel, pose: GraspPose, width: float,
                   assumptions: PhysicalAssumptions, clearance_mm: float = 2.0) -> EvalOutcome:
    com, radius = mesh.center_of_mass, mesh.bounding_radius
    try:
        contacts, close_w = close_fingers(mesh, gripper, pose, check_opening(gripper, width, clearance_mm))
    except NoContactError:
        return EvalOutcome(False, 0.0, 0.0, 0, Reason.NO_CONTACT)
    n = len(contacts)
    if contacts.fingers_touching() != {LEFT, RIGHT}:
        return EvalOutcome(False, 0.0, close_w, n, Reason.SINGLE_FINGER)
    q = wrench_quality(contacts, assumptions, com, radius)
    if not perturbation_test(contacts, assumptions, com, pose, radius):
        return EvalOutcome(False, q, close_w, n, Reason.PERTURBATION)
    if q < assumptions.quality_threshold:
        return EvalOutcome(False, q, close_w, n, Reason.LOW_QUALITY)
    return EvalOutcome(True, q, close_w, n, Reason.OK)


def evaluate_grasps(mesh: TriMesh, gripper: GripperModel, grasps: Sequence, assumptions: PhysicalAssumptions,
                    clearance_mm: float = 2.0) -> list[EvalOutcome]:
    """One outcome per grasp, in input order; failures inside a grasp become ``Reason.ERROR``."""
    out = []
    for g in grasps:
        try:
            out.append(evaluate_grasp(mesh, gripper, g.pose, g.width, assumptions, clearance_mm))
        except (ValueError, np.linalg.LinAlgError, QhullError):
            out.append(EvalOutcome(False, 0.0, 0.0, 0, Reason.ERROR))
    return out
