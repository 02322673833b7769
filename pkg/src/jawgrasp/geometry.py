"""Rigid-body math: unit quaternions, SE(3) poses, the grasp distance, and
the camera/robot calibration chain.

Quaternions are scalar-first ``(w, x, y, z)``. Translations are in meters.
All objects are immutable values and every function is pure.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

ROTATION_EQ_TOL = 1e-9
_POSE_STRUCT = struct.Struct("<7d")


# ---------------------------------------------------------------------------
# Quaternion helpers (operate on plain arrays)
# ---------------------------------------------------------------------------
def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError(f"cannot normalize quaternion {q!r}")
    if abs(n - 1.0) > 1e-15:  # leave unit input untouched so normalizing is idempotent
        q = q / n
    # canonical hemisphere so that equal rotations serialize identically
    if q[0] < 0.0 or (q[0] == 0.0 and q[np.flatnonzero(q)[0]] < 0.0):
        q = -q
    return q + 0.0  # drop negative zeros


def quat_mul(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(R) -> np.ndarray:
    """Shepperd's method; picks the numerically largest pivot."""
    R = np.asarray(R, dtype=np.float64)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    diag = (tr, R[0, 0], R[1, 1], R[2, 2])
    k = int(np.argmax(diag))
    if k == 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif k == 1:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif k == 2:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return quat_normalize(q)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    h = 0.5 * angle
    return quat_normalize(np.concatenate([[np.cos(h)], np.sin(h) * axis]))


def rotation_equal(q1, q2, tol: float = ROTATION_EQ_TOL) -> bool:
    """True when q1 and q2 are the same rotation (q and -q are identified)."""
    q1 = np.asarray(q1, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)
    return min(np.linalg.norm(q1 - q2), np.linalg.norm(q1 + q2)) < tol


def random_quaternions(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniformly distributed rotations (normalized Gaussian 4-vectors)."""
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    q[q[:, 0] < 0] *= -1.0
    return q


# ---------------------------------------------------------------------------
# Poses
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class GraspPose:
    """Rigid transform ``x -> R x + t``; rotation stored as a unit quaternion."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = quat_normalize(self.rotation)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    # constructors ---------------------------------------------------------
    @classmethod
    def identity(cls) -> "GraspPose":
        return cls()

    @classmethod
    def from_translation(cls, x: float, y: float, z: float) -> "GraspPose":
        return cls(translation=np.array([x, y, z], dtype=np.float64))

    @classmethod
    def from_matrix(cls, T) -> "GraspPose":
        T = np.asarray(T, dtype=np.float64)
        if T.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got shape {T.shape}")
        return cls(quat_from_matrix(T[:3, :3]), T[:3, 3])

    @classmethod
    def from_rotation_matrix(cls, R, t=(0.0, 0.0, 0.0)) -> "GraspPose":
        return cls(quat_from_matrix(R), np.asarray(t, dtype=np.float64))

    @classmethod
    def from_array(cls, a) -> "GraspPose":
        a = np.asarray(a, dtype=np.float64)
        return cls(a[:4], a[4:7])

    @classmethod
    def from_bytes(cls, buf: bytes) -> "GraspPose":
        return cls.from_array(_POSE_STRUCT.unpack(buf))

    # conversions ----------------------------------------------------------
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation_matrix()
        T[:3, 3] = self.translation
        return T

    def to_array(self) -> np.ndarray:
        """``(qw, qx, qy, qz, tx, ty, tz)``."""
        return np.concatenate([self.rotation, self.translation])

    def to_bytes(self) -> bytes:
        return _POSE_STRUCT.pack(*self.to_array())

    # algebra --------------------------------------------------------------
    def inverse(self) -> "GraspPose":
        qi = quat_conj(self.rotation)
        return GraspPose(qi, -quat_to_matrix(qi) @ self.translation)

    def __matmul__(self, other: "GraspPose") -> "GraspPose":
        return compose(self, other)

    def apply(self, points) -> np.ndarray:
        """Transform points of shape (..., 3)."""
        return np.asarray(points) @ self.rotation_matrix().T + self.translation

    def rotate(self, vectors) -> np.ndarray:
        return np.asarray(vectors) @ self.rotation_matrix().T

    def axis(self, i: int) -> np.ndarray:
        """Column ``i`` of the rotation matrix (0=x closing, 1=y, 2=z approach)."""
        return self.rotation_matrix()[:, i]

    def equals(self, other: "GraspPose", tol: float = ROTATION_EQ_TOL) -> bool:
        return (rotation_equal(self.rotation, other.rotation, tol)
                and np.linalg.norm(self.translation - other.translation) < tol)

    def __repr__(self) -> str:
        q = ", ".join(f"{v:.6g}" for v in self.rotation)
        t = ", ".join(f"{v:.6g}" for v in self.translation)
        return f"GraspPose(q=[{q}], t=[{t}])"


def compose(a: GraspPose, b: GraspPose) -> GraspPose:
    """``a * b``: apply ``b`` first, then ``a``."""
    q = quat_mul(a.rotation, b.rotation)
    t = quat_to_matrix(a.rotation) @ b.translation + a.translation
    return GraspPose(q, t)


def inverse(p: GraspPose) -> GraspPose:
    return p.inverse()


def _quat_angle(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """``arccos |q1 . q2|`` via the half-chord form, exact near zero (broadcasting over rows)."""
    s = np.where(np.sum(q1 * q2, axis=-1) < 0.0, -1.0, 1.0)[..., None]
    return 2.0 * np.arctan2(np.linalg.norm(q1 - s * q2, axis=-1), np.linalg.norm(q1 + s * q2, axis=-1))


def se3_distance(g1: GraspPose, g2: GraspPose, rotation_weight: float = 1.0) -> float:
    """Translation norm plus the rotation geodesic ``arccos |q1 . q2|``.

    Meters and radians are added unweighted by default; ``rotation_weight``
    rescales the angular term.
    """
    dt = float(np.linalg.norm(g1.translation - g2.translation))
    return dt + rotation_weight * float(_quat_angle(g1.rotation, g2.rotation))


def pairwise_se3_distance(Q: np.ndarray, T: np.ndarray, rotation_weight: float = 1.0,
                          Q2: np.ndarray | None = None, T2: np.ndarray | None = None) -> np.ndarray:
    """Vectorized distance matrix between pose sets given as (n,4) quats and (n,3) translations."""
    if Q2 is None:
        Q2, T2 = Q, T
    diff = T[:, None, :] - T2[None, :, :]
    dt = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    dot = np.abs(Q @ Q2.T)
    ang = np.arccos(np.clip(dot, 0.0, 1.0))
    # arccos is ill-conditioned near 1; redo near-parallel pairs exactly
    i, j = np.nonzero(dot > 0.99)
    ang[i, j] = _quat_angle(Q[i], Q2[j])
    return dt + rotation_weight * ang


# ---------------------------------------------------------------------------
# Calibration chain
# ---------------------------------------------------------------------------
CHAIN_LINKS = ("world_from_robot", "robot_from_flange", "flange_from_camera", "camera_from_object")


@dataclass(frozen=True)
class TransformChain:
    world_from_robot: GraspPose
    robot_from_flange: GraspPose
    flange_from_camera: GraspPose
    camera_from_object: GraspPose

    def links(self) -> tuple[GraspPose, ...]:
        return tuple(getattr(self, name) for name in CHAIN_LINKS)

    def world_from_object(self) -> GraspPose:
        return reduce(compose, self.links())

    @classmethod
    def identity(cls) -> "TransformChain":
        return cls(*(GraspPose() for _ in CHAIN_LINKS))


def world_grasp(chain: TransformChain, object_grasp: GraspPose) -> GraspPose:
    """World-frame grasp: world<-robot<-flange<-camera<-object<-grasp."""
    return reduce(compose, (*chain.links(), object_grasp))
