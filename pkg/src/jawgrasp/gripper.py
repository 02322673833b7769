"""Parallel-jaw gripper geometry.

Gripper frame convention: +z is the approach axis (palm toward object), +x is
the closing axis, y = z x x, and the origin (TCP) sits midway between the
fingertips. Fingers are boxes extending from the palm to ``z = standoff``;
the palm is a box behind them. Dimensions are millimeters.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .geometry import GraspPose


class GripperError(ValueError):
    pass


@dataclass(frozen=True)
class GripperModel:
    name: str
    max_opening: float       # mm
    finger_width: float      # mm, along y
    finger_thickness: float  # mm, along x
    finger_length: float     # mm, along z
    palm_depth: float        # mm, along z
    palm_width: float = 80.0   # mm, along x
    palm_height: float = 30.0  # mm, along y
    standoff: float = 0.0      # mm, TCP to fingertip line

    def __post_init__(self):
        for f in fields(self):
            if f.name == "name":
                continue
            v = getattr(self, f.name)
            if f.name == "standoff":
                if v < 0:
                    raise GripperError("standoff must be >= 0")
            elif not v > 0:
                raise GripperError(f"{f.name} must be > 0, got {v}")

    def with_overrides(self, **kw) -> "GripperModel":
        unknown = set(kw) - {f.name for f in fields(self)}
        if unknown:
            raise GripperError(f"unknown gripper parameter(s): {sorted(unknown)}")
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    "franka_panda": GripperModel("franka_panda", max_opening=80.0, finger_width=18.0, finger_thickness=18.0,
                                 finger_length=50.0, palm_depth=30.0),
    "robotiq_2f85": GripperModel("robotiq_2f85", max_opening=85.0, finger_width=22.0, finger_thickness=15.0,
                                 finger_length=45.0, palm_depth=30.0),
}

# representatives evaluated per object for each preset
DEFAULT_N_REPRESENTATIVES = {"franka_panda": 2000, "robotiq_2f85": 5000}


def preset(name: str) -> GripperModel:
    try:
        return PRESETS[name]
    except KeyError:
        raise GripperError(f"unknown gripper {name!r}; expected one of {sorted(PRESETS)}") from None


def gripper_from_config(cfg: dict | None) -> GripperModel:
    """``{"preset": name, <field>: value, ...}`` -> GripperModel."""
    cfg = dict(cfg or {})
    base = preset(cfg.pop("preset", "robotiq_2f85"))
    return base.with_overrides(**cfg) if cfg else base


@dataclass(frozen=True, eq=False)
class OrientedBox:
    """Box with local half extents, placed by ``rotation`` (3x3) and ``center`` (meters)."""

    center: np.ndarray
    rotation: np.ndarray
    half_extents: np.ndarray

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        return self.center + (signs * self.half_extents) @ self.rotation.T

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        local = (np.atleast_2d(points) - self.center) @ self.rotation
        return np.all(np.abs(local) <= self.half_extents + tol, axis=1)

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        r = np.abs(self.rotation) @ self.half_extents
        return self.center - r, self.center + r


@dataclass(frozen=True, eq=False)
class GripperVolumes:
    left: OrientedBox
    right: OrientedBox
    palm: OrientedBox

    def boxes(self) -> tuple[OrientedBox, OrientedBox, OrientedBox]:
        return self.left, self.right, self.palm


def local_boxes(g: GripperModel, opening: float) -> list[tuple[np.ndarray, np.ndarray]]:
    """(lo, hi) corners of left finger, right finger, palm in the gripper frame, meters."""
    o, t, w, L = opening / 2000.0, g.finger_thickness / 1000.0, g.finger_width / 1000.0, g.finger_length / 1000.0
    tip = g.standoff / 1000.0
    base = tip - L
    pd, pw, ph = g.palm_depth / 1000.0, g.palm_width / 1000.0, g.palm_height / 1000.0
    return [
        (np.array([-o - t, -w / 2, base]), np.array([-o, w / 2, tip])),
        (np.array([o, -w / 2, base]), np.array([o + t, w / 2, tip])),
        (np.array([-pw / 2, -ph / 2, base - pd]), np.array([pw / 2, ph / 2, base])),
    ]


def finger_volumes(g: GripperModel, pose: GraspPose, opening: float) -> GripperVolumes:
    """Finger and palm boxes in the object frame for a gripper opened to ``opening`` mm."""
    if not 0.0 <= opening <= g.max_opening + 1e-9:
        raise GripperError(f"opening {opening} mm outside [0, {g.max_opening}]")
    R = pose.rotation_matrix()
    out = []
    for lo, hi in local_boxes(g, opening):
        out.append(OrientedBox(pose.apply((lo + hi) / 2.0), R, (hi - lo) / 2.0))
    return GripperVolumes(*out)
