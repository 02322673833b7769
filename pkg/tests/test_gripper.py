import numpy as np
import pytest

from jawgrasp.geometry import GraspPose, quat_from_axis_angle
from jawgrasp.gripper import (PRESETS, GripperError, GripperModel, OrientedBox, finger_volumes, gripper_from_config,
                              local_boxes, preset)

from oracles import gripper_boxes_oracle, pose_matrix


def test_presets():
    f, r = PRESETS["franka_panda"], PRESETS["robotiq_2f85"]
    assert (f.max_opening, f.finger_width, f.finger_thickness, f.finger_length) == (80, 18, 18, 50)
    assert (r.max_opening, r.finger_width, r.finger_thickness, r.finger_length) == (85, 22, 15, 45)
    assert preset("franka_panda") is f


def test_unknown_preset_and_bad_dims():
    with pytest.raises(GripperError):
        preset("nope")
    with pytest.raises(GripperError):
        GripperModel("x", max_opening=0, finger_width=1, finger_thickness=1, finger_length=1, palm_depth=1)
    with pytest.raises(GripperError):
        GripperModel("x", 1, 1, 1, 1, 1, standoff=-1)
    with pytest.raises(GripperError):
        gripper_from_config({"preset": "franka_panda", "wingspan": 3})


def test_config_override():
    g = gripper_from_config({"preset": "franka_panda", "max_opening": 100.0})
    assert g.max_opening == 100.0 and g.finger_length == 50.0
    assert gripper_from_config(None).name == "robotiq_2f85"


def test_local_layout():
    g = preset("robotiq_2f85")
    (llo, lhi), (rlo, rhi), (plo, phi) = local_boxes(g, 40.0)
    assert lhi[0] == pytest.approx(-0.02) and rlo[0] == pytest.approx(0.02)
    assert rhi[0] - rlo[0] == pytest.approx(0.015)
    assert lhi[2] == rhi[2] == 0.0  # fingertips at the TCP plane
    assert rlo[2] == pytest.approx(-0.045) and phi[2] == pytest.approx(rlo[2])


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_volumes_match_oracle(name):
    g = PRESETS[name]
    rng = np.random.default_rng(3)
    for _ in range(20):
        pose = GraspPose(quat_from_axis_angle(rng.normal(size=3), rng.uniform(0, np.pi)), rng.normal(size=3) * 0.1)
        o = rng.uniform(0, g.max_opening)
        vols = finger_volumes(g, pose, o)
        for box, (c, R, h) in zip(vols.boxes(), gripper_boxes_oracle(g, pose_matrix(pose.rotation, pose.translation), o)):
            assert np.allclose(box.center, c, atol=1e-12)
            assert np.allclose(box.rotation, R, atol=1e-12)
            assert np.allclose(box.half_extents, h, atol=1e-15)


def test_opening_range():
    g = preset("franka_panda")
    with pytest.raises(GripperError):
        finger_volumes(g, GraspPose.identity(), 81.0)
    with pytest.raises(GripperError):
        finger_volumes(g, GraspPose.identity(), -1.0)


def test_oriented_box():
    R = pose_matrix(quat_from_axis_angle([0, 0, 1], np.pi / 4), [0, 0, 0])[:3, :3]
    b = OrientedBox(np.array([1.0, 0, 0]), R, np.array([1.0, 0.5, 0.25]))
    corners = b.corners()
    assert corners.shape == (8, 3)
    assert b.contains(corners, tol=1e-12).all()
    assert not b.contains([[3.0, 0, 0]])[0]
    lo, hi = b.aabb()
    assert np.allclose(lo, corners.min(axis=0)) and np.allclose(hi, corners.max(axis=0))
