import numpy as np
import pytest

from jawgrasp import shapes
from jawgrasp.collision import check_opening, collides_batch, filter_noncolliding, gripper_collides, sat_overlap
from jawgrasp.geometry import GraspPose, quat_from_axis_angle, random_quaternions
from jawgrasp.gripper import preset
from jawgrasp.sampler import SamplerConfig, sample_candidates

from oracles import gripper_collides_oracle, pose_matrix, triangle_hits_box

GRIPPER = preset("franka_panda")


def random_poses(mesh, n, seed):
    rng = np.random.default_rng(seed)
    lo, hi = mesh.bounds
    Q = random_quaternions(rng, n)
    T = rng.uniform(lo - 0.04, hi + 0.04, size=(n, 3))
    openings = rng.uniform(0, GRIPPER.max_opening, size=n)
    return [GraspPose(q, t) for q, t in zip(Q, T)], openings


@pytest.mark.parametrize("name", ["cube", "sphere", "cylinder", "l_bracket", "torus"])
def test_matches_oracle(shapes_corpus, name):
    mesh = shapes_corpus[name]
    poses, openings = random_poses(mesh, 40, seed=hash(name) % 1000)
    got = collides_batch(mesh, GRIPPER, poses, openings)
    want = [gripper_collides_oracle(mesh.triangles, GRIPPER, pose_matrix(p.rotation, p.translation), o)
            for p, o in zip(poses, openings)]
    assert got.tolist() == want
    assert 0 < got.sum() < len(got)  # both outcomes exercised


def test_sat_matches_clipping():
    rng = np.random.default_rng(0)
    tri = rng.normal(size=(2000, 3, 3)) * 0.6
    half = np.array([0.5, 0.3, 0.2])
    n = len(tri)
    got = sat_overlap(tri, np.zeros((n, 3)), np.tile(np.eye(3), (n, 1, 1)), np.tile(half, (n, 1)))
    want = [triangle_hits_box(t, half) for t in tri]
    assert got.tolist() == want


def test_far_away_and_engulfed():
    cube = shapes.box(0.05, 0.05, 0.05)
    far = GraspPose(translation=[1.0, 0, 0])
    assert not gripper_collides(cube, GRIPPER, far, 40.0)
    big = shapes.box(1.0, 1.0, 1.0)  # gripper entirely inside, no triangle crossings
    assert gripper_collides(big, GRIPPER, GraspPose.identity(), 40.0)


def test_cube_face_grasp():
    cube = shapes.box(0.05, 0.05, 0.05)
    # approach from +z: gripper z axis points to -z
    pose = GraspPose(quat_from_axis_angle([1, 0, 0], np.pi), [0, 0, 0.0])
    assert not gripper_collides(cube, GRIPPER, pose, check_opening(GRIPPER, 50.0, 2.0))
    assert gripper_collides(cube, GRIPPER, pose, 45.0)
    # over the corner diagonal the 70.7 mm span does not fit a 54 mm opening
    diag = GraspPose(quat_from_axis_angle([0, 0, 1], np.pi / 4), [0, 0, 0.0])
    assert gripper_collides(cube, GRIPPER, diag, 54.0)


def test_opening_bounds():
    cube = shapes.box(0.05, 0.05, 0.05)
    with pytest.raises(ValueError):
        gripper_collides(cube, GRIPPER, GraspPose.identity(), GRIPPER.max_opening + 1)
    assert check_opening(GRIPPER, 79.0, 2.0) == GRIPPER.max_opening


def test_filter_idempotent_and_ordered(shapes_corpus):
    mesh = shapes_corpus["l_bracket"]
    cands = sample_candidates(mesh, GRIPPER, SamplerConfig(samples_per_object=128), seed=0)
    kept = filter_noncolliding(mesh, GRIPPER, cands)
    assert 0 < len(kept) < len(cands)
    pos = {id(c): i for i, c in enumerate(cands)}
    assert [pos[id(c)] for c in kept] == sorted(pos[id(c)] for c in kept)
    assert filter_noncolliding(mesh, GRIPPER, kept) == kept
    assert filter_noncolliding(mesh, GRIPPER, []) == []



@pytest.mark.parametrize("name", ["cube", "l_bracket"])
def test_retained_fraction_matches_oracle(shapes_corpus, name):
    mesh = shapes_corpus[name]
    cands = sample_candidates(mesh, GRIPPER, SamplerConfig(samples_per_object=24), seed=3)
    kept = {id(c) for c in filter_noncolliding(mesh, GRIPPER, cands, clearance_mm=2.0)}
    clear = [not gripper_collides_oracle(mesh.triangles, GRIPPER, pose_matrix(c.pose.rotation, c.pose.translation),
                                         min(c.width + 4.0, GRIPPER.max_opening)) for c in cands]
    assert [id(c) in kept for c in cands] == clear
    if name == "cube":
        assert all(clear)  # every antipodal face grasp on a convex block is reachable
    else:
        assert 0 < sum(clear) < len(cands)
