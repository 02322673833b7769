import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jawgrasp.geometry import (GraspPose, TransformChain, compose, inverse, pairwise_se3_distance, quat_from_axis_angle,
                               quat_normalize, random_quaternions, rotation_equal, se3_distance, world_grasp)

from oracles import chain_matrix, pose_matrix, rotation_angle_between

finite = st.floats(-10, 10, allow_nan=False)
quat = st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 4).filter(lambda q: np.linalg.norm(q) > 0.1)
poses = st.builds(lambda q, t: GraspPose(np.array(q), np.array(t)), quat, st.tuples(finite, finite, finite))


def test_compose_identity_and_inverse():
    p = GraspPose(quat_from_axis_angle([1, 2, 3], 0.7), [0.1, -0.2, 0.3])
    assert compose(GraspPose.identity(), p).equals(p)
    e = compose(p, inverse(p))
    assert np.allclose(e.translation, 0, atol=1e-9) and rotation_equal(e.rotation, [1, 0, 0, 0])


def test_compose_pure_translations():
    r = compose(GraspPose.from_translation(1, 0, 0), GraspPose.from_translation(0, 2, 0))
    assert np.allclose(r.translation, [1, 2, 0]) and rotation_equal(r.rotation, [1, 0, 0, 0])


def test_distance_spot_values():
    g = GraspPose.identity()
    assert se3_distance(g, g) == 0.0
    assert se3_distance(g, GraspPose.from_translation(3, 4, 0)) == pytest.approx(5.0, abs=1e-12)
    flip = GraspPose(quat_from_axis_angle([0, 0, 1], math.pi))
    assert se3_distance(g, flip) == pytest.approx(math.pi / 2, abs=1e-9)


def test_quaternion_sign_is_same_rotation():
    q = quat_normalize([0.3, -0.5, 0.1, 0.8])
    assert rotation_equal(q, -q)
    a, b = GraspPose(q, [0, 0, 0]), GraspPose(-q, [0, 0, 0])
    assert se3_distance(a, b) < 1e-7  # arccos near 1 amplifies ulps


def test_normalize_is_idempotent():
    rng = np.random.default_rng(1)
    for q in random_quaternions(rng, 200):
        once = quat_normalize(q)
        assert np.array_equal(quat_normalize(once), once)


def test_pairwise_matches_scalar():
    rng = np.random.default_rng(2)
    Q = random_quaternions(rng, 20)
    T = rng.normal(size=(20, 3))
    D = pairwise_se3_distance(Q, T)
    for i in range(20):
        for j in range(20):
            assert D[i, j] == pytest.approx(se3_distance(GraspPose(Q[i], T[i]), GraspPose(Q[j], T[j])), abs=1e-12)


@given(poses, poses)
def test_distance_symmetric_nonnegative(a, b):
    d = se3_distance(a, b)
    assert d >= 0 and d == se3_distance(b, a)


@given(poses, poses, poses)
def test_triangle_inequality(a, b, c):
    assert se3_distance(a, c) <= se3_distance(a, b) + se3_distance(b, c) + 1e-9


@given(poses, poses, poses)
def test_compose_associative(a, b, c):
    l, r = compose(compose(a, b), c), compose(a, compose(b, c))
    assert np.allclose(l.translation, r.translation, atol=1e-9) and rotation_equal(l.rotation, r.rotation, 1e-9)


@given(poses)
def test_pose_bytes_roundtrip(p):
    b = p.to_bytes()
    assert len(b) == 56 and GraspPose.from_bytes(b).to_bytes() == b


@given(poses, poses)
def test_compose_matches_matrix_oracle(a, b):
    M = chain_matrix([a.to_array()], b.to_array())
    c = compose(a, b)
    assert np.allclose(c.matrix(), M, atol=1e-9)


def test_world_grasp_trivial_chains():
    g = GraspPose(quat_from_axis_angle([0, 1, 0], 0.3), [0.01, 0.02, 0.03])
    assert world_grasp(TransformChain.identity(), g).equals(g)
    links = [GraspPose.from_translation(0, 0, 1)] + [GraspPose() for _ in range(3)]
    w = world_grasp(TransformChain(*links), GraspPose())
    assert np.allclose(w.translation, [0, 0, 1])


def test_world_grasp_matrix_oracle_random_chains():
    rng = np.random.default_rng(8)
    for _ in range(200):
        qs = random_quaternions(rng, 5)
        ts = rng.normal(size=(5, 3))
        links = [GraspPose(q, t) for q, t in zip(qs[:4], ts[:4])]
        g = GraspPose(qs[4], ts[4])
        w = world_grasp(TransformChain(*links), g)
        M = chain_matrix([p.to_array() for p in links], g.to_array())
        assert np.abs(w.translation - M[:3, 3]).max() < 1e-9
        assert rotation_angle_between(w.rotation_matrix(), M[:3, :3]) < 1e-9


def test_pose_matrix_oracle_convention():
    # scalar-first w,x,y,z: 90 degrees about z maps x to y
    q = quat_from_axis_angle([0, 0, 1], math.pi / 2)
    assert np.allclose(pose_matrix(q, [0, 0, 0])[:3, :3] @ [1, 0, 0], [0, 1, 0])
    assert np.allclose(GraspPose(q).rotation_matrix() @ [1, 0, 0], [0, 1, 0])
