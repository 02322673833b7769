import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jawgrasp.cluster import (agglomerative_cluster, average_linkage_labels, distance_matrix, medoids,
                              representative_indices, thin_for_clustering)
from jawgrasp.geometry import GraspPose, compose, quat_from_axis_angle, random_quaternions

from oracles import naive_average_linkage, same_partition


class G:
    def __init__(self, pose):
        self.pose = pose


def random_grasps(n, seed, spread=0.05):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-spread, spread, size=(max(1, n // 8), 3))
    T = centers[rng.integers(len(centers), size=n)] + rng.normal(scale=0.005, size=(n, 3))
    Q = random_quaternions(rng, n)
    return [G(GraspPose(q, t)) for q, t in zip(Q, T)]


@given(st.integers(1, 60), st.integers(0, 10_000), st.floats(0.0, 1.5))
def test_matches_naive(n, seed, threshold):
    D = distance_matrix(random_grasps(n, seed))
    assert np.array_equal(average_linkage_labels(D, threshold), naive_average_linkage(D, threshold))


def test_threshold_extremes():
    D = distance_matrix(random_grasps(30, 1))
    assert len(set(average_linkage_labels(D, -1.0))) == 30
    assert len(set(average_linkage_labels(D, 1e9))) == 1


def test_permutation_invariant():
    g = random_grasps(80, 4)
    perm = np.random.default_rng(0).permutation(80)
    a = agglomerative_cluster(g, 0.3).assignments
    b = agglomerative_cluster([g[i] for i in perm], 0.3).assignments
    assert same_partition(a[perm], b)


def test_rigid_invariant():
    g = random_grasps(80, 5)
    T = GraspPose(quat_from_axis_angle([1, -2, 0.5], 1.1), [0.3, -0.2, 0.1])
    moved = [G(compose(T, x.pose)) for x in g]
    a = agglomerative_cluster(g, 0.3)
    b = agglomerative_cluster(moved, 0.3)
    assert np.array_equal(a.assignments, b.assignments)
    assert np.array_equal(a.representatives, b.representatives)


def test_labels_canonical_and_medoids():
    g = random_grasps(50, 6)
    r = agglomerative_cluster(g, 0.4)
    first = [int(np.flatnonzero(r.assignments == c)[0]) for c in range(r.n_clusters)]
    assert first == sorted(first)
    D = distance_matrix(g)
    for c in range(r.n_clusters):
        m = r.members(c)
        cost = D[np.ix_(m, m)].sum(axis=1)
        assert D[r.representatives[c], m].sum() == pytest.approx(cost.min(), abs=1e-12)
    assert np.array_equal(medoids(D, r.assignments), r.representatives)


def test_representatives_largest_first():
    g = random_grasps(60, 7)
    r = agglomerative_cluster(g, 0.4)
    k = max(1, r.n_clusters // 2)
    idx = representative_indices(r, k, grasps=g)
    sizes = r.sizes()
    chosen = [int(r.assignments[i]) for i in idx]
    assert len(idx) == k and all(i in r.representatives for i in idx)
    assert sorted(sizes[chosen], reverse=True) == list(sizes[chosen])
    assert min(sizes[chosen]) >= np.delete(sizes, chosen).max(initial=0)


def test_representatives_exhaust():
    g = random_grasps(40, 8)
    r = agglomerative_cluster(g, 0.4)
    idx = representative_indices(r, 1000, grasps=g)
    assert sorted(idx.tolist()) == list(range(40))
    idx = representative_indices(r, r.n_clusters + 3, grasps=g)
    assert len(set(idx.tolist())) == r.n_clusters + 3
    with pytest.raises(ValueError):
        representative_indices(r, 0, grasps=g)


def test_single_and_empty():
    r = agglomerative_cluster(random_grasps(1, 0), 0.1)
    assert r.assignments.tolist() == [0] and r.representatives.tolist() == [0]
    with pytest.raises(ValueError):
        agglomerative_cluster([], 0.1)


def test_thinning():
    assert np.array_equal(thin_for_clustering(10, 20), np.arange(10))
    t = thin_for_clustering(10_000, 6000)
    assert len(t) == 6000 and t[0] == 0 and np.all(np.diff(t) > 0) and t[-1] < 10_000
