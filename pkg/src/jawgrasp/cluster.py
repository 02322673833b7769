"""Average-linkage agglomerative clustering of grasps under the SE(3) grasp
distance, and medoid-based representative selection.

The merge loop keeps the full distance matrix and a cached nearest neighbour
per active cluster; Lance-Williams updates keep it exact. The globally
closest pair is merged first, ties broken by the lowest (i, j) index pair
where a cluster's index is its smallest member.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import pairwise_se3_distance

DEFAULT_LINKAGE_THRESHOLD = 0.05
# n x n float64 distance matrix ceiling (~290 MB)
MAX_CLUSTER_POINTS = 6000


@dataclass(frozen=True, eq=False)
class ClusterResult:
    assignments: np.ndarray      # candidate index -> cluster id (0..k-1, ordered by smallest member)
    representatives: np.ndarray  # medoid candidate index per cluster id

    @property
    def n_clusters(self) -> int:
        return len(self.representatives)

    def members(self, cid: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == cid)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.n_clusters)


def pose_arrays(grasps: Sequence) -> tuple[np.ndarray, np.ndarray]:
    Q = np.array([g.pose.rotation for g in grasps], dtype=np.float64).reshape(-1, 4)
    T = np.array([g.pose.translation for g in grasps], dtype=np.float64).reshape(-1, 3)
    return Q, T


def distance_matrix(grasps: Sequence, rotation_weight: float = 1.0) -> np.ndarray:
    Q, T = pose_arrays(grasps)
    return pairwise_se3_distance(Q, T, rotation_weight)


def average_linkage_labels(D: np.ndarray, threshold: float) -> np.ndarray:
    """Flat average-linkage clusters of a precomputed distance matrix.

    Merging stops once the smallest inter-cluster linkage exceeds
    ``threshold``. Returns the representative (smallest member) index of each
    point's cluster.
    """
    n = len(D)
    label = np.arange(n)
    if n < 2:
        return label
    D = np.array(D, dtype=np.float64)
    np.fill_diagonal(D, np.inf)
    size = np.ones(n)
    active = np.ones(n, dtype=bool)
    nn = np.argmin(D, axis=1)  # first minimum = lowest index
    nn_d = D[np.arange(n), nn]

    while True:
        i = int(np.argmin(nn_d))  # lowest row among ties
        d = nn_d[i]
        if not d <= threshold:
            break
        j = int(nn[i])
        if j < i:  # row j holds the same minimum and a lower index
            i, j = j, i
        # merge j into i
        si, sj = size[i], size[j]
        new_row = (si * D[i] + sj * D[j]) / (si + sj)
        D[i, :] = new_row
        D[:, i] = new_row
        D[i, i] = np.inf
        D[j, :] = np.inf
        D[:, j] = np.inf
        size[i] = si + sj
        active[j] = False
        nn_d[j] = np.inf
        label[label == j] = i

        # rows whose cached neighbour was i or j must be refreshed; others can
        # only have gained i as a closer (or equally close, lower-index) neighbour
        stale = np.flatnonzero(active & ((nn == i) | (nn == j)))
        stale = stale[stale != i]
        row_i = D[i]
        closer = active & ((row_i < nn_d) | ((row_i == nn_d) & (i < nn)))
        closer[i] = False
        nn[closer] = i
        nn_d[closer] = row_i[closer]
        for k in np.concatenate([[i], stale]):
            a = int(np.argmin(D[k]))
            nn[k] = a
            nn_d[k] = D[k, a]
    return label


def _canonical(label: np.ndarray) -> np.ndarray:
    """Relabel clusters 0..k-1 in order of their smallest member."""
    _, first, inv = np.unique(label, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inv]


def medoids(D: np.ndarray, assignments: np.ndarray) -> np.ndarray:
    k = int(assignments.max()) + 1 if len(assignments) else 0
    reps = np.empty(k, dtype=np.int64)
    for c in range(k):
        idx = np.flatnonzero(assignments == c)
        cost = D[np.ix_(idx, idx)].sum(axis=1)
        reps[c] = idx[int(np.argmin(cost))]
    return reps


def thin_for_clustering(n: int, max_points: int = MAX_CLUSTER_POINTS) -> np.ndarray:
    """Evenly strided subset of indices when ``n`` exceeds the memory ceiling."""
    if n <= max_points:
        return np.arange(n)
    return np.unique(np.floor(np.arange(max_points) * (n / max_points)).astype(np.int64))


def agglomerative_cluster(grasps: Sequence, linkage_threshold: float = DEFAULT_LINKAGE_THRESHOLD,
                          rotation_weight: float = 1.0, D: np.ndarray | None = None) -> ClusterResult:
    if len(grasps) == 0:
        raise ValueError("need at least one grasp")
    if D is None:
        D = distance_matrix(grasps, rotation_weight)
    assignments = _canonical(average_linkage_labels(D, linkage_threshold))
    return ClusterResult(assignments, medoids(D, assignments))


def representative_indices(result: ClusterResult, n_target: int, D: np.ndarray | None = None,
                           grasps: Sequence | None = None, rotation_weight: float = 1.0) -> np.ndarray:
    """Indices of the grasps chosen for evaluation, in selection order.

    Largest clusters first (ties to lower cluster id). With at least
    ``n_target`` clusters only their medoids are taken; otherwise every medoid
    is followed by further members drawn round-robin from the clusters in the
    same order, nearest-to-medoid first.
    """
    if n_target < 1:
        raise ValueError("n_target must be >= 1")
    sizes = result.sizes()
    order = sorted(range(result.n_clusters), key=lambda c: (-sizes[c], c))
    if len(order) >= n_target:
        return np.array([result.representatives[c] for c in order[:n_target]], dtype=np.int64)
    if D is None:
        D = distance_matrix(grasps, rotation_weight)
    queues = []
    for c in order:
        m = result.members(c)
        med = result.representatives[c]
        rest = m[m != med]
        queues.append(list(rest[np.lexsort((rest, D[med, rest]))]))
    picked = [int(result.representatives[c]) for c in order]
    pos = 0
    while len(picked) < n_target and any(queues):
        q = queues[pos % len(queues)]
        if q:
            picked.append(int(q.pop(0)))
        pos += 1
    return np.array(picked, dtype=np.int64)


def select_representatives(result: ClusterResult, grasps: Sequence, n_target: int,
                           rotation_weight: float = 1.0) -> list:
    return [grasps[i] for i in representative_indices(result, n_target, grasps=grasps,
                                                      rotation_weight=rotation_weight)]
