"""Quadric-error edge-collapse decimation that keeps closed meshes closed.

A collapse is accepted only if it passes the link condition (the mesh stays a
2-manifold), does not flip or degenerate any surviving face, and does not
produce duplicate faces. Candidate edges are processed in (cost, u, v) order
so the output is deterministic.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

from .mesh import TriMesh, is_watertight

_FLIP_COS = 0.2


class DecimationError(RuntimeError):
    pass


def _cross(a, b):
    return (a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])


def decimate(mesh: TriMesh, factor: float) -> TriMesh:
    """Collapse edges until at most ``floor(factor * faces)`` faces remain.

    ``factor`` is the fraction of faces retained. Raises
    :class:`DecimationError` if the input is not watertight or no further
    collapse can be made without breaking watertightness.
    """
    if not 0.0 < factor <= 1.0:
        raise ValueError(f"factor must be in (0, 1], got {factor}")
    if factor == 1.0:
        return mesh
    if not is_watertight(mesh):
        raise DecimationError("input mesh is not watertight")
    target = int(math.floor(factor * mesh.num_faces))
    if target < 4:
        raise DecimationError(f"target of {target} faces is below a tetrahedron")
    out = _Collapser(mesh).run(target)
    if not is_watertight(out):  # pragma: no cover - guarded by construction
        raise DecimationError("decimation broke watertightness")
    return out


class _Collapser:
    def __init__(self, mesh: TriMesh):
        self.pos = mesh.vertices.copy()
        self.faces = mesh.faces.copy()
        self.alive = np.ones(len(self.faces), dtype=bool)
        self.n_alive = len(self.faces)
        self.vfaces: list[set[int]] = [set() for _ in range(len(self.pos))]
        for fi, f in enumerate(self.faces):
            for v in f:
                self.vfaces[v].add(fi)
        self.version = np.zeros(len(self.pos), dtype=np.int64)

        # area-weighted plane quadrics
        tri = mesh.triangles
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        area = np.linalg.norm(n, axis=1)
        n = n / area[:, None]
        d = -np.einsum("ij,ij->i", n, tri[:, 0])
        plane = np.c_[n, d]
        K = 0.5 * area[:, None, None] * plane[:, :, None] * plane[:, None, :]
        self.Q = np.zeros((len(self.pos), 4, 4))
        for k in range(3):
            np.add.at(self.Q, self.faces[:, k], K)
        scale = float(np.linalg.norm(mesh.bounds[1] - mesh.bounds[0]))
        self.area_eps = 1e-12 * scale * scale

    # ------------------------------------------------------------------
    def neighbors(self, v: int) -> set[int]:
        out = set()
        for fi in self.vfaces[v]:
            out.update(self.faces[fi])
        out.discard(v)
        return out

    def edge_cost(self, u: int, v: int) -> tuple[float, np.ndarray]:
        Q = self.Q[u] + self.Q[v]
        A = Q.copy()
        A[3] = [0.0, 0.0, 0.0, 1.0]
        cands = [self.pos[u], self.pos[v], 0.5 * (self.pos[u] + self.pos[v])]
        if abs(np.linalg.det(A)) > 1e-12 * (np.abs(A).max() ** 3 + 1e-300):
            x = np.linalg.solve(A, [0.0, 0.0, 0.0, 1.0])[:3]
            # reject far-flung optima from near-singular systems
            if np.linalg.norm(x - cands[2]) <= 2.0 * np.linalg.norm(self.pos[u] - self.pos[v]):
                cands.insert(0, x)
        best, best_x = math.inf, None
        for x in cands:
            h = np.append(x, 1.0)
            c = float(h @ Q @ h)
            if c < best - 1e-18:
                best, best_x = c, x
        return max(best, 0.0), best_x

    def edge_costs(self, U: np.ndarray, V: np.ndarray) -> np.ndarray:
        """Batched :meth:`edge_cost` (cost only), same candidates and tie rule."""
        Q = self.Q[U] + self.Q[V]
        A = Q.copy()
        A[:, 3] = [0.0, 0.0, 0.0, 1.0]
        pu, pv = self.pos[U], self.pos[V]
        mid = 0.5 * (pu + pv)
        ok = np.abs(np.linalg.det(A)) > 1e-12 * (np.abs(A).max(axis=(1, 2)) ** 3 + 1e-300)
        x = np.full_like(mid, np.nan)
        if ok.any():
            rhs = np.broadcast_to([0.0, 0.0, 0.0, 1.0], (int(ok.sum()), 4))[..., None]
            x[ok] = np.linalg.solve(A[ok], rhs)[:, :3, 0]
        ok &= np.linalg.norm(x - mid, axis=1) <= 2.0 * np.linalg.norm(pu - pv, axis=1)
        best = np.full(len(U), np.inf)
        for cand, valid in ((x, ok), (pu, None), (pv, None), (mid, None)):
            h = np.c_[np.where(np.isfinite(cand), cand, 0.0), np.ones(len(U))]
            c = np.einsum("ni,nij,nj->n", h, Q, h)
            if valid is not None:
                c = np.where(valid, c, np.inf)
            best = np.where(c < best - 1e-18, c, best)
        return np.maximum(best, 0.0)

    def push_edges(self, heap, v: int):
        for w in self.neighbors(v):
            a, b = (v, w) if v < w else (w, v)
            cost, _ = self.edge_cost(a, b)
            heapq.heappush(heap, (cost, a, b, int(self.version[a]), int(self.version[b])))

    def try_collapse(self, u: int, v: int, x: np.ndarray) -> bool:
        shared = self.vfaces[u] & self.vfaces[v]
        if len(shared) != 2:
            return False
        opposite = set()
        for fi in shared:
            opposite.update(self.faces[fi])
        opposite -= {u, v}
        if self.neighbors(u) & self.neighbors(v) != opposite:
            return False  # link condition
        if self.n_alive - 2 < 4:
            return False
        survivors = (self.vfaces[u] | self.vfaces[v]) - shared
        seen = set()
        for fi in survivors:
            f = self.faces[fi]
            old = self.pos[f]
            new = np.where(np.isin(f, (u, v))[:, None], x, old)
            n_old = _cross(old[1] - old[0], old[2] - old[0])
            n_new = _cross(new[1] - new[0], new[2] - new[0])
            a_new = math.sqrt(n_new[0] ** 2 + n_new[1] ** 2 + n_new[2] ** 2)
            if a_new <= self.area_eps:
                return False
            a_old = math.sqrt(n_old[0] ** 2 + n_old[1] ** 2 + n_old[2] ** 2)
            if n_old[0] * n_new[0] + n_old[1] * n_new[1] + n_old[2] * n_new[2] <= _FLIP_COS * a_old * a_new:
                return False
            key = frozenset(u if k == v else int(k) for k in f)
            if key in seen:
                return False
            seen.add(key)
        # commit: v merges into u
        for fi in shared:
            self.alive[fi] = False
            for k in self.faces[fi]:
                self.vfaces[k].discard(fi)
        self.n_alive -= 2
        for fi in list(self.vfaces[v]):
            self.faces[fi][self.faces[fi] == v] = u
            self.vfaces[u].add(fi)
        self.vfaces[v] = set()
        self.pos[u] = x
        self.Q[u] = self.Q[u] + self.Q[v]
        self.version[u] += 1
        self.version[v] += 1
        return True

    def run(self, target: int) -> TriMesh:
        e = np.sort(np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]]), axis=1)
        _, first = np.unique(e, axis=0, return_index=True)
        e = e[np.sort(first)]  # first-seen order
        costs = self.edge_costs(e[:, 0], e[:, 1])
        heap = [(float(c), int(a), int(b), 0, 0) for c, (a, b) in zip(costs, e)]
        heapq.heapify(heap)
        while self.n_alive > target:
            if not heap:
                raise DecimationError(
                    f"cannot reach {target} faces without breaking watertightness (stuck at {self.n_alive})")
            cost, u, v, vu, vv = heapq.heappop(heap)
            if vu != self.version[u] or vv != self.version[v] or not self.vfaces[u] or not self.vfaces[v]:
                continue
            _, x = self.edge_cost(u, v)
            if self.try_collapse(u, v, x):
                self.push_edges(heap, u)
        keep_v = np.zeros(len(self.pos), dtype=bool)
        faces = self.faces[self.alive]
        keep_v[faces.ravel()] = True
        remap = np.cumsum(keep_v) - 1
        return TriMesh(self.pos[keep_v], remap[faces])
