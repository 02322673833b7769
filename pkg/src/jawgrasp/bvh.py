"""Bounding-volume hierarchy over triangles with batched ray queries.

Traversal is breadth-first over (ray, node) pairs so that every step is a
vectorized numpy operation; the tree itself is a flat array layout.
"""

from __future__ import annotations

import numpy as np

LEAF_SIZE = 8
RAY_EPS = 1e-7
_BARY_EPS = 1e-12


class BVH:
    """Median-split BVH over a triangle soup of shape (m, 3, 3)."""

    def __init__(self, triangles: np.ndarray, leaf_size: int = LEAF_SIZE):
        self.triangles = np.ascontiguousarray(triangles, dtype=np.float64)
        m = len(self.triangles)
        lo = self.triangles.min(axis=1)
        hi = self.triangles.max(axis=1)
        centroids = self.triangles.mean(axis=1)

        order = np.arange(m)
        node_lo, node_hi, left, right, start, count = [], [], [], [], [], []
        # iterative build; node i is appended before its children
        stack = [(0, m, -1, 0)]  # (begin, end, parent, is_right)
        while stack:
            b, e, parent, is_right = stack.pop()
            idx = len(node_lo)
            if parent >= 0:
                (right if is_right else left)[parent] = idx
            ids = order[b:e]
            node_lo.append(lo[ids].min(axis=0))
            node_hi.append(hi[ids].max(axis=0))
            left.append(-1)
            right.append(-1)
            start.append(b)
            count.append(e - b)
            if e - b <= leaf_size:
                continue
            c = centroids[ids]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            sub = np.argsort(c[:, axis], kind="stable")
            order[b:e] = ids[sub]
            mid = b + (e - b) // 2
            count[idx] = 0
            stack.append((mid, e, idx, 1))
            stack.append((b, mid, idx, 0))

        self.order = order
        self.node_lo = np.array(node_lo).reshape(-1, 3)
        self.node_hi = np.array(node_hi).reshape(-1, 3)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.start = np.array(start, dtype=np.int64)
        self.count = np.array(count, dtype=np.int64)

    # ------------------------------------------------------------------
    def candidate_pairs(self, origins: np.ndarray, dirs: np.ndarray, t_min: float = RAY_EPS):
        """(ray index, triangle index) pairs whose leaf boxes the rays cross."""
        R = len(origins)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
        rays = np.arange(R)
        nodes = np.zeros(R, dtype=np.int64)
        out_r, out_t = [], []
        while len(rays):
            o = origins[rays]
            iv = inv[rays]
            with np.errstate(invalid="ignore"):
                t0 = (self.node_lo[nodes] - o) * iv
                t1 = (self.node_hi[nodes] - o) * iv
            # 0 * inf -> nan when the origin sits on a slab plane; treat as unbounded
            tn = np.where(np.isnan(t0), -np.inf, np.minimum(t0, t1))
            tf = np.where(np.isnan(t1), np.inf, np.maximum(t0, t1))
            tnear = tn.max(axis=1)
            tfar = tf.min(axis=1)
            hit = (tfar >= tnear) & (tfar >= t_min)
            rays, nodes = rays[hit], nodes[hit]
            leaf = self.left[nodes] < 0
            lr, ln = rays[leaf], nodes[leaf]
            if len(lr):
                cnt = self.count[ln]
                rr = np.repeat(lr, cnt)
                offs = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
                out_r.append(rr)
                out_t.append(self.order[np.repeat(self.start[ln], cnt) + offs])
            ir, inn = rays[~leaf], nodes[~leaf]
            rays = np.concatenate([ir, ir])
            nodes = np.concatenate([self.left[inn], self.right[inn]])
        if not out_r:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        return np.concatenate(out_r), np.concatenate(out_t)

    def intersect(self, origins, dirs, t_min: float = RAY_EPS):
        """All ray/triangle hits with ``t > t_min``.

        Returns ``(ray_index, tri_index, t)`` sorted by ray then distance.
        Coincident hits on a shared edge or vertex are collapsed to the lowest
        triangle index.
        """
        origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
        dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
        r, tri = self.candidate_pairs(origins, dirs, t_min)
        t, ok = ray_triangle(origins[r], dirs[r], self.triangles[tri])
        ok &= t > t_min
        r, tri, t = r[ok], tri[ok], t[ok]
        key = np.lexsort((tri, t, r))
        r, tri, t = r[key], tri[key], t[key]
        if len(r) > 1:
            dup = np.zeros(len(r), dtype=bool)
            dup[1:] = (r[1:] == r[:-1]) & (np.abs(t[1:] - t[:-1]) <= 1e-9 * np.maximum(1.0, np.abs(t[1:])))
            # chains of near-equal hits collapse onto the first of the chain
            r, tri, t = r[~dup], tri[~dup], t[~dup]
        return r, tri, t

    def first_hit(self, origins, dirs, t_min: float = RAY_EPS):
        """Nearest hit per ray: ``(tri_index, t)`` with -1 / inf for misses."""
        origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
        n = len(origins)
        tri_out = np.full(n, -1, dtype=np.int64)
        t_out = np.full(n, np.inf)
        r, tri, t = self.intersect(origins, dirs, t_min)
        if len(r):
            first = np.ones(len(r), dtype=bool)
            first[1:] = r[1:] != r[:-1]
            tri_out[r[first]] = tri[first]
            t_out[r[first]] = t[first]
        return tri_out, t_out

    def box_pairs(self, lo: np.ndarray, hi: np.ndarray):
        """(box index, triangle index) pairs whose AABBs may overlap; batched over boxes."""
        lo = np.atleast_2d(lo)
        hi = np.atleast_2d(hi)
        boxes = np.arange(len(lo))
        nodes = np.zeros(len(lo), dtype=np.int64)
        out_b, out_t = [], []
        while len(boxes):
            keep = np.all((self.node_lo[nodes] <= hi[boxes]) & (self.node_hi[nodes] >= lo[boxes]), axis=1)
            boxes, nodes = boxes[keep], nodes[keep]
            leaf = self.left[nodes] < 0
            lb, ln = boxes[leaf], nodes[leaf]
            if len(lb):
                cnt = self.count[ln]
                offs = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
                out_b.append(np.repeat(lb, cnt))
                out_t.append(self.order[np.repeat(self.start[ln], cnt) + offs])
            ib, inn = boxes[~leaf], nodes[~leaf]
            boxes = np.concatenate([ib, ib])
            nodes = np.concatenate([self.left[inn], self.right[inn]])
        if not out_b:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        b, t = np.concatenate(out_b), np.concatenate(out_t)
        # exact triangle AABB filter
        tri = self.triangles[t]
        keep = np.all((tri.min(axis=1) <= hi[b]) & (tri.max(axis=1) >= lo[b]), axis=1)
        return b[keep], t[keep]

    def box_overlap_candidates(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """Triangle indices whose leaf boxes overlap the AABB [lo, hi]."""
        found = []
        nodes = np.zeros(1, dtype=np.int64)
        while len(nodes):
            keep = np.all((self.node_lo[nodes] <= hi) & (self.node_hi[nodes] >= lo), axis=1)
            nodes = nodes[keep]
            leaf = self.left[nodes] < 0
            for n in nodes[leaf]:
                found.append(self.order[self.start[n]:self.start[n] + self.count[n]])
            inner = nodes[~leaf]
            nodes = np.concatenate([self.left[inner], self.right[inner]])
        if not found:
            return np.zeros(0, dtype=np.int64)
        return np.sort(np.concatenate(found))


def ray_triangle(o: np.ndarray, d: np.ndarray, tri: np.ndarray):
    """Vectorized Moller-Trumbore. Returns ``(t, hit_mask)``; edges inclusive."""
    v0, v1, v2 = tri[:, 0], tri[:, 1], tri[:, 2]
    e1 = v1 - v0
    e2 = v2 - v0
    p = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, p)
    ok = np.abs(det) > 1e-300
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = o - v0
    u = np.einsum("ij,ij->i", s, p) * inv
    q = np.cross(s, e1)
    v = np.einsum("ij,ij->i", d, q) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    ok &= (u >= -_BARY_EPS) & (v >= -_BARY_EPS) & (u + v <= 1.0 + _BARY_EPS)
    return t, ok
