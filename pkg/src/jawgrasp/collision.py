"""Gripper/object collision filtering in the opened pre-grasp configuration."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .geometry import GraspPose
from .gripper import GripperModel, OrientedBox, local_boxes
from .mesh import TriMesh, contains

DEFAULT_CLEARANCE_MM = 2.0
_CHUNK = 200_000  # (box, triangle) pairs per SAT batch


def sat_overlap(tri: np.ndarray, center: np.ndarray, rotation: np.ndarray, half: np.ndarray) -> np.ndarray:
    """Separating-axis test, one triangle against one oriented box per row.

    ``tri`` is (P, 3, 3); ``center``/``half`` are (P, 3); ``rotation`` is
    (P, 3, 3) with box axes as columns. Touching counts as overlapping.
    """
    out = np.zeros(len(tri), dtype=bool)
    idx = np.arange(len(tri))
    v = np.einsum("pvk,pkj->pvj", tri - center[:, None, :], rotation)  # box-local
    h = np.array(half, dtype=float)

    def keep(mask):
        nonlocal idx, v, h
        idx, v, h = idx[mask], v[mask], h[mask]

    # box face normals
    for k in range(3):
        a, b, c = v[:, 0, k], v[:, 1, k], v[:, 2, k]
        hk = h[:, k]
        keep((np.minimum(np.minimum(a, b), c) <= hk) & (np.maximum(np.maximum(a, b), c) >= -hk))

    # triangle normal
    e0, e1 = v[:, 1] - v[:, 0], v[:, 2] - v[:, 1]
    n = np.cross(e0, e1)
    d = (n * v[:, 0]).sum(axis=1)
    keep(np.abs(d) <= (np.abs(n) * h).sum(axis=1))

    # axis = unit box axis i x triangle edge j; only the two components
    # orthogonal to box axis i are non-zero: a = (f[c1], -f[c0]) on (c0, c1)
    for j in range(3):
        for c0, c1 in ((2, 1), (0, 2), (1, 0)):
            if not len(idx):
                break
            f = v[:, (j + 1) % 3] - v[:, j]
            a0, a1 = f[:, c1], -f[:, c0]
            p = a0[:, None] * v[:, :, c0] + a1[:, None] * v[:, :, c1]
            rad = np.abs(a0) * h[:, c0] + np.abs(a1) * h[:, c1]
            lo = np.minimum(np.minimum(p[:, 0], p[:, 1]), p[:, 2])
            hi = np.maximum(np.maximum(p[:, 0], p[:, 1]), p[:, 2])
            keep((lo <= rad) & (hi >= -rad))
    out[idx] = True
    return out


def triangles_overlap_box(tri: np.ndarray, box: OrientedBox) -> np.ndarray:
    m = len(tri)
    return sat_overlap(tri, np.broadcast_to(box.center, (m, 3)), np.broadcast_to(box.rotation, (m, 3, 3)),
                       np.broadcast_to(box.half_extents, (m, 3)))


def _obb_meets_aabb(centers, rotations, halves, lo, hi) -> np.ndarray:
    """Conservative overlap of oriented boxes with axis-aligned boxes (face axes of both)."""
    c = (lo + hi) / 2.0
    nh = (hi - lo) / 2.0
    d = centers - c
    absR = np.abs(rotations)
    ok = np.all(np.abs(d) <= np.einsum("bij,bj->bi", absR, halves) + nh, axis=1)
    proj = np.abs(np.einsum("bi,bij->bj", d, rotations))
    return ok & np.all(proj <= halves + np.einsum("bij,bi->bj", absR, nh), axis=1)


def boxes_hit_mesh(mesh: TriMesh, centers: np.ndarray, rotations: np.ndarray, halves: np.ndarray) -> np.ndarray:
    """Per-box collision verdict: any triangle overlap, or a box corner inside the mesh."""
    nb = len(centers)
    hit = np.zeros(nb, dtype=bool)
    if nb == 0:
        return hit
    ext = np.einsum("bij,bj->bi", np.abs(rotations), halves)
    lo, hi = centers - ext, centers + ext
    mlo, mhi = mesh.bounds
    near = np.flatnonzero(np.all((lo <= mhi) & (hi >= mlo), axis=1))
    if len(near) == 0:
        return hit
    bvh = mesh.bvh
    tri = mesh.triangles
    # breadth-first BVH descent; a box leaves the frontier once any triangle hits it
    boxes = near
    nodes = np.zeros(len(near), dtype=np.int64)
    while len(boxes):
        alive = ~hit[boxes]
        boxes, nodes = boxes[alive], nodes[alive]
        keep = _obb_meets_aabb(centers[boxes], rotations[boxes], halves[boxes], bvh.node_lo[nodes], bvh.node_hi[nodes])
        boxes, nodes = boxes[keep], nodes[keep]
        leaf = bvh.left[nodes] < 0
        lb, ln = boxes[leaf], nodes[leaf]
        if len(lb):
            cnt = bvh.count[ln]
            offs = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
            b = np.repeat(lb, cnt)
            t = bvh.order[np.repeat(bvh.start[ln], cnt) + offs]
            m = np.all((tri[t].min(axis=1) <= hi[b]) & (tri[t].max(axis=1) >= lo[b]), axis=1)
            b, t = b[m], t[m]
            for s in range(0, len(b), _CHUNK):
                bb, tt = b[s:s + _CHUNK], t[s:s + _CHUNK]
                todo = ~hit[bb]
                bb, tt = bb[todo], tt[todo]
                if len(bb):
                    ov = sat_overlap(tri[tt], centers[bb], rotations[bb], halves[bb])
                    hit[bb[ov]] = True
        ib, inn = boxes[~leaf], nodes[~leaf]
        boxes = np.concatenate([ib, ib])
        nodes = np.concatenate([bvh.left[inn], bvh.right[inn]])

    # boxes crossing no triangle are either wholly inside or wholly outside
    rest = near[~hit[near]]
    if len(rest):
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        corners = centers[rest, None, :] + np.einsum("cj,bij->bci", signs, rotations[rest] * halves[rest, None, :])
        inside = contains(mesh, corners.reshape(-1, 3)).reshape(len(rest), 8)
        hit[rest] = inside.any(axis=1)
    return hit


def _gripper_boxes(gripper: GripperModel, poses: Sequence[GraspPose], openings: np.ndarray):
    n = len(poses)
    R = np.array([p.rotation_matrix() for p in poses]).reshape(n, 3, 3)
    T = np.array([p.translation for p in poses]).reshape(n, 3)
    centers, rots, halves = [], [], []
    for k in range(3):
        lo_hi = [local_boxes(gripper, o)[k] for o in openings]
        lo = np.array([a for a, _ in lo_hi]).reshape(n, 3)
        hi = np.array([b for _, b in lo_hi]).reshape(n, 3)
        c_local = (lo + hi) / 2.0
        centers.append(np.einsum("nij,nj->ni", R, c_local) + T)
        rots.append(R)
        halves.append((hi - lo) / 2.0)
    return np.concatenate(centers), np.concatenate(rots), np.concatenate(halves)


def collides_batch(mesh: TriMesh, gripper: GripperModel, poses: Sequence[GraspPose], openings) -> np.ndarray:
    """Vectorized :func:`gripper_collides` over many poses."""
    n = len(poses)
    if n == 0:
        return np.zeros(0, dtype=bool)
    openings = np.broadcast_to(np.asarray(openings, dtype=float), (n,))
    if np.any(openings < 0) or np.any(openings > gripper.max_opening + 1e-9):
        raise ValueError("opening outside [0, max_opening]")
    hit = boxes_hit_mesh(mesh, *_gripper_boxes(gripper, poses, openings))
    return hit.reshape(3, n).any(axis=0)


def gripper_collides(mesh: TriMesh, gripper: GripperModel, pose: GraspPose, opening: float) -> bool:
    """True if any finger or palm box touches a mesh triangle or sits inside the mesh."""
    return bool(collides_batch(mesh, gripper, [pose], [opening])[0])


def check_opening(gripper: GripperModel, width: float, clearance_mm: float) -> float:
    return min(width + 2.0 * clearance_mm, gripper.max_opening)


def filter_noncolliding(mesh: TriMesh, gripper: GripperModel, candidates: Sequence,
                        clearance_mm: float = DEFAULT_CLEARANCE_MM) -> list:
    """Order-preserving subset of candidates whose opened gripper clears the mesh."""
    if not candidates:
        return []
    openings = [check_opening(gripper, c.width, clearance_mm) for c in candidates]
    hit = collides_batch(mesh, gripper, [c.pose for c in candidates], openings)
    return [c for c, h in zip(candidates, hit) if not h]
