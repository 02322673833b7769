"""Closed, outward-oriented primitive meshes (meters).

These are the geometry fixtures for the test corpus and the ``demo-corpus``
CLI command; every generator returns a watertight :class:`TriMesh`.
"""

from __future__ import annotations

import numpy as np

from .mesh import TriMesh, clean_mesh


def box(sx: float, sy: float, sz: float, divisions: int = 1) -> TriMesh:
    """Axis-aligned box centered at the origin, each face split into a grid."""
    n = max(1, int(divisions))
    half = np.array([sx, sy, sz]) / 2.0
    verts, faces = [], []
    g = np.linspace(-1.0, 1.0, n + 1)
    for axis in range(3):
        for sign in (-1.0, 1.0):
            u_ax, v_ax = [a for a in range(3) if a != axis]
            base = len(verts)
            for i in range(n + 1):
                for j in range(n + 1):
                    p = np.zeros(3)
                    p[axis] = sign
                    p[u_ax] = g[i]
                    p[v_ax] = g[j]
                    verts.append(p * half)
            # (u, v, axis) right-handed iff the normal of [a, b, c] is +axis
            outward = (np.cross(np.eye(3)[u_ax], np.eye(3)[v_ax])[axis] * sign) > 0
            for i in range(n):
                for j in range(n):
                    a = base + i * (n + 1) + j
                    b, c, d = a + (n + 1), a + (n + 1) + 1, a + 1
                    if outward:
                        faces += [[a, b, c], [a, c, d]]
                    else:
                        faces += [[a, c, b], [a, d, c]]
    return _orient_outward(clean_mesh(np.array(verts), np.array(faces)))


def icosphere(radius: float = 1.0, subdivisions: int = 3) -> TriMesh:
    """Geodesic sphere: 20 * 4**subdivisions faces."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
             [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
             [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    faces = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
             [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
             [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
             [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new_faces
    return _orient_outward(TriMesh(np.array(verts) * radius, np.array(faces)))


def cylinder(radius: float, height: float, segments: int = 32, rings: int = 1) -> TriMesh:
    """Cylinder along z centered at the origin, capped with triangle fans."""
    ang = 2 * np.pi * np.arange(segments) / segments
    zs = np.linspace(-height / 2, height / 2, rings + 1)
    verts = [[radius * np.cos(a), radius * np.sin(a), z] for z in zs for a in ang]
    faces = []
    for r in range(rings):
        for i in range(segments):
            a = r * segments + i
            b = r * segments + (i + 1) % segments
            faces += [[a, b, b + segments], [a, b + segments, a + segments]]
    bottom, top = len(verts), len(verts) + 1
    verts += [[0, 0, -height / 2], [0, 0, height / 2]]
    top_ring = rings * segments
    for i in range(segments):
        j = (i + 1) % segments
        faces.append([bottom, j, i])
        faces.append([top, top_ring + i, top_ring + j])
    return _orient_outward(TriMesh(np.array(verts), np.array(faces)))


def torus(major: float, minor: float, nu: int = 32, nv: int = 16) -> TriMesh:
    """Torus around the z axis."""
    u = 2 * np.pi * np.arange(nu) / nu
    v = 2 * np.pi * np.arange(nv) / nv
    verts = [[(major + minor * np.cos(b)) * np.cos(a), (major + minor * np.cos(b)) * np.sin(a), minor * np.sin(b)]
             for a in u for b in v]
    faces = []
    for i in range(nu):
        for j in range(nv):
            a = i * nv + j
            b = ((i + 1) % nu) * nv + j
            c = ((i + 1) % nu) * nv + (j + 1) % nv
            d = i * nv + (j + 1) % nv
            faces += [[a, b, c], [a, c, d]]
    return _orient_outward(TriMesh(np.array(verts), np.array(faces)))


def extrude_polygon(polygon, height: float, layers: int = 1) -> TriMesh:
    """Extrude a simple counter-clockwise 2D polygon along z, centered on z=0."""
    poly = np.asarray(polygon, dtype=float)
    if _signed_area(poly) < 0:
        poly = poly[::-1]
    n = len(poly)
    cap = _ear_clip(poly)
    zs = np.linspace(-height / 2, height / 2, layers + 1)
    verts = [[x, y, z] for z in zs for x, y in poly]
    faces = []
    for layer in range(layers):
        for i in range(n):
            a = layer * n + i
            b = layer * n + (i + 1) % n
            faces += [[a, b, b + n], [a, b + n, a + n]]
    top = layers * n
    for a, b, c in cap:
        faces.append([c, b, a])
        faces.append([top + a, top + b, top + c])
    return _orient_outward(TriMesh(np.array(verts), np.array(faces)))


def hex_prism(circumradius: float, height: float, layers: int = 1) -> TriMesh:
    """Regular hexagonal prism along z; hexagon vertices at 0, 60, ... degrees."""
    ang = np.deg2rad(60.0 * np.arange(6))
    return extrude_polygon(np.c_[circumradius * np.cos(ang), circumradius * np.sin(ang)], height, layers)


def l_bracket(leg: float = 0.06, thickness: float = 0.015, depth: float = 0.03, layers: int = 2) -> TriMesh:
    poly = [[0, 0], [leg, 0], [leg, thickness], [thickness, thickness], [thickness, leg], [0, leg]]
    m = extrude_polygon(np.array(poly) - leg / 3.0, depth, layers)
    return m


# ---------------------------------------------------------------------------
def _signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _ear_clip(poly: np.ndarray) -> list[list[int]]:
    idx = list(range(len(poly)))
    tris = []

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    while len(idx) > 3:
        for k in range(len(idx)):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            a, b, c = poly[i0], poly[i1], poly[i2]
            if cross(a, b, c) <= 0:
                continue
            if any(cross(a, b, poly[j]) >= 0 and cross(b, c, poly[j]) >= 0 and cross(c, a, poly[j]) >= 0
                   for j in idx if j not in (i0, i1, i2)):
                continue
            tris.append([i0, i1, i2])
            idx.pop(k)
            break
        else:
            raise ValueError("polygon is not simple")
    tris.append(idx)
    return tris


def _orient_outward(mesh: TriMesh) -> TriMesh:
    if mesh.volume < 0:
        return TriMesh(mesh.vertices, mesh.faces[:, ::-1])
    return mesh
