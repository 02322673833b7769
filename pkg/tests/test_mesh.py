import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import chisquare

from jawgrasp import shapes
from jawgrasp.decimate import decimate
from jawgrasp.mesh import (MeshError, TriMesh, contains, diversity_stats, is_watertight, load_mesh, raycast,
                           raycast_first, sample_surface, save_obj, save_stl)

from oracles import brute_ray_hits, inside

CUBE_OBJ = """# unit cube
v -0.5 -0.5 -0.5
v 0.5 -0.5 -0.5
v 0.5 0.5 -0.5
v -0.5 0.5 -0.5
v -0.5 -0.5 0.5
v 0.5 -0.5 0.5
v 0.5 0.5 0.5
v -0.5 0.5 0.5
f 1 4 3
f 1 3 2
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 2 3 7
f 2 7 6
f 3 4 8
f 3 8 7
f 4 1 5
f 4 5 8
"""


@pytest.fixture
def unit_cube(tmp_path):
    p = tmp_path / "cube.obj"
    p.write_text(CUBE_OBJ)
    return load_mesh(p)


def test_load_obj_cube(unit_cube):
    assert unit_cube.num_vertices == 8 and unit_cube.num_faces == 12
    assert is_watertight(unit_cube)
    assert np.allclose(np.linalg.norm(unit_cube.face_normals, axis=1), 1.0, atol=1e-6)
    assert unit_cube.volume == pytest.approx(1.0)


def test_stl_merges_duplicate_vertices(unit_cube, tmp_path):
    p = save_stl(unit_cube, tmp_path / "cube.stl")
    data = p.read_bytes()
    assert len(data) == 84 + 50 * 12 and struct.unpack("<I", data[80:84])[0] == 12
    m = load_mesh(p)
    assert m.num_vertices == 8 and m.num_faces == 12 and is_watertight(m)


def test_truncated_files_raise(tmp_path, unit_cube):
    stl = save_stl(unit_cube, tmp_path / "c.stl").read_bytes()
    (tmp_path / "t.stl").write_bytes(stl[:-7])
    with pytest.raises(MeshError):
        load_mesh(tmp_path / "t.stl")
    (tmp_path / "t.obj").write_text(CUBE_OBJ + "f 1 2\n")
    with pytest.raises(MeshError, match=r"t\.obj:22"):
        load_mesh(tmp_path / "t.obj")
    (tmp_path / "e.obj").write_text("# nothing\n")
    with pytest.raises(MeshError):
        load_mesh(tmp_path / "e.obj")


def test_obj_roundtrip_identical(tmp_path):
    m = shapes.torus(0.04, 0.01, 12, 8)
    a = load_mesh(save_obj(m, tmp_path / "a.obj"))
    b = load_mesh(save_obj(a, tmp_path / "b.obj"))
    assert np.array_equal(a.vertices, b.vertices) and np.array_equal(a.faces, b.faces)
    assert np.array_equal(a.vertices, m.vertices)


def test_watertight_cases(unit_cube):
    assert is_watertight(unit_cube)
    assert not is_watertight(TriMesh(unit_cube.vertices, unit_cube.faces[:-1]))
    flipped = unit_cube.faces.copy()
    flipped[0] = flipped[0][::-1]
    assert not is_watertight(TriMesh(unit_cube.vertices, flipped))
    two = TriMesh(np.vstack([unit_cube.vertices, unit_cube.vertices + 3]),
                  np.vstack([unit_cube.faces, unit_cube.faces + 8]))
    assert is_watertight(two)


def test_all_test_shapes_watertight(shapes_corpus):
    for name, m in shapes_corpus.items():
        assert is_watertight(m), name
        assert m.volume > 0, name


def test_sample_surface_area_weighted_chi_square(unit_cube):
    s = sample_surface(unit_cube, 1000, seed=3)
    counts = np.bincount(s.face_index, minlength=12)
    expected = 1000 * unit_cube.face_areas / unit_cube.face_areas.sum()
    assert chisquare(counts, expected).pvalue > 0.0027  # 3 sigma


def test_sample_surface_properties(shapes_corpus):
    m = shapes_corpus["sphere"]
    a, b = sample_surface(m, 500, seed=11), sample_surface(m, 500, seed=11)
    assert np.array_equal(a.points, b.points) and np.array_equal(a.face_index, b.face_index)
    assert len(a) == 500
    assert np.allclose(np.linalg.norm(a.normals, axis=1), 1.0)
    assert np.all(np.einsum("ij,ij->i", a.normals, a.points - m.vertices.mean(axis=0)) > 0)
    # barycentric reconstruction on the indexed face
    tri = m.triangles[a.face_index]
    for p, t in zip(a.points, tri):
        A = np.column_stack([t[1] - t[0], t[2] - t[0]])
        uv, *_ = np.linalg.lstsq(A, p - t[0], rcond=None)
        assert np.linalg.norm(t[0] + A @ uv - p) < 1e-9
        assert uv.min() >= -1e-9 and uv.sum() <= 1 + 1e-9


def test_raycast_cube_examples(unit_cube):
    hits = raycast(unit_cube, [0, 0, 2], [0, 0, -1])
    assert [h.point[2] for h in hits] == pytest.approx([0.5, -0.5])
    assert [h.distance for h in hits] == pytest.approx([1.5, 2.5])
    assert raycast(unit_cube, [0, 0, 2], [0, 0, 1]) == []
    assert raycast(unit_cube, [3, 0, 0], [0, 0, -1]) == []


def test_raycast_matches_brute_force(unit_cube, shapes_corpus):
    rng = np.random.default_rng(5)
    for mesh, n in ((unit_cube, 10_000), (shapes_corpus["torus"], 300)):
        o = rng.uniform(-1, 1, size=(n, 3)) * (np.abs(mesh.bounds).max() * 1.5)
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        # aim half of the rays at the surface
        d[: n // 2] = mesh.vertices.mean(axis=0) - o[: n // 2] + rng.normal(size=(n // 2, 3)) * 0.1 * mesh.bounding_radius
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        for i in range(n):
            got = [h.distance for h in raycast(mesh, o[i], d[i])]
            want = brute_ray_hits(mesh.triangles, o[i], d[i])
            assert np.allclose(got, want, atol=1e-9), i
        f, t = raycast_first(mesh, o[:50], d[:50])
        for i in range(50):
            want = brute_ray_hits(mesh.triangles, o[i], d[i])
            assert (t[i] == np.inf) if not want else t[i] == pytest.approx(want[0], abs=1e-12)


def test_hit_point_consistency(shapes_corpus):
    m = shapes_corpus["sphere"]
    o, d = np.array([0.1, 0.0, 0.0]), np.array([-1.0, 0.0, 0.0])
    for h in raycast(m, o, d):
        assert h.distance > 0 and np.linalg.norm(o + h.distance * d - h.point) < 1e-9


def test_contains_matches_winding_number(shapes_corpus):
    rng = np.random.default_rng(4)
    for name in ("torus", "l_bracket", "cube"):
        m = shapes_corpus[name]
        lo, hi = m.bounds
        pts = rng.uniform(lo - 0.01, hi + 0.01, size=(2000, 3))
        assert np.array_equal(contains(m, pts), inside(m.triangles, pts)), name


def test_diversity_stats_unit_cube(unit_cube):
    s = diversity_stats(unit_cube)
    assert s["num_triangles"] == 12 and s["num_vertices"] == 8
    assert s["edge_length_mean"] == pytest.approx((12 + 6 * np.sqrt(2)) / 18, abs=1e-12)
    s2 = diversity_stats(unit_cube.transformed(scale=2.0))
    assert s2["edge_length_mean"] == pytest.approx(2 * s["edge_length_mean"])
    assert s2["edge_length_std"] == pytest.approx(2 * s["edge_length_std"])


# --- decimation ------------------------------------------------------------------------
def test_decimate_icosphere_band():
    m = shapes.icosphere(1.0, 3)
    assert m.num_faces == 1280
    d = decimate(m, 0.6)
    assert 691 <= d.num_faces <= 768 and is_watertight(d)


def test_decimate_identity_and_determinism(shapes_corpus):
    m = shapes_corpus["torus"]
    assert decimate(m, 1.0) is m
    a, b = decimate(m, 0.6), decimate(m, 0.6)
    assert np.array_equal(a.vertices, b.vertices) and np.array_equal(a.faces, b.faces)


def test_decimated_cube_watertight(shapes_corpus):
    m = shapes_corpus["cube"]
    d = decimate(m, 0.6)
    assert is_watertight(d) and d.num_faces <= m.num_faces
    assert 0.54 * m.num_faces <= d.num_faces <= 0.6 * m.num_faces


@given(st.floats(0.3, 1.0))
def test_decimate_never_grows(factor):
    m = shapes.icosphere(0.05, 2)
    d = decimate(m, factor)
    assert d.num_faces <= m.num_faces and is_watertight(d)


def test_decimate_rejects_bad_factor(shapes_corpus):
    with pytest.raises(ValueError):
        decimate(shapes_corpus["cube"], 0.0)
