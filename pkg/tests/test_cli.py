import csv
import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from jawgrasp import dataset as ds
from jawgrasp import shapes
from jawgrasp.cli import load_calibration, main
from jawgrasp.config import ConfigError
from jawgrasp.geometry import CHAIN_LINKS, GraspPose, quat_from_axis_angle
from jawgrasp.mesh import TriMesh, save_obj

from oracles import chain_matrix

FAST = {"sampler": {"samples_per_object": 48}, "n_representatives": 8}


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    meshes = root / "meshes"
    meshes.mkdir()
    save_obj(shapes.box(0.04, 0.04, 0.04, 2), meshes / "cube.obj")
    save_obj(shapes.icosphere(0.025, 2), meshes / "ball.obj")
    cfg = root / "fast.yaml"
    cfg.write_text(yaml.safe_dump(FAST))
    return root


@pytest.fixture(scope="module")
def dataset(corpus):
    out = corpus / "out"
    assert main(["run", "--config", str(corpus / "fast.yaml"), "--meshes", str(corpus / "meshes"),
                 "--out", str(out), "--quiet"]) == 0
    return out


def test_run_writes_layout(dataset):
    m = ds.read_manifest(dataset)
    assert [o["object_id"] for o in m["objects"]] == ["ball", "cube"]
    for o in m["objects"]:
        assert (dataset / o["file"]).exists() and (dataset / "coverage" / f"{o['object_id']}.xyz").exists()
        assert o["n_evaluated"] == min(8, o["n_candidates"])
    rows = list(csv.DictReader((dataset / "stats.csv").open()))
    assert [r["object_id"] for r in rows] == ["ball", "cube", "ALL"]
    assert m["config"]["n_representatives"] == 8 and m["eval_method"]


def test_stats_coverage_validate(dataset, capsys):
    assert main(["stats", "--out", str(dataset)]) == 0
    assert capsys.readouterr().out.startswith("object_id,")
    assert main(["coverage", "--out", str(dataset)]) == 0
    assert main(["validate", "--out", str(dataset)]) == 0


def test_staged_equals_full(corpus, dataset):
    staged = corpus / "staged"
    args = ["--out", str(staged), "--quiet"]
    assert main(["sample", "--config", str(corpus / "fast.yaml"), "--meshes", str(corpus / "meshes"), *args]) == 0
    assert main(["cluster", *args]) == 0
    assert main(["evaluate", *args]) == 0
    for oid in ("ball", "cube"):
        assert (staged / "objects" / f"{oid}.gfrg").read_bytes() == (dataset / "objects" / f"{oid}.gfrg").read_bytes()
    assert (staged / "stats.csv").read_bytes() == (dataset / "stats.csv").read_bytes()


def test_more_grasps_than_candidates(corpus, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"sampler": {"samples_per_object": 6}, "n_representatives": 10**6}))
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--meshes", str(corpus / "meshes"), "--out", str(out), "--quiet"]) == 0
    for o in ds.read_manifest(out)["objects"]:
        assert o["n_evaluated"] == o["n_candidates"]


def test_open_mesh_is_skipped(tmp_path, corpus):
    meshes = tmp_path / "m"
    meshes.mkdir()
    cube = shapes.box(0.04, 0.04, 0.04)
    save_obj(TriMesh(cube.vertices, cube.faces[:-1]), meshes / "open.obj")
    save_obj(cube, meshes / "good.obj")
    out = tmp_path / "out"
    assert main(["run", "--config", str(corpus / "fast.yaml"), "--meshes", str(meshes), "--out", str(out),
                 "--quiet"]) == 0
    m = ds.read_manifest(out)
    assert [o["object_id"] for o in m["objects"]] == ["good"]
    assert m["skipped"][0]["object_id"] == "open" and "watertight" in m["skipped"][0]["reason"]
    # only skipped meshes: handled, not an error
    (meshes / "good.obj").unlink()
    assert main(["run", "--config", str(corpus / "fast.yaml"), "--meshes", str(meshes), "--out",
                 str(tmp_path / "o2"), "--quiet"]) == 0


def test_exit_codes(tmp_path, corpus):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["run", "--meshes", str(empty), "--out", str(tmp_path / "o"), "--quiet"]) == 2
    assert main(["run", "--meshes", str(tmp_path / "nope"), "--out", str(tmp_path / "o"), "--quiet"]) == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("sampler: {bogus: 1}\n")
    assert main(["run", "--config", str(bad), "--meshes", str(empty), "--out", str(tmp_path / "o")]) == 1
    assert main(["stats", "--out", str(tmp_path / "no_dataset")]) == 1
    assert main(["run", "--meshes", str(empty), "--out", str(tmp_path / "o"), "--jobs", "0"]) == 1


def _write_calibration(path, links):
    raw = {}
    for name, (q, t) in zip(CHAIN_LINKS, links):
        raw[name] = {"quaternion": list(map(float, q)), "translation": list(map(float, t))}
    path.write_text(json.dumps(raw))


def test_transform_identity(dataset, tmp_path):
    cal = tmp_path / "id.json"
    _write_calibration(cal, [([1, 0, 0, 0], [0, 0, 0])] * 4)
    out = tmp_path / "world.csv"
    assert main(["transform", "--calibration", str(cal), "--dataset", str(dataset), "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    recs = {o["object_id"]: ds.read_object(dataset / o["file"]) for o in ds.read_manifest(dataset)["objects"]}
    assert len(rows) == sum(r.n_success for r in recs.values())
    for r in rows:
        c = recs[r["object_id"]].candidates[int(r["candidate_index"])]
        got = np.array([float(r[k]) for k in ("qw", "qx", "qy", "qz", "tx", "ty", "tz")])
        assert np.array_equal(got, c.pose.to_array())


def test_transform_matches_matrix_oracle(dataset, tmp_path):
    rng = np.random.default_rng(0)
    links = [(quat_from_axis_angle(rng.normal(size=3), rng.uniform(0, 3)), rng.normal(size=3)) for _ in range(4)]
    cal = tmp_path / "cal.yaml"
    _write_calibration(cal, links)
    out = tmp_path / "world.csv"
    assert main(["transform", "--calibration", str(cal), "--dataset", str(dataset), "--out", str(out)]) == 0
    recs = {o["object_id"]: ds.read_object(dataset / o["file"]) for o in ds.read_manifest(dataset)["objects"]}
    link_arrays = [np.concatenate([GraspPose(q, t).rotation, t]) for q, t in links]
    rows = list(csv.DictReader(out.open()))
    assert rows
    for r in rows:
        c = recs[r["object_id"]].candidates[int(r["candidate_index"])]
        M = chain_matrix(link_arrays, c.pose.to_array())
        got = GraspPose([float(r[k]) for k in ("qw", "qx", "qy", "qz")], [float(r[k]) for k in ("tx", "ty", "tz")])
        assert np.allclose(got.rotation_matrix(), M[:3, :3], atol=1e-9)
        assert np.allclose(got.translation, M[:3, 3], atol=1e-9)


def test_calibration_errors(tmp_path):
    cal = tmp_path / "c.json"
    cal.write_text(json.dumps({"world_from_robot": {"quaternion": [1, 0, 0, 0]}}))
    with pytest.raises(ConfigError, match="missing"):
        load_calibration(cal)
    assert main(["transform", "--calibration", str(cal), "--dataset", str(tmp_path), "--out",
                 str(tmp_path / "x.csv")]) == 1
    full = {k: {"matrix": np.eye(4).tolist()} for k in CHAIN_LINKS}
    cal.write_text(json.dumps({**full, "extra": {}}))
    with pytest.raises(ConfigError, match="unknown"):
        load_calibration(cal)
    full["world_from_robot"] = {"matrix": (2 * np.eye(4)).tolist()}
    cal.write_text(json.dumps(full))
    with pytest.raises(ConfigError, match="rigid"):
        load_calibration(cal)


def test_demo_corpus_and_console_script(tmp_path):
    r = subprocess.run([sys.executable, "-m", "jawgrasp.cli", "demo-corpus", "--out", str(tmp_path / "d")],
                       capture_output=True, text=True)
    assert r.returncode == 0
    assert sorted(p.name for p in (tmp_path / "d").iterdir()) == [
        "cube.obj", "cylinder.obj", "l_bracket.obj", "sphere.obj", "torus.obj"]
