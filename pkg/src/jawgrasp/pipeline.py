"""Per-object generation pipeline and the worker pool that runs it over a mesh directory.

The unit of work is one object. Every worker gets an immutable task, writes
only its own object files, and returns a manifest entry; the parent process
assembles the manifest in object-id order, so output does not depend on the
number of workers or on scheduling.
"""

from __future__ import annotations

import hashlib
import logging
import multiprocessing
import sys
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import dataset as ds
from .cluster import agglomerative_cluster, distance_matrix, representative_indices, thin_for_clustering
from .collision import filter_noncolliding
from .config import PipelineConfig, config_from_dict
from .evaluator import EVAL_METHOD, evaluate_grasps
from .mesh import MeshError, TriMesh, is_watertight, load_mesh
from .sampler import sample_candidates

log = logging.getLogger(__name__)

MESH_SUFFIXES = (".obj", ".stl")
STAGES = ("sample", "cluster", "evaluate", "run")


def object_seed(global_seed: int, object_id: str) -> int:
    """Per-object seed; independent of which other objects are in the corpus."""
    h = hashlib.blake2b(f"{global_seed}:{object_id}".encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def discover_meshes(mesh_dir) -> list[tuple[str, Path]]:
    """``(object_id, path)`` for every mesh file, sorted by object id."""
    paths = sorted(p for p in Path(mesh_dir).iterdir() if p.is_file() and p.suffix.lower() in MESH_SUFFIXES)
    stems = [p.stem for p in paths]
    out = []
    for p in paths:
        oid = p.stem if stems.count(p.stem) == 1 else p.name.replace(".", "_")
        out.append((oid, p.resolve()))
    return sorted(out)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------
def sample_object(mesh: TriMesh, cfg: PipelineConfig, seed: int, warnings: list | None = None) -> list:
    """Collision-free candidates, rounded to file precision."""
    cands = sample_candidates(mesh, cfg.gripper, cfg.sampler, seed, warnings)
    cands = filter_noncolliding(mesh, cfg.gripper, cands, cfg.collision.clearance_mm)
    return [ds.to_storage_precision(c) for c in cands]


def select_for_evaluation(candidates: list, cfg: PipelineConfig) -> np.ndarray:
    """Sorted candidate indices of the cluster representatives.

    Above the clustering size ceiling an evenly strided subset is clustered.
    If the target exceeds the number of candidates, all are selected.
    """
    n = len(candidates)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    if cfg.n_target >= n:
        return np.arange(n, dtype=np.int64)
    sub = thin_for_clustering(n, cfg.cluster.max_points)
    grasps = [candidates[i] for i in sub]
    D = distance_matrix(grasps, cfg.cluster.rotation_weight)
    result = agglomerative_cluster(grasps, cfg.cluster.linkage_threshold, cfg.cluster.rotation_weight, D=D)
    picks = representative_indices(result, cfg.n_target, D)
    return np.sort(sub[picks])


def evaluate_selection(mesh: TriMesh, record: ds.ObjectRecord, indices, cfg: PipelineConfig) -> ds.ObjectRecord:
    indices = np.asarray(indices, dtype=np.int64)
    outcomes = evaluate_grasps(mesh, cfg.gripper, [record.candidates[i] for i in indices], cfg.physics,
                               cfg.collision.clearance_mm)
    return record.with_outcomes(indices, outcomes)


# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ObjectTask:
    object_id: str
    mesh_path: str
    out_dir: str
    cfg: PipelineConfig
    stage: str
    selected: tuple | None = None  # indices from an earlier cluster stage


def _entry(task: ObjectTask, mesh_sha: str, record: ds.ObjectRecord, selected, seed: int, warnings) -> dict:
    path = Path(task.out_dir) / "objects" / f"{task.object_id}.gfrg"
    n_eval = len(record.outcomes)
    return {
        "object_id": task.object_id,
        "mesh": task.mesh_path,
        "mesh_sha256": mesh_sha,
        "file": f"objects/{task.object_id}.gfrg",
        "file_sha256": ds.sha256_file(path),
        "seed": seed,
        "n_candidates": len(record.candidates),
        "n_selected": len(selected),
        "n_evaluated": n_eval,
        "n_success": record.n_success,
        "success_rate": record.n_success / n_eval if n_eval else 0.0,
        "selected": [int(i) for i in selected],
        "warnings": list(warnings),
    }


def process_object(task: ObjectTask) -> dict:
    """Run one stage for one object. Returns ``{"status": ..., ...}``; never raises."""
    t0 = time.perf_counter()
    try:
        out = _process(task)
    except Exception as exc:  # per-object failures are reported, not fatal
        log.exception("object %s failed", task.object_id)
        out = {"status": "failed", "object_id": task.object_id, "mesh": task.mesh_path,
               "error": f"{type(exc).__name__}: {exc}"}
    out["elapsed_s"] = time.perf_counter() - t0
    return out


def _process(task: ObjectTask) -> dict:
    cfg = task.cfg
    out_dir = Path(task.out_dir)
    mesh_sha = ds.sha256_file(task.mesh_path)
    try:
        mesh = load_mesh(task.mesh_path, cfg.mesh_scale)
    except MeshError as exc:
        return {"status": "skipped", "object_id": task.object_id, "mesh": task.mesh_path, "reason": str(exc)}
    if not is_watertight(mesh):
        return {"status": "skipped", "object_id": task.object_id, "mesh": task.mesh_path,
                "reason": "mesh is not watertight"}
    seed = object_seed(cfg.seed, task.object_id)
    warnings: list[str] = []
    obj_path = out_dir / "objects" / f"{task.object_id}.gfrg"

    if task.stage in ("sample", "run"):
        cands = sample_object(mesh, cfg, seed, warnings)
        record = ds.ObjectRecord(task.object_id, bytes.fromhex(mesh_sha), cfg.gripper.name, cands)
    else:
        record = ds.read_object(obj_path)
        if record.mesh_hash.hex() != mesh_sha:
            raise ds.DatasetError(f"mesh {task.mesh_path} changed since sampling")

    if task.stage in ("cluster", "run"):
        selected = select_for_evaluation(record.candidates, cfg)
        record = record.with_outcomes([], [])
    elif task.stage == "evaluate":
        selected = (np.asarray(task.selected, dtype=np.int64) if task.selected is not None
                    else select_for_evaluation(record.candidates, cfg))
    else:
        selected = np.zeros(0, dtype=np.int64)

    if task.stage in ("evaluate", "run"):
        record = evaluate_selection(mesh, record, selected, cfg)

    ds.write_object(record, out_dir / "objects")
    if cfg.write_json:
        ds.write_object_json(record, out_dir / "objects")
    if task.stage in ("evaluate", "run"):
        ds.write_xyz(ds.coverage_cloud(record), out_dir / "coverage" / f"{task.object_id}.xyz")
    entry = _entry(task, mesh_sha, record, selected, seed, warnings)
    entry["status"] = "ok"
    return entry


# ---------------------------------------------------------------------------
def manifest_config(cfg: PipelineConfig) -> dict:
    d = cfg.to_dict()
    g = dict(d["gripper"])
    d["gripper"] = {"preset": g.pop("name"), **g}
    return d


def config_from_manifest(manifest: dict) -> PipelineConfig:
    return config_from_dict(manifest["config"])


def build_manifest(cfg: PipelineConfig, mesh_dir, results: list[dict], stage: str) -> dict:
    return {
        "format_version": ds.FORMAT_VERSION,
        "eval_method": EVAL_METHOD,
        "stage": stage,
        "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "seed": cfg.seed,
        "mesh_dir": str(Path(mesh_dir).resolve()) if mesh_dir is not None else None,
        "config": manifest_config(cfg),
        "assumptions": {
            "decimation_factor": "fraction of faces retained",
            "cluster_linkage": "average linkage (assumed; not given by the source method)",
            "linkage_threshold": "assumed default",
            "physics": "assumed defaults; not calibrated to a dynamic simulator",
            "distance_units": "meters + radians",
        },
        "objects": [{k: v for k, v in r.items() if k not in ("status", "elapsed_s")}
                    for r in results if r["status"] == "ok"],
        "skipped": [{"object_id": r["object_id"], "mesh": r["mesh"], "reason": r["reason"]}
                    for r in results if r["status"] == "skipped"],
        "failed": [{"object_id": r["object_id"], "mesh": r["mesh"], "error": r["error"]}
                   for r in results if r["status"] == "failed"],
    }


def run_tasks(tasks: list[ObjectTask], jobs: int = 1, progress=None) -> list[dict]:
    """Results in task order, whatever the worker count."""
    if jobs <= 1 or len(tasks) <= 1:
        it = map(process_object, tasks)
        results = []
        for r in it:
            results.append(r)
            if progress:
                progress(len(results), len(tasks), r)
        return results
    with multiprocessing.get_context("fork").Pool(min(jobs, len(tasks))) as pool:
        results = []
        for r in pool.imap(process_object, tasks):
            results.append(r)
            if progress:
                progress(len(results), len(tasks), r)
    return results


def _stderr_progress(done: int, total: int, r: dict) -> None:
    if r["status"] == "ok":
        msg = (f"{r['n_candidates']} candidates, {r['n_evaluated']} evaluated, {r['n_success']} ok "
               f"({r['success_rate']:.2f})")
    else:
        msg = r["status"] + ": " + r.get("reason", r.get("error", ""))
    print(f"[{done}/{total}] {r['object_id']}: {msg} in {r['elapsed_s']:.1f}s", file=sys.stderr)


@dataclass(frozen=True)
class RunSummary:
    manifest: dict
    n_ok: int
    n_skipped: int
    n_failed: int
    elapsed_s: float

    @property
    def exit_code(self) -> int:
        # skipped-only corpora are a handled outcome; nothing at all processed is not
        return 0 if self.n_ok or (self.n_skipped and not self.n_failed) else 2


def write_stats(out_dir, manifest: dict, mesh_root=None) -> ds.CorpusStats | None:
    out_dir = Path(out_dir)
    cfg = config_from_manifest(manifest)
    records, meshes = [], []
    for obj in manifest["objects"]:
        records.append(ds.read_object(out_dir / obj["file"]))
        mp = Path(obj["mesh"])
        if mesh_root is not None and not mp.is_absolute():
            mp = Path(mesh_root) / mp
        meshes.append(load_mesh(mp, cfg.mesh_scale))
    if not records:
        return None
    stats = ds.corpus_stats(records, meshes)
    ds._atomic_write(out_dir / "stats.csv", stats.to_csv().encode("utf-8"))
    return stats


def run_pipeline(cfg: PipelineConfig, mesh_dir, out_dir, jobs: int = 1, stage: str = "run",
                 quiet: bool = False) -> RunSummary:
    """Algorithm driver for the ``sample`` and ``run`` stages over a mesh directory."""
    if stage not in ("sample", "run"):
        raise ValueError(f"stage {stage!r} starts from meshes only for sample/run")
    t0 = time.perf_counter()
    out_dir = Path(out_dir)
    (out_dir / "objects").mkdir(parents=True, exist_ok=True)
    meshes = discover_meshes(mesh_dir)
    tasks = [ObjectTask(oid, str(p), str(out_dir), cfg, stage) for oid, p in meshes]
    results = run_tasks(tasks, jobs, None if quiet else _stderr_progress)
    manifest = build_manifest(cfg, mesh_dir, results, stage)
    ds.write_manifest(manifest, out_dir)
    if stage == "run":
        write_stats(out_dir, manifest)
    return _summarize(manifest, results, t0, quiet)


def rerun_stage(out_dir, stage: str, jobs: int = 1, cfg: PipelineConfig | None = None,
                quiet: bool = False) -> RunSummary:
    """Re-run ``cluster`` or ``evaluate`` on an existing dataset directory."""
    if stage not in ("cluster", "evaluate"):
        raise ValueError(f"stage {stage!r} cannot be re-run on a dataset")
    t0 = time.perf_counter()
    out_dir = Path(out_dir)
    manifest = ds.read_manifest(out_dir)
    cfg = cfg or config_from_manifest(manifest)
    tasks = [ObjectTask(o["object_id"], o["mesh"], str(out_dir), cfg, stage,
                        tuple(o["selected"]) if stage == "evaluate" and o.get("n_selected") else None)
             for o in manifest["objects"]]
    results = run_tasks(tasks, jobs, None if quiet else _stderr_progress)
    new = build_manifest(cfg, manifest.get("mesh_dir"), results, stage)
    new["skipped"] = manifest.get("skipped", []) + new["skipped"]
    ds.write_manifest(new, out_dir)
    if stage == "evaluate":
        write_stats(out_dir, new)
    return _summarize(new, results, t0, quiet)


def _summarize(manifest: dict, results: list[dict], t0: float, quiet: bool) -> RunSummary:
    elapsed = time.perf_counter() - t0
    n_ok = sum(r["status"] == "ok" for r in results)
    s = RunSummary(manifest, n_ok, sum(r["status"] == "skipped" for r in results),
                   sum(r["status"] == "failed" for r in results), elapsed)
    if not quiet:
        n_eval = sum(o["n_evaluated"] for o in manifest["objects"])
        n_succ = sum(o["n_success"] for o in manifest["objects"])
        n_cand = sum(o["n_candidates"] for o in manifest["objects"])
        rate = n_succ / n_eval if n_eval else 0.0
        print(f"{s.n_ok} objects ok, {s.n_skipped} skipped, {s.n_failed} failed in {elapsed:.1f}s "
              f"({len(results) / max(elapsed, 1e-9):.2f} objects/s, {n_cand / max(elapsed, 1e-9):.0f} grasps/s); "
              f"success {n_succ}/{n_eval} ({rate:.3f})", file=sys.stderr)
    return s

