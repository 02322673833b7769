"""Command-line interface.

Exit codes: 0 ok, 1 configuration or usage error, 2 no objects processed.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import dataset as ds
from . import pipeline, shapes
from .config import ConfigError, load_config, with_overrides
from .geometry import CHAIN_LINKS, GraspPose, TransformChain, world_grasp
from .gripper import PRESETS
from .mesh import save_obj

EXIT_OK, EXIT_CONFIG, EXIT_EMPTY = 0, 1, 2


def load_calibration(path) -> TransformChain:
    """Four chain links from JSON/YAML, each ``{"quaternion": [w,x,y,z], "translation": [...]}`` or ``{"matrix": 4x4}``."""
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read calibration {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("calibration file must be a mapping of chain links")
    missing = [k for k in CHAIN_LINKS if k not in raw]
    if missing:
        raise ConfigError(f"calibration missing link(s): {missing}")
    unknown = set(raw) - set(CHAIN_LINKS)
    if unknown:
        raise ConfigError(f"unknown calibration key(s): {sorted(unknown)}")
    links = []
    for name in CHAIN_LINKS:
        link = raw[name]
        try:
            if isinstance(link, dict) and "matrix" in link:
                T = np.asarray(link["matrix"], dtype=float)
                if not np.allclose(T[3], [0, 0, 0, 1]) or not np.allclose(T[:3, :3] @ T[:3, :3].T, np.eye(3),
                                                                         atol=1e-6):
                    raise ValueError("not a rigid transform")
                links.append(GraspPose.from_matrix(T))
            elif isinstance(link, dict) and "quaternion" in link:
                links.append(GraspPose(np.asarray(link["quaternion"], dtype=float).reshape(4),
                                       np.asarray(link.get("translation", [0, 0, 0]), dtype=float).reshape(3)))
            else:
                raise ValueError("expected 'matrix' or 'quaternion' (+ 'translation')")
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"calibration link {name}: {exc}") from None
    return TransformChain(*links)


def transform_dataset(chain: TransformChain, dataset_dir, out_path) -> int:
    """World-frame pose of every successful grasp as CSV; returns the row count."""
    dataset_dir = Path(dataset_dir)
    manifest = ds.read_manifest(dataset_dir)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(out_path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["object_id", "candidate_index", "qw", "qx", "qy", "qz", "tx", "ty", "tz", "width_mm"])
        for obj in manifest["objects"]:
            rec = ds.read_object(dataset_dir / obj["file"])
            for i in rec.success_indices():
                c = rec.candidates[i]
                g = world_grasp(chain, c.pose)
                w.writerow([rec.object_id, int(i), *[repr(float(v)) for v in g.to_array()], repr(c.width)])
                n += 1
    return n


def write_demo_corpus(out_dir) -> list[Path]:
    """The five test primitives as OBJ files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meshes = {
        "cube": shapes.box(0.05, 0.05, 0.05, divisions=4),
        "sphere": shapes.icosphere(0.03, 3),
        "cylinder": shapes.cylinder(0.02, 0.08, 32, 4),
        "l_bracket": shapes.l_bracket(),
        "torus": shapes.torus(0.04, 0.012, 48, 16),
    }
    return [save_obj(m, out_dir / f"{name}.obj") for name, m in meshes.items()]


# ---------------------------------------------------------------------------
def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jawgrasp", description="Parallel-jaw grasp dataset generation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, meshes=True, out=True):
        sp.add_argument("--config", help="YAML config file")
        if meshes:
            sp.add_argument("--meshes", required=True, help="directory of .obj/.stl meshes")
        if out:
            sp.add_argument("--out", required=True, help="dataset directory")
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--gripper", choices=sorted(PRESETS))
        sp.add_argument("--n-grasps", type=int, help="representatives evaluated per object")
        sp.add_argument("--quiet", action="store_true")

    common(sub.add_parser("run", help="full pipeline: sample, filter, cluster, evaluate, write"))
    common(sub.add_parser("sample", help="sample and collision-filter candidates"))
    for name, text in (("cluster", "select representatives in an existing dataset"),
                       ("evaluate", "evaluate selected grasps in an existing dataset")):
        common(sub.add_parser(name, help=text), meshes=False)

    sp = sub.add_parser("stats", help="write stats.csv for a dataset")
    sp.add_argument("--out", required=True)
    sp = sub.add_parser("coverage", help="write coverage/<id>.xyz point clouds")
    sp.add_argument("--out", required=True)
    sp = sub.add_parser("transform", help="world-frame successful grasps via a calibration chain")
    sp.add_argument("--calibration", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--out", required=True, help="output CSV")
    sp = sub.add_parser("validate", help="check dataset files against the manifest hashes")
    sp.add_argument("--out", required=True)
    sp = sub.add_parser("demo-corpus", help="write the five primitive test meshes")
    sp.add_argument("--out", required=True)
    return p


def _config(args):
    cfg = load_config(args.config)
    return with_overrides(cfg, gripper=args.gripper, seed=args.seed, n_grasps=args.n_grasps)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ds.DatasetError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def _dispatch(args) -> int:
    cmd = args.command
    if cmd in ("run", "sample"):
        cfg = _config(args)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        mesh_dir = Path(args.meshes)
        if not mesh_dir.is_dir():
            raise ConfigError(f"mesh directory {mesh_dir} does not exist")
        summary = pipeline.run_pipeline(cfg, mesh_dir, args.out, args.jobs, cmd, args.quiet)
        return summary.exit_code
    if cmd in ("cluster", "evaluate"):
        base = load_config(args.config) if args.config else pipeline.config_from_manifest(ds.read_manifest(args.out))
        cfg = with_overrides(base, gripper=args.gripper, seed=args.seed, n_grasps=args.n_grasps)
        summary = pipeline.rerun_stage(args.out, cmd, args.jobs, cfg, args.quiet)
        return summary.exit_code
    if cmd == "stats":
        stats = pipeline.write_stats(args.out, ds.read_manifest(args.out))
        if stats is None:
            return EXIT_EMPTY
        sys.stdout.write(stats.to_csv())
        return EXIT_OK
    if cmd == "coverage":
        out = Path(args.out)
        manifest = ds.read_manifest(out)
        for obj in manifest["objects"]:
            rec = ds.read_object(out / obj["file"])
            ds.write_xyz(ds.coverage_cloud(rec), out / "coverage" / f"{rec.object_id}.xyz")
        return EXIT_OK if manifest["objects"] else EXIT_EMPTY
    if cmd == "transform":
        n = transform_dataset(load_calibration(args.calibration), args.dataset, args.out)
        print(f"{n} world-frame grasps written to {args.out}", file=sys.stderr)
        return EXIT_OK
    if cmd == "validate":
        problems = ds.validate_manifest(args.out)
        for p in problems:
            print(p, file=sys.stderr)
        return EXIT_OK if not problems else EXIT_CONFIG
    if cmd == "demo-corpus":
        for p in write_demo_corpus(args.out):
            print(p)
        return EXIT_OK
    raise AssertionError(cmd)


if __name__ == "__main__":
    sys.exit(main())
