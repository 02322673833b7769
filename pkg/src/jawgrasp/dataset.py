"""Per-object grasp records, the on-disk dataset layout, and corpus statistics.

Binary object file (all little-endian)::

    header   "GFRG" | u32 version | u64 n_candidates | u64 n_evaluated | u32 flags   (28 bytes)
    meta     32-byte mesh hash | u16 len + utf-8 object_id | u16 len + utf-8 gripper_name
    per candidate: 7 x f64 pose (qw qx qy qz tx ty tz, m) | f32 width_mm | u8 source | u8 roll
                   | 12 x f32 contact pair (p1 p2 n1 n2)
    u64 evaluated index x n_evaluated
    per evaluated: u8 success | f64 quality | f64 close_width_mm | u32 contact_count | u8 reason
    if flags & 1:  2 x f32 (peak contact force N, contact duration s) per evaluated grasp

Widths and contact pairs are stored as f32; :func:`to_storage_precision`
rounds candidates the same way so that records built by the pipeline survive
a write/read cycle unchanged.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .evaluator import EvalOutcome
from .geometry import GraspPose
from .mesh import TriMesh, diversity_stats
from .sampler import ContactPair, GraspCandidate

MAGIC = b"GFRG"
FORMAT_VERSION = 1
FLAG_CONTACT_DATA = 1
FLAG_EVALUATED = 2

_HEADER = struct.Struct("<4sIQQI")
_CAND = np.dtype([("pose", "<f8", 7), ("width", "<f4"), ("source", "u1"), ("roll", "u1"), ("contacts", "<f4", 12)])
_OUT = np.dtype([("success", "u1"), ("quality", "<f8"), ("close_width", "<f8"), ("contact_count", "<u4"),
                 ("reason", "u1")])
assert _HEADER.size == 28 and _CAND.itemsize == 110 and _OUT.itemsize == 22


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ObjectRecord:
    object_id: str
    mesh_hash: bytes
    gripper_name: str
    candidates: list
    evaluated_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    outcomes: list = field(default_factory=list)
    contact_data: np.ndarray | None = None  # reserved: (n_evaluated, 2) float32

    def __post_init__(self):
        if len(self.mesh_hash) != 32:
            raise DatasetError("mesh_hash must be 32 bytes")
        idx = np.asarray(self.evaluated_indices, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "evaluated_indices", idx)
        if len(idx) != len(self.outcomes):
            raise DatasetError("outcomes must parallel evaluated_indices")
        if len(idx) and (idx.min() < 0 or idx.max() >= len(self.candidates)):
            raise DatasetError("evaluated index out of range")
        if self.contact_data is not None and np.shape(self.contact_data) != (len(idx), 2):
            raise DatasetError("contact_data must have shape (n_evaluated, 2)")

    @property
    def n_success(self) -> int:
        return sum(1 for o in self.outcomes if o.success)

    def success_indices(self) -> np.ndarray:
        ok = np.array([o.success for o in self.outcomes], dtype=bool)
        return self.evaluated_indices[ok] if len(ok) else np.zeros(0, dtype=np.int64)

    def with_outcomes(self, indices, outcomes) -> "ObjectRecord":
        return ObjectRecord(self.object_id, self.mesh_hash, self.gripper_name, self.candidates,
                            np.asarray(indices, dtype=np.int64), list(outcomes))

    def equals(self, other: "ObjectRecord") -> bool:
        """Bitwise equality of every stored field."""
        return to_bytes(self) == to_bytes(other)


def to_storage_precision(c: GraspCandidate) -> GraspCandidate:
    """Round a candidate's width and contacts to the f32 values the file holds."""
    width = float(np.float32(c.width))
    contacts = ContactPair.from_array(c.contacts.to_array().astype(np.float32).astype(np.float64))
    return GraspCandidate(c.pose, width, contacts, c.source, c.roll_index)


# ---------------------------------------------------------------------------
def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    if len(b) > 0xFFFF:
        raise DatasetError("string too long")
    return struct.pack("<H", len(b)) + b


def to_bytes(record: ObjectRecord) -> bytes:
    n, m = len(record.candidates), len(record.evaluated_indices)
    flags = (FLAG_CONTACT_DATA if record.contact_data is not None else 0) | (FLAG_EVALUATED if m else 0)
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, FORMAT_VERSION, n, m, flags))
    buf.write(bytes(record.mesh_hash))
    buf.write(_pack_str(record.object_id))
    buf.write(_pack_str(record.gripper_name))
    cand = np.zeros(n, dtype=_CAND)
    if n:
        cand["pose"] = [c.pose.to_array() for c in record.candidates]
        cand["width"] = [c.width for c in record.candidates]
        cand["source"] = [c.source for c in record.candidates]
        cand["roll"] = [c.roll_index for c in record.candidates]
        cand["contacts"] = [c.contacts.to_array() for c in record.candidates]
    buf.write(cand.tobytes())
    buf.write(record.evaluated_indices.astype("<u8").tobytes())
    out = np.zeros(m, dtype=_OUT)
    if m:
        out["success"] = [o.success for o in record.outcomes]
        out["quality"] = [o.quality for o in record.outcomes]
        out["close_width"] = [o.close_width for o in record.outcomes]
        out["contact_count"] = [o.contact_count for o in record.outcomes]
        out["reason"] = [int(o.reason) for o in record.outcomes]
    buf.write(out.tobytes())
    if record.contact_data is not None:
        buf.write(np.asarray(record.contact_data, dtype="<f4").tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes, name: str):
        self.data, self.pos, self.name = data, 0, name

    def take(self, k: int) -> bytes:
        if self.pos + k > len(self.data):
            raise DatasetError(f"{self.name}: truncated (need {k} bytes at offset {self.pos}, "
                               f"file has {len(self.data)})")
        b = self.data[self.pos:self.pos + k]
        self.pos += k
        return b

    def string(self) -> str:
        (k,) = struct.unpack("<H", self.take(2))
        return self.take(k).decode("utf-8")


def from_bytes(data: bytes, name: str = "<bytes>") -> ObjectRecord:
    r = _Reader(data, name)
    magic, version, n, m, flags = _HEADER.unpack(r.take(_HEADER.size))
    if magic != MAGIC:
        raise DatasetError(f"{name}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DatasetError(f"{name}: unsupported format version {version}")
    mesh_hash = r.take(32)
    object_id = r.string()
    gripper_name = r.string()
    cand = np.frombuffer(r.take(n * _CAND.itemsize), dtype=_CAND)
    idx = np.frombuffer(r.take(8 * m), dtype="<u8").astype(np.int64)
    out = np.frombuffer(r.take(m * _OUT.itemsize), dtype=_OUT)
    contact_data = None
    if flags & FLAG_CONTACT_DATA:
        contact_data = np.frombuffer(r.take(8 * m), dtype="<f4").reshape(m, 2).copy()
    if r.pos != len(data):
        raise DatasetError(f"{name}: {len(data) - r.pos} trailing bytes")
    candidates = [
        GraspCandidate(GraspPose.from_array(c["pose"]), float(c["width"]),
                       ContactPair.from_array(c["contacts"].astype(np.float64)), int(c["source"]), int(c["roll"]))
        for c in cand
    ]
    outcomes = [EvalOutcome(bool(o["success"]), float(o["quality"]), float(o["close_width"]),
                            int(o["contact_count"]), int(o["reason"])) for o in out]
    return ObjectRecord(object_id, mesh_hash, gripper_name, candidates, idx, outcomes, contact_data)


def _atomic_write(path: Path, data: bytes) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return path


def write_object(record: ObjectRecord, directory) -> Path:
    return _atomic_write(Path(directory) / f"{record.object_id}.gfrg", to_bytes(record))


def read_object(path) -> ObjectRecord:
    path = Path(path)
    return from_bytes(path.read_bytes(), str(path))


# ---------------------------------------------------------------------------
def record_to_json(record: ObjectRecord) -> dict:
    """Lossless JSON form (floats round-trip through ``repr``)."""
    return {
        "format_version": FORMAT_VERSION,
        "object_id": record.object_id,
        "mesh_hash": record.mesh_hash.hex(),
        "gripper_name": record.gripper_name,
        "candidates": [
            {"pose": [float(v) for v in c.pose.to_array()], "width_mm": float(c.width), "source": int(c.source),
             "roll": int(c.roll_index), "contacts": [float(v) for v in c.contacts.to_array()]}
            for c in record.candidates
        ],
        "evaluated_indices": [int(i) for i in record.evaluated_indices],
        "outcomes": [
            {"success": bool(o.success), "quality": float(o.quality), "close_width_mm": float(o.close_width),
             "contact_count": int(o.contact_count), "reason": int(o.reason)}
            for o in record.outcomes
        ],
        "success_indices": [int(i) for i in record.success_indices()],
        "contact_data": None if record.contact_data is None else np.asarray(record.contact_data).tolist(),
    }


def record_from_json(d: dict) -> ObjectRecord:
    cands = [GraspCandidate(GraspPose.from_array(c["pose"]), c["width_mm"], ContactPair.from_array(c["contacts"]),
                            c["source"], c["roll"]) for c in d["candidates"]]
    outs = [EvalOutcome(o["success"], o["quality"], o["close_width_mm"], o["contact_count"], o["reason"])
            for o in d["outcomes"]]
    cd = None if d.get("contact_data") is None else np.asarray(d["contact_data"], dtype=np.float32).reshape(-1, 2)
    return ObjectRecord(d["object_id"], bytes.fromhex(d["mesh_hash"]), d["gripper_name"], cands,
                        np.asarray(d["evaluated_indices"], dtype=np.int64), outs, cd)


def write_object_json(record: ObjectRecord, directory) -> Path:
    text = json.dumps(record_to_json(record), indent=1, sort_keys=True)
    return _atomic_write(Path(directory) / f"{record.object_id}.json", text.encode("utf-8"))


# ---------------------------------------------------------------------------
def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(manifest: dict, out_dir) -> Path:
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    return _atomic_write(Path(out_dir) / "manifest.json", text.encode("utf-8"))


def read_manifest(out_dir) -> dict:
    path = Path(out_dir) / "manifest.json"
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read manifest {path}: {exc}") from None


def validate_manifest(out_dir, mesh_root=None) -> list[str]:
    """Problems found in a dataset directory; empty when every file exists and hash-matches.

    Mesh files are checked too when their paths resolve (relative paths are
    taken against ``mesh_root``).
    """
    out_dir = Path(out_dir)
    manifest = read_manifest(out_dir)
    problems = []
    if manifest.get("format_version") != FORMAT_VERSION:
        problems.append(f"format_version {manifest.get('format_version')} != {FORMAT_VERSION}")
    for obj in manifest.get("objects", []):
        path = out_dir / obj["file"]
        if not path.exists():
            problems.append(f"{obj['object_id']}: missing {obj['file']}")
            continue
        if sha256_file(path) != obj["file_sha256"]:
            problems.append(f"{obj['object_id']}: object file hash mismatch")
        try:
            rec = read_object(path)
        except DatasetError as exc:
            problems.append(str(exc))
            continue
        if rec.mesh_hash.hex() != obj["mesh_sha256"]:
            problems.append(f"{obj['object_id']}: record mesh hash differs from manifest")
        mesh_path = Path(obj["mesh"])
        if mesh_root is not None and not mesh_path.is_absolute():
            mesh_path = Path(mesh_root) / mesh_path
        if mesh_path.exists() and sha256_file(mesh_path) != obj["mesh_sha256"]:
            problems.append(f"{obj['object_id']}: mesh file {mesh_path} changed since generation")
    return problems


# ---------------------------------------------------------------------------
STAT_FIELDS = ("object_id", "n_candidates", "n_evaluated", "n_success", "success_rate",
               "num_triangles", "num_vertices", "edge_length_mean", "edge_length_std")


@dataclass(frozen=True)
class CorpusStats:
    rows: list                   # one dict per object, keys STAT_FIELDS
    aggregate: dict              # same keys, object_id "ALL"
    triangle_hist: tuple         # (counts, bin_edges) over per-object triangle counts

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=STAT_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in self.rows + [self.aggregate]:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()


def corpus_stats(records: Sequence[ObjectRecord], meshes: Sequence[TriMesh], bins: int = 10) -> CorpusStats:
    if len(records) == 0:
        raise ValueError("need at least one record")
    if len(meshes) != len(records):
        raise ValueError("meshes must parallel records")
    rows = []
    for rec, mesh in zip(records, meshes):
        ev = len(rec.outcomes)
        ok = rec.n_success
        rows.append({"object_id": rec.object_id, "n_candidates": len(rec.candidates), "n_evaluated": ev,
                     "n_success": ok, "success_rate": ok / ev if ev else 0.0, **diversity_stats(mesh)})
    tot_ev = sum(r["n_evaluated"] for r in rows)
    tot_ok = sum(r["n_success"] for r in rows)
    agg = {"object_id": "ALL", "n_candidates": sum(r["n_candidates"] for r in rows), "n_evaluated": tot_ev,
           "n_success": tot_ok, "success_rate": tot_ok / tot_ev if tot_ev else 0.0,
           "num_triangles": sum(r["num_triangles"] for r in rows),
           "num_vertices": sum(r["num_vertices"] for r in rows),
           "edge_length_mean": float(np.mean([r["edge_length_mean"] for r in rows])),
           "edge_length_std": float(np.mean([r["edge_length_std"] for r in rows]))}
    tri = np.array([r["num_triangles"] for r in rows])
    counts, edges = np.histogram(tri, bins=min(bins, len(rows)))
    return CorpusStats(rows, agg, (counts, edges))


def coverage_cloud(record: ObjectRecord) -> np.ndarray:
    """Translations of all successful grasp poses, shape (k, 3)."""
    idx = record.success_indices()
    if not len(idx):
        return np.zeros((0, 3))
    return np.array([record.candidates[i].pose.translation for i in idx], dtype=np.float64)


def write_xyz(points: np.ndarray, path) -> Path:
    text = "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in np.asarray(points, dtype=float).tolist())
    return _atomic_write(Path(path), text.encode("ascii"))


def read_xyz(path) -> np.ndarray:
    data = np.loadtxt(path, ndmin=2)
    return data.reshape(-1, 3)
