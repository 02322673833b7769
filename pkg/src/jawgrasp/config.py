"""Pipeline configuration file (YAML).

Schema, every key optional::

    gripper: robotiq_2f85            # preset name, or a mapping {preset: name, <field>: value}
    n_representatives: null          # grasps evaluated per object; null -> per-gripper default
    seed: 0
    mesh_scale: 1.0                  # multiply vertex coordinates (0.001 for millimeter CAD files)
    write_json: false                # also write objects/<id>.json
    sampler:   {samples_per_object, rays_per_point, cone_vertex_angle_deg, antipodal_tol_deg,
                decimation_factor, dedup_eps}
    cluster:   {linkage_threshold, rotation_weight, max_points}
    physics:   {mass_kg, mu, cone_edges, gravity, quality_threshold, grip_force_n, contact_patch_radius_m}
    collision: {clearance_mm}

Unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .cluster import DEFAULT_LINKAGE_THRESHOLD, MAX_CLUSTER_POINTS
from .collision import DEFAULT_CLEARANCE_MM
from .evaluator import PhysicalAssumptions
from .gripper import DEFAULT_N_REPRESENTATIVES, GripperError, GripperModel, gripper_from_config
from .sampler import SamplerConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterConfig:
    linkage_threshold: float = DEFAULT_LINKAGE_THRESHOLD
    rotation_weight: float = 1.0
    max_points: int = MAX_CLUSTER_POINTS

    def __post_init__(self):
        if self.linkage_threshold < 0 or self.rotation_weight < 0 or self.max_points < 1:
            raise ValueError("cluster parameters must be non-negative (max_points >= 1)")


@dataclass(frozen=True)
class CollisionConfig:
    clearance_mm: float = DEFAULT_CLEARANCE_MM

    def __post_init__(self):
        if self.clearance_mm < 0:
            raise ValueError("clearance_mm must be >= 0")


@dataclass(frozen=True)
class PipelineConfig:
    gripper: GripperModel = field(default_factory=lambda: gripper_from_config(None))
    n_representatives: int | None = None
    seed: int = 0
    mesh_scale: float = 1.0
    write_json: bool = False
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    physics: PhysicalAssumptions = field(default_factory=PhysicalAssumptions)
    collision: CollisionConfig = field(default_factory=CollisionConfig)

    @property
    def n_target(self) -> int:
        if self.n_representatives is not None:
            return self.n_representatives
        return DEFAULT_N_REPRESENTATIVES.get(self.gripper.name, 2000)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_representatives"] = self.n_target
        return d


_SECTIONS = {"sampler": SamplerConfig, "cluster": ClusterConfig, "physics": PhysicalAssumptions,
             "collision": CollisionConfig}


def _section(name: str, cls, raw) -> object:
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected a mapping")
    allowed = {f.name for f in fields(cls)}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"{name}: unknown key(s) {sorted(unknown)}; allowed {sorted(allowed)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def config_from_dict(raw: dict | None) -> PipelineConfig:
    raw = dict(raw or {})
    allowed = {f.name for f in fields(PipelineConfig)}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {sorted(unknown)}; allowed {sorted(allowed)}")
    kw = {}
    g = raw.get("gripper")
    try:
        kw["gripper"] = gripper_from_config({"preset": g} if isinstance(g, str) else g)
    except (GripperError, TypeError) as exc:
        raise ConfigError(f"gripper: {exc}") from None
    for name, cls in _SECTIONS.items():
        kw[name] = _section(name, cls, raw.get(name))
    n = raw.get("n_representatives")
    if n is not None and (not isinstance(n, int) or n < 1):
        raise ConfigError("n_representatives must be a positive integer or null")
    kw["n_representatives"] = n
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    kw["seed"] = seed
    scale = raw.get("mesh_scale", 1.0)
    if not isinstance(scale, (int, float)) or not scale > 0:
        raise ConfigError("mesh_scale must be > 0")
    kw["mesh_scale"] = float(scale)
    kw["write_json"] = bool(raw.get("write_json", False))
    return PipelineConfig(**kw)


def load_config(path) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw)


def with_overrides(cfg: PipelineConfig, *, gripper: str | None = None, seed: int | None = None,
                   n_grasps: int | None = None) -> PipelineConfig:
    """Apply command-line flags on top of a loaded config."""
    kw = {}
    if gripper is not None:
        try:
            kw["gripper"] = gripper_from_config({"preset": gripper})
        except GripperError as exc:
            raise ConfigError(str(exc)) from None
    if seed is not None:
        kw["seed"] = seed
    if n_grasps is not None:
        if n_grasps < 1:
            raise ConfigError("--n-grasps must be >= 1")
        kw["n_representatives"] = n_grasps
    return replace(cfg, **kw)
