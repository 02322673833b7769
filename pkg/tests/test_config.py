import pytest

from jawgrasp.config import ConfigError, PipelineConfig, config_from_dict, load_config, with_overrides


def test_defaults():
    cfg = load_config(None)
    assert cfg.gripper.name == "robotiq_2f85" and cfg.n_target == 5000
    assert cfg.sampler.samples_per_object == 4096 and cfg.physics.mu == 0.5
    assert with_overrides(cfg, gripper="franka_panda").n_target == 2000


def test_full_file(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("""
gripper: {preset: franka_panda, max_opening: 90.0}
n_representatives: 12
seed: 7
mesh_scale: 0.001
sampler: {samples_per_object: 100, antipodal_tol_deg: 20}
cluster: {linkage_threshold: 0.1}
physics: {mu: 0.3, cone_edges: 12}
collision: {clearance_mm: 1.0}
""")
    cfg = load_config(p)
    assert cfg.gripper.max_opening == 90.0 and cfg.gripper.name == "franka_panda"
    assert (cfg.n_target, cfg.seed, cfg.mesh_scale) == (12, 7, 0.001)
    assert cfg.sampler.antipodal_tol_deg == 20 and cfg.cluster.linkage_threshold == 0.1
    assert cfg.physics.cone_edges == 12 and cfg.collision.clearance_mm == 1.0


@pytest.mark.parametrize("raw", [
    {"bogus": 1},
    {"sampler": {"nope": 1}},
    {"sampler": {"samples_per_object": 0}},
    {"physics": {"mu": -1}},
    {"physics": "high"},
    {"gripper": "pincer"},
    {"gripper": {"preset": "franka_panda", "color": "red"}},
    {"n_representatives": 0},
    {"seed": -3},
    {"mesh_scale": 0},
    {"collision": {"clearance_mm": -1}},
])
def test_rejects_bad_values(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_bad_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("a: [1, 2\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    lst = tmp_path / "list.yaml"
    lst.write_text("- 1\n")
    with pytest.raises(ConfigError):
        load_config(lst)


def test_overrides_and_dict_round_trip():
    cfg = with_overrides(PipelineConfig(), seed=5, n_grasps=3)
    assert cfg.seed == 5 and cfg.n_target == 3
    with pytest.raises(ConfigError):
        with_overrides(cfg, n_grasps=0)
    with pytest.raises(ConfigError):
        with_overrides(cfg, gripper="nope")
    d = cfg.to_dict()
    g = d.pop("gripper")
    d["gripper"] = {"preset": g.pop("name"), **g}
    assert config_from_dict(d) == cfg
