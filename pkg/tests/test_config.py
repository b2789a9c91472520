"""Config validation, loading, overrides, and the config-hash contract."""

import pytest

from framematrix.config import PipelineConfig, load_config
from framematrix.errors import ConfigError


def test_defaults_are_valid_and_plan_builds():
    cfg = PipelineConfig()
    sched = cfg.schedule()
    plan = cfg.plan()
    plan.validate_for(sched)
    assert plan.timesteps()[0] == 981 and plan.timesteps()[-1] == 1
    assert cfg.rig_views == 6
    assert PipelineConfig(mode="spatial").rig_views == 16


def test_config_hash_changes_iff_any_field_changes():
    base = PipelineConfig()
    assert base.config_hash() == PipelineConfig().config_hash()
    for field, value in [("seed", 1), ("baseline", 0.08), ("planes", 5),
                         ("reinject", False), ("oracle", "exact")]:
        changed = PipelineConfig(**{field: value})
        assert changed.config_hash() != base.config_hash(), field


def test_cross_validation():
    with pytest.raises(ValueError):
        PipelineConfig(steps=51, jump=20, timesteps=1000)
    with pytest.raises(ValueError):
        PipelineConfig(depth_near=5.0, depth_far=2.0)
    with pytest.raises(ValueError):
        PipelineConfig(oracle="bridge")
    PipelineConfig(oracle="bridge", bridge_address="localhost:9000")


def test_load_config_file_overrides_and_env(tmp_path):
    f = tmp_path / "c.yaml"
    f.write_text("seed: 4\nplanes: 3\nbaseline: 0.05\n")
    cfg = load_config(f)
    assert (cfg.seed, cfg.planes, cfg.baseline) == (4, 3, 0.05)
    cfg = load_config(f, overrides={"planes": "6", "refine_views": "[0, 5]"})
    assert cfg.planes == 6 and cfg.refine_views == [0, 5]
    cfg = load_config(f, overrides={"seed": "7"}, seed_env="42")
    assert cfg.seed == 42
    with pytest.raises(ConfigError):
        load_config(f, overrides={"planes": "0"})
    bad = tmp_path / "bad.yaml"
    bad.write_text("- just\n- a list\n")
    with pytest.raises(ConfigError):
        load_config(bad)
