from pathlib import Path

import pytest

from src.config_parser import ConfigParser, build_config, config_hash, parse_config, serialize_config
from src.errors import ConfigError
from src.models import RunConfig


def test_defaults():
    cfg = build_config({})
    assert cfg.model.d == 3
    assert cfg.path.T == 8.0
    assert cfg.test.k_star == pytest.approx(0.5 / cfg.model.sigma)
    assert cfg.output_dir == "output"


def test_every_violation_is_collected():
    with pytest.raises(ConfigError) as info:
        parse_config("d = 7\ne = -1\nwidth = 3\n")
    keys = [key for key, _ in info.value.violations]
    assert "d" in keys
    assert "e" in keys
    assert "width" in keys


def test_non_integral_grid_is_rejected():
    with pytest.raises(ConfigError) as info:
        build_config({"T": 1.0, "dt": 0.3})
    assert [key for key, _ in info.value.violations] == ["path"]


def test_malformed_and_duplicate_lines():
    with pytest.raises(ConfigError) as info:
        parse_config("e = 0.1\njust words\ne = 0.2\n")
    keys = [key for key, _ in info.value.violations]
    assert keys == ["line 2", "e"]


def test_comments_and_lists():
    cfg = parse_config("# a run\nT_list = 2, 4, 8   # curve points\ngamma = 0.25, 0.75\nseed = 9\n")
    assert cfg.experiments.T_list == (2.0, 4.0, 8.0)
    assert cfg.experiments.gammas == (0.25, 0.75)
    assert cfg.mcmc.seed == 9


def test_serialisation_round_trip():
    cfg = build_config({"d": 4, "e": 0.125, "sigma": 0.7, "T": 2.0, "dt": 0.1, "caps": "4, 8", "output_dir": "runs"})
    again = parse_config(serialize_config(cfg))
    assert again == cfg
    assert config_hash(again) == config_hash(cfg)


def test_hash_is_short_and_sensitive():
    a = build_config({})
    b = build_config({"seed": 1})
    assert len(config_hash(a)) == 16
    assert config_hash(a) == config_hash(build_config({}))
    assert config_hash(a) != config_hash(b)


def test_yaml_config(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("e: 0.2\nT_list: [2, 4]\nchains: 2\n", encoding="utf-8")
    cfg = ConfigParser.parse(path)
    assert cfg.model.e == 0.2
    assert cfg.experiments.T_list == (2.0, 4.0)
    assert cfg.mcmc.chains == 2


def test_yaml_must_be_a_mapping(tmp_path):
    path = tmp_path / "run.yml"
    path.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        ConfigParser.parse(path)


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        ConfigParser.parse("does/not/exist.cfg")


def test_validate_config_warnings():
    ok, warnings = ConfigParser.validate_config(RunConfig())
    assert ok
    strong = build_config({"e": 2.0, "pot_alpha": 1.0, "burn_in": 10})
    ok, warnings = ConfigParser.validate_config(strong)
    assert ok
    assert any("Coupling" in w for w in warnings)
    assert any("pot_alpha" in w for w in warnings)
    assert any("burn_in" in w for w in warnings)
    done, warnings = ConfigParser.validate_config(build_config({"steps": 100, "burn_in": 100}))
    assert not done


def test_validate_config_flags_short_localization_runs():
    _, warnings = ConfigParser.validate_config(build_config({"steps": 2000, "burn_in": 1000, "chains": 4, "thin": 5}))
    assert any("localization needs at least 10000" in w for w in warnings)
    cfg = build_config({"steps": 4000, "burn_in": 1000, "chains": 4, "thin": 1})
    assert cfg.mcmc.pooled_samples == 12000
    _, warnings = ConfigParser.validate_config(cfg)
    assert not any("localization" in w for w in warnings)


def test_shipped_d3_config_has_enough_localization_samples():
    cfg = ConfigParser.parse(Path(__file__).resolve().parents[1] / "experiments" / "nelson_d3" / "run.cfg")
    assert cfg.mcmc.pooled_samples >= 10_000
