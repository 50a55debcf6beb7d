import json

import numpy as np
import pytest
from click.testing import CliRunner

from src.artifact_store import read_csv
from src.config_parser import build_config, config_hash, serialize_config
from src.errors import InsufficientDataError
from src.main import main
from src.pipeline import EXPERIMENTS, ExperimentPipeline

from .conftest import small_run


@pytest.fixture(autouse=True)
def single_worker(monkeypatch):
    monkeypatch.setenv("NIRSIM_THREADS", "1")


def test_unknown_experiment_lists_valid_names(tmp_path):
    pipeline = ExperimentPipeline(build_config({}), tmp_path)
    with pytest.raises(ValueError) as info:
        pipeline.run("everything")
    for name in EXPERIMENTS:
        assert name in str(info.value)


def test_ir_scan_writes_hashed_csv_and_summary(tmp_path):
    cfg = build_config({"d": 3, "e": 0.3})
    summary = ExperimentPipeline(cfg, tmp_path).run("ir-scan")
    assert summary["acceptance"]["overall_passed"]
    meta, rows = read_csv(tmp_path / "ir-scan" / "ir-scan.csv")
    assert meta["config_hash"] == config_hash(cfg)
    assert len(rows) == 8
    stored = json.loads((tmp_path / "ir-scan" / "summary.json").read_text())
    assert stored["config_hash"] == config_hash(cfg)
    assert stored["acceptance"]["checks"]["ir_log_divergence"]["passed"]


def test_ir_scan_converges_in_four_dimensions(tmp_path):
    summary = ExperimentPipeline(build_config({"d": 4}), tmp_path).run("ir-scan")
    assert summary["acceptance"]["checks"]["ir_convergence"]["passed"]


def test_outputs_are_reproducible(tmp_path):
    cfg = build_config({"e": 0.2})
    ExperimentPipeline(cfg, tmp_path / "a").run("ir-scan")
    ExperimentPipeline(cfg, tmp_path / "b").run("ir-scan")
    a = (tmp_path / "a" / "ir-scan" / "ir-scan.csv").read_bytes()
    b = (tmp_path / "b" / "ir-scan" / "ir-scan.csv").read_bytes()
    assert a == b


def test_spectral_experiment(tmp_path):
    summary = ExperimentPipeline(build_config({"d": 3}), tmp_path).run("spectral")
    checks = summary["acceptance"]["checks"]
    for d in (3, 4):
        assert checks[f"spectral_tail_d{d}"]["passed"]
        assert checks[f"spectral_vanishing_d{d}"]["passed"]
        assert f"convolution_tail_d{d}_gamma0.5" in checks
    _, rows = read_csv(tmp_path / "spectral" / "spectral.csv")
    assert {r["term"] for r in rows} == {"explicit", "vanishing", "convolution"}
    for r in (r for r in rows if r["term"] == "convolution"):
        assert float(r["naive_exponent"]) == 2 * int(r["d"]) + float(r["gamma"]) - 4
    assert "from 2d + gamma - 4" in checks["convolution_tail_d3_gamma0.5"]["message"]


def test_ground_state_is_cached_and_hash_checked(tmp_path):
    cfg = small_run()
    pipeline = ExperimentPipeline(cfg, tmp_path)
    pipeline.run("kernels")
    assert (tmp_path / "kernels" / "ground_state.nirg").exists()
    again = ExperimentPipeline(cfg, tmp_path).run("kernels")
    assert again["acceptance"]["checks"]["g_hat_bound"]["passed"]


def test_localization_refuses_short_runs(tmp_path):
    pipeline = ExperimentPipeline(small_run(steps=60, burn_in=20), tmp_path)
    with pytest.raises(InsufficientDataError, match="at least 10000 samples"):
        pipeline.run("localization")


@pytest.mark.slow
def test_free_sampling_experiment(tmp_path):
    cfg = small_run(T=2.0, dt=0.1, steps=400, burn_in=100, chains=2)
    summary = ExperimentPipeline(cfg, tmp_path).run("sample")
    assert summary["acceptance"]["checks"]["lattice_exact_law"]["passed"]
    assert "q2_t0" in summary["estimates"]
    assert any(f.name.endswith(".nirc") for f in (tmp_path / "sample" / "checkpoints").iterdir())


# -- command line -------------------------------------------------------------

def test_cli_probe_prints_origin_value():
    result = CliRunner().invoke(main, ["--quiet", "kernels", "probe", "--e", "1", "--sigma", "1",
                                       "--r", "0", "--t", "0"])
    assert result.exit_code == 0, result.output
    lines = result.output.strip().splitlines()
    assert lines[0].startswith("# config_hash=none")
    assert lines[1] == "r,t,W"
    assert float(lines[2].split(",")[2]) == pytest.approx(-np.pi / 4, rel=1e-10)


def test_cli_schrodinger_solve():
    result = CliRunner().invoke(main, ["schrodinger", "solve", "--C", "0.5", "--alpha", "1",
                                       "--grid-points", "1000"])
    assert result.exit_code == 0, result.output
    assert json.loads(result.output)["E_p"] == pytest.approx(1.5, abs=1e-5)


def test_cli_run_with_config_file(tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text(serialize_config(build_config({"output_dir": str(tmp_path / "out")})), encoding="utf-8")
    result = CliRunner().invoke(main, ["--quiet", "run", str(config), "ir-scan", "--assert"])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "out" / "ir-scan" / "summary.json").exists()


def test_cli_unknown_experiment_exits_with_error(tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text("e = 0.3\n", encoding="utf-8")
    result = CliRunner().invoke(main, ["--quiet", "run", str(config), "nonsense"])
    assert result.exit_code == 1


def test_cli_invalid_config_exits_with_error(tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text("d = 9\n", encoding="utf-8")
    result = CliRunner().invoke(main, ["--quiet", "run", str(config), "ir-scan"])
    assert result.exit_code == 1
    assert "d" in result.output


def test_cli_field_mean_on_zero_path():
    result = CliRunner().invoke(main, ["--quiet", "field", "mean", "--T", "1", "--dt", "0.1", "--k", "0.5,1"])
    assert result.exit_code == 0, result.output
    lines = result.output.strip().splitlines()
    assert lines[1] == "k,re_g,im_g"
    assert len(lines) == 4
    assert float(lines[2].split(",")[1]) < 0.0
