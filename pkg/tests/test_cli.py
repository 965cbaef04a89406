"""End-to-end runs of the command-line interface on a small demo panel."""

import hashlib
import json
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from probitpanel import __version__
from probitpanel.cli import EXIT_CONFIG, EXIT_DATA, main
from probitpanel.data import write_csv
from probitpanel.synthetic import demo_panel


def _config(tmp, **over):
    cfg = {
        "seed": 11,
        "model": "gaussian",
        "output": "out/fit",
        "data": {"path": "panel.csv", "holdout_after": "2018-01-01",
                 "schema": {"covariates": ["x1", "x2", "x3"], "risk_group": "risk_group"}},
        "chain": {"iterations": 300, "burn_in": 100, "chains": 2},
        "analysis": {"max_draws": 60, "psa_thresholds": [0.1, 0.2, 0.3, 0.45, 0.6]},
        "simulation": {"replicates": 20, "n_max": 50, "n_grid": [1, 10, 50],
                       "taus": [0.0, 0.5], "cohort": 50, "grid_points": 801},
    }
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict):
            cfg[k] = {**cfg[k], **v}
        else:
            cfg[k] = v
    path = tmp / "run.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    write_csv(demo_panel(200, seed=1), tmp / "panel.csv")
    cfg = _config(tmp)
    assert main(["fit", str(cfg), "--out", str(tmp / "fit")]) == 0
    return tmp, cfg


def _digest(d: Path) -> dict:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.iterdir())}


def test_fit_outputs(workspace):
    tmp, _ = workspace
    names = set(p.name for p in (tmp / "fit").iterdir())
    assert {"chain_0.csv", "chain_1.csv", "standardization.json", "convergence.csv",
            "summary.csv", "metadata.json"} <= names
    meta = json.loads((tmp / "fit" / "metadata.json").read_text())
    assert meta["seed"] == 11
    assert meta["version"] == __version__
    assert len(meta["config_sha256"]) == 64
    assert "output" not in meta["config"]


def test_predict_analyze_diagnose(workspace):
    tmp, cfg = workspace
    fit = str(tmp / "fit")
    assert main(["predict", str(cfg), "--fit", fit, "--out", str(tmp / "pred")]) == 0
    assert {"predictive.csv", "pstar_samples.csv", "p_samples.csv"} <= set(
        p.name for p in (tmp / "pred").iterdir())
    assert main(["analyze", str(cfg), "--fit", fit, "--out", str(tmp / "an")]) == 0
    names = set(p.name for p in (tmp / "an").iterdir())
    for s in ("psa_midpoint", "psa_sized", "clustered"):
        assert f"calibration_{s}.csv" in names and f"wrong_bin_{s}.csv" in names
    assert {"intervals.csv", "interval_lengths.csv", "flagging.csv", "analysis.json"} <= names
    assert main(["diagnose", str(cfg), "--fit", fit, "--out", str(tmp / "diag")]) == 0
    adv = json.loads((tmp / "diag" / "advisory.json").read_text())
    assert adv["rhat_threshold"] == pytest.approx(1.01)


def test_simulate_outputs(tmp_path):
    cfg = _config(tmp_path)
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "sim")]) == 0
    names = set(p.name for p in (tmp_path / "sim").iterdir())
    assert {"interval_length_curve.csv", "signal_noise_intervals.csv",
            "signal_noise_overlap.csv", "metadata.json"} <= names


def test_rerun_is_byte_identical(workspace):
    tmp, cfg = workspace
    assert main(["fit", str(cfg), "--out", str(tmp / "again"), "--threads", "2"]) == 0
    assert _digest(tmp / "again") == _digest(tmp / "fit")


def test_seed_override_changes_draws(workspace):
    tmp, cfg = workspace
    assert main(["fit", str(cfg), "--seed", "12", "--out", str(tmp / "s12")]) == 0
    assert (tmp / "s12" / "chain_0.csv").read_bytes() != (tmp / "fit" / "chain_0.csv").read_bytes()


def test_inputs_not_mutated(workspace):
    tmp, cfg = workspace
    before = _digest(tmp / "fit")
    panel = hashlib.sha256((tmp / "panel.csv").read_bytes()).hexdigest()
    assert main(["diagnose", str(cfg), "--fit", str(tmp / "fit"), "--out", str(tmp / "d2")]) == 0
    assert _digest(tmp / "fit") == before
    assert hashlib.sha256((tmp / "panel.csv").read_bytes()).hexdigest() == panel


def test_missing_config(tmp_path):
    assert main(["fit", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG


def test_unknown_column_is_config_error(workspace, tmp_path):
    tmp, _ = workspace
    (tmp_path / "panel.csv").write_bytes((tmp / "panel.csv").read_bytes())
    cfg = _config(tmp_path, data={"schema": {"covariates": ["x1", "x9"]}})
    assert main(["fit", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert not (tmp_path / "o").exists()


def test_bad_data_exits_without_outputs(tmp_path):
    (tmp_path / "panel.csv").write_text(
        "person_id,date,outcome,x1,x2,x3\na,2015-01-01,2,1,1,1\n")
    cfg = _config(tmp_path, data={"schema": {"covariates": ["x1", "x2", "x3"],
                                             "missing": "abort"}})
    assert main(["fit", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert list(tmp_path.glob("o*")) == [] and list(tmp_path.glob(".o*")) == []


def test_unknown_keys_rejected(tmp_path):
    cfg = _config(tmp_path, bogus=1)
    assert main(["simulate", str(cfg)]) == EXIT_CONFIG
    cfg = _config(tmp_path, chain={"iters": 5})
    (tmp_path / "panel.csv").write_text("person_id,date,outcome,x1,x2,x3\n")
    assert main(["fit", str(cfg)]) == EXIT_CONFIG


def test_threads_must_be_positive(tmp_path):
    assert main(["simulate", str(_config(tmp_path)), "--threads", "0"]) == EXIT_CONFIG


def test_binomial_fit(tmp_path):
    (tmp_path / "b.csv").write_text("y,n\n0,1\n3,5\n1,2\n5,6\n")
    cfg = _config(tmp_path, model="binomial-mixture", binomial={"path": "b.csv", "J": 4})
    assert main(["fit", str(cfg), "--out", str(tmp_path / "o")]) == 0
    occ = json.loads((tmp_path / "o" / "occupancy.json").read_text())
    assert sum(occ["table"].values()) == 2 * 200
    assert (tmp_path / "o" / "beta_marginal.json").exists()


def test_module_entry_point(tmp_path):
    cfg = _config(tmp_path)
    r = subprocess.run([sys.executable, "-m", "probitpanel.cli", "simulate", str(cfg),
                        "--out", str(tmp_path / "sim")], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
