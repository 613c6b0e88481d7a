import os
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from hjhomog import io
from hjhomog.cli import ScenarioConfig, compare_runs, main, run_scenario
from hjhomog.errors import ConfigError, MismatchedTask

from conftest import G_POLY

QUAD = {"kind": "periodic", "period": 1.0, "potential": {"modes": [[1.0, 1.0, 0.0]]}}
G_ENV = {"kind": "periodic", "period": 1.0, "poly": list(G_POLY)}
RANDOM = {"kind": "random_phase_trig", "params": {"potential_amplitude": 1.0},
          "window": [0.0, 50.0]}


def _effective_cfg():
    return {"environment": G_ENV, "task": "effective",
            "params": {"lambda_lo": 0.0, "lambda_hi": 9.0, "n_lambda": 31}}


@pytest.mark.parametrize("data, field", [
    ({"task": "effective"}, "environment"),
    ({"environment": QUAD}, "task"),
    ({"environment": QUAD, "task": "solve"}, "task"),
    ({"environment": QUAD, "task": "effective", "params": {"lambda_lo": 0}}, "params.lambda_hi"),
    ({"environment": {"kind": "periodic"}, "task": "validate",
      "params": {"p_max": 2, "n_samples": 8}}, "environment.period"),
    ({"environment": {"kind": "lattice"}, "task": "validate",
      "params": {"p_max": 2, "n_samples": 8}}, "environment.kind"),
    ({"environment": QUAD, "task": "validate", "params": {"p_max": 2, "n_samples": 8},
      "tolerances": {"ode": -1}}, "tolerances.ode"),
    ({"environment": QUAD, "task": "validate", "colour": 1}, "colour"),
])
def test_config_errors_name_field(data, field):
    with pytest.raises(ConfigError) as exc:
        ScenarioConfig.from_dict(data)
    assert exc.value.field == field


def test_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(yaml.safe_dump({"environment": QUAD, "task": "effective"}))
    assert main(["--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "params.lambda_lo" in capsys.readouterr().err
    assert main(["--out", str(tmp_path)]) == 2


def test_task_error_exit_code(tmp_path):
    cfg = tmp_path / "low.yaml"
    cfg.write_text(yaml.safe_dump({"environment": QUAD, "task": "effective",
                                   "params": {"lambda_lo": -3, "lambda_hi": 3, "n_lambda": 5}}))
    assert main(["--config", str(cfg), "--out", str(tmp_path)]) == 1


def test_config_hash_ignores_output():
    a = ScenarioConfig.from_dict({**_effective_cfg(), "output": "x"})
    b = ScenarioConfig.from_dict({**_effective_cfg(), "output": "y", "workers": 2})
    assert a.hash == b.hash


@pytest.fixture(scope="module")
def effective_runs(tmp_path_factory):
    out = []
    for k in range(2):
        root = tmp_path_factory.mktemp(f"run{k}")
        out.append(run_scenario(_effective_cfg(), root))
    return out


def test_effective_task(effective_runs):
    status, m = effective_runs[0]
    assert status == 0
    assert m["summary"]["gap_count"] == 0
    assert m["oracles"]["x_independent_max_error"] <= 1e-6
    d = Path(m["directory"])
    assert {"effective.csv", "gaps.json"} <= set(m["files"])
    assert io.read_json(d / "gaps.json") == []
    saved = io.read_json(d / "manifest.json")
    assert saved["config_hash"] == m["config_hash"]
    assert set(saved["versions"]) >= {"python", "numpy", "scipy", "numba", "backend"}


def test_deterministic_outputs(effective_runs):
    (_, a), (_, b) = effective_runs
    for name in a["files"]:
        assert (Path(a["directory"]) / name).read_bytes() == (Path(b["directory"]) / name).read_bytes()
        assert a["files"][name] == b["files"][name]
    rep = compare_runs(a["directory"], b["directory"], 0.0)
    assert rep["ok"] and rep["max_deviation"] == 0.0


def test_cache_hit(effective_runs):
    _, m = effective_runs[0]
    root = Path(m["config"]["output"])
    _, again = run_scenario(_effective_cfg(), root)
    assert again["summary"]["effective_cache"] == "hit"
    assert again["files"]["effective.csv"] == m["files"]["effective.csv"]


def test_mismatched_task(effective_runs, tmp_path):
    _, m = run_scenario({"environment": QUAD, "task": "validate",
                         "params": {"p_max": 3, "n_samples": 64}}, tmp_path)
    assert m["summary"]["violations"] == 0
    with pytest.raises(MismatchedTask):
        compare_runs(effective_runs[0][1], m, 1e-8)
    assert main(["--compare", effective_runs[0][1]["directory"], m["directory"]]) == 1


def test_tolerance_halving(tmp_path):
    cfg = tmp_path / "branches.yaml"
    cfg.write_text(yaml.safe_dump({"environment": QUAD, "task": "branches",
                                   "params": {"lambdas": [1.5, 3.0]}}))
    assert main(["--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["--config", str(cfg), "--out", str(tmp_path / "b"), "--tol-scale", "0.5"]) == 0
    a = next((tmp_path / "a").glob("branches-*"))
    b = next((tmp_path / "b").glob("branches-*"))
    assert a.name != b.name
    rep = compare_runs(a, b, 1e-7)
    # residual diagnostics move with the tolerance; the solutions do not
    assert {e[1] for e in rep["exceedances"]} <= {"max_residual", "period_defect"}
    for col in ("theta", "p0"):
        assert rep["files"]["branches.csv"][col] <= 1e-7
    assert rep["files"]["branch_profiles.csv"]["f"] <= 1e-7


def test_ergodic_seed_sets_agree(tmp_path):
    base = {"environment": RANDOM, "task": "ergodic",
            "params": {"lambdas": [3.0], "seeds": 4, "window": 100.0, "burn_in": 10.0}}
    runs = []
    for seed in (0, 100):
        _, m = run_scenario({**base, "seed": seed}, tmp_path)
        header, rows = io.read_csv(Path(m["directory"]) / "ergodic.csv")
        runs.append(io.numeric_columns(header, rows))
    a, b = runs
    assert a["theta_hat"].size == b["theta_hat"].size == 2
    diff = abs(a["theta_hat"] - b["theta_hat"])
    assert (diff <= 3 * (a["ci"] + b["ci"])).all()


def test_module_entry_point(tmp_path):
    cfg = tmp_path / "v.yaml"
    cfg.write_text(yaml.safe_dump({"environment": QUAD, "task": "validate",
                                   "params": {"p_max": 3, "n_samples": 64}}))
    proc = subprocess.run([sys.executable, "-m", "hjhomog.cli", "--config", str(cfg),
                           "--out", str(tmp_path)], capture_output=True, text=True,
                          env={**os.environ})
    assert proc.returncode == 0, proc.stderr
    assert Path(proc.stdout.strip(), "assumptions.json").exists()


def test_effective_task_hill_oracle(tmp_path):
    _, m = run_scenario({"environment": QUAD, "task": "effective",
                         "params": {"lambda_lo": 0.0, "lambda_hi": 6.0, "n_lambda": 41}}, tmp_path)
    assert m["summary"]["gap_count"] == 0
    assert m["oracles"]["hill_max_error"] <= 1e-4
    assert m["oracles"]["hill_query_max_error"] <= 5e-3


def test_bridge_task_on_bulge(tmp_path):
    cfg = io.load_config(Path(__file__).parents[1] / "configs" / "nonconvex_bridge.yaml")
    cfg["params"]["deltas"] = [0.2]
    _, m = run_scenario(cfg, tmp_path)
    assert m["summary"]["gap_count"] == 0
    assert m["summary"]["bridges"] == 2 and m["summary"]["bridges_ok"]
    assert {"bridge_bulge_up_0.2.csv", "bridge_bulge_down_0.2.csv"} <= set(m["files"])
