import json

import pandas as pd
import pytest
from typer.testing import CliRunner

from graphon_epi.cli import app
from graphon_epi.config import EXIT_NON_CONVERGENCE, EXIT_VALIDATION, TRAINING_LOG_COLUMNS, TRAJECTORY_COLUMNS

runner = CliRunner()


@pytest.fixture(autouse=True)
def in_tmp(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)


def read_json(path):
    return json.loads(path.read_text(encoding="utf-8"))


def test_scenarios_lists_bundled():
    result = runner.invoke(app, ["scenarios"])
    assert result.exit_code == 0
    assert "sir_decoupled" in result.output


def test_block_writes_artifacts(tmp_path):
    out = tmp_path / "out"
    result = runner.invoke(app, ["block", "-s", "sir_decoupled", "--out", str(out), "--dt", "0.5"])
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(out / "trajectories.csv")
    assert list(frame.columns) == TRAJECTORY_COLUMNS
    assert len(frame) == 81 * 4
    report = read_json(out / "report.json")
    assert report["command"] == "block"
    assert report["scenario"] == "sir_decoupled"
    diagnostics = read_json(out / "diagnostics.json")
    assert diagnostics["settings"]["solver"]["block"]["steps"] == 80


def test_invalid_scenario_exits_with_validation_code(tmp_path, bundled_data, write_json):
    data = bundled_data("age_groups_policy1")
    data["blocks"]["masses"] = [0.5, 0.6, 0.0, 0.0]
    out = tmp_path / "out"
    result = runner.invoke(app, ["block", "-s", str(write_json(data)), "--out", str(out)])
    assert result.exit_code == EXIT_VALIDATION
    diagnostics = read_json(out / "diagnostics.json")
    assert diagnostics["status"] == "failed"
    assert diagnostics["field"] == "blocks.masses"


def test_unknown_scenario_exits_with_validation_code(tmp_path):
    result = runner.invoke(app, ["block", "-s", "no_such_scenario", "--out", str(tmp_path / "out")])
    assert result.exit_code == EXIT_VALIDATION


def test_bad_override_exits_with_validation_code(tmp_path):
    result = runner.invoke(app, ["block", "-s", "sir_decoupled", "--out", str(tmp_path / "out"), "--dt", "-1"])
    assert result.exit_code == EXIT_VALIDATION


def test_non_convergence_exits_with_solver_code(tmp_path, bundled_data, write_json):
    data = bundled_data("cities_lockdown_city1")
    data["solver"]["block"] = {"steps": 40, "max_iter": 1, "tol": 1e-14}
    out = tmp_path / "out"
    result = runner.invoke(app, ["block", "-s", str(write_json(data)), "--out", str(out)])
    assert result.exit_code == EXIT_NON_CONVERGENCE
    diagnostics = read_json(out / "diagnostics.json")
    assert diagnostics["error"] == "NonConvergence"
    assert diagnostics["iterations"] == 1


def test_particle_writes_event_log(tmp_path, bundled_data, write_json):
    data = bundled_data("sir_decoupled")
    data["solver"]["particle"] = {"agents": 200, "controls": "solver", "aggregate": "empirical"}
    out = tmp_path / "out"
    result = runner.invoke(app, ["particle", "-s", str(write_json(data)), "--out", str(out),
                                 "--dt", "1", "--seed", "3"])
    assert result.exit_code == 0, result.output
    events = pd.read_csv(out / "events.csv")
    assert set(events["from_state"]) <= {"I"}
    assert (out / "aggregate.csv").is_file()
    diagnostics = read_json(out / "diagnostics.json")
    assert diagnostics["particle"]["agents"] == 200
    assert diagnostics["settings"]["seed"] == 3
    report = read_json(out / "report.json")
    assert report["gap"]["sup"] == pytest.approx(0.0, abs=1e-12)


def test_shoot_writes_checkpoint_and_log(tmp_path, bundled_data, write_json):
    data = bundled_data("sir_decoupled")
    data["solver"]["shooting"] = {"batch_size": 4, "depth": 2, "width": 8, "evaluation_points": 5}
    out = tmp_path / "out"
    result = runner.invoke(app, ["shoot", "-s", str(write_json(data)), "--out", str(out),
                                 "--iters", "2", "--dt", "1"])
    assert result.exit_code == 0, result.output
    log = pd.read_csv(out / "training_log.csv")
    assert list(log.columns) == TRAINING_LOG_COLUMNS
    assert len(log) == 2
    checkpoint = read_json(out / "checkpoint.json")
    assert checkpoint["architecture"]["width"] == 8
    frame = pd.read_csv(out / "trajectories.csv")
    assert frame["unit"].nunique() == 5


def test_compare_reports_deviations(tmp_path, bundled_data, write_json):
    data = bundled_data("sir_decoupled")
    data["solver"]["shooting"] = {"batch_size": 4, "depth": 2, "width": 8, "evaluation_points": 5}
    out = tmp_path / "out"
    result = runner.invoke(app, ["compare", "-s", str(write_json(data)), "--out", str(out),
                                 "--iters", "1", "--dt", "1"])
    assert result.exit_code == 0, result.output
    assert (out / "trajectories_shooting.csv").is_file()
    report = read_json(out / "report.json")
    assert set(report["deviations"]) == {"sup_dp", "sup_dZ", "sup_dphi_S", "sup_du0_S", "within_block_u0_S"}


def test_policies_compares_against_first(tmp_path, bundled_data, write_json):
    base = bundled_data("sir_decoupled")
    strict = bundled_data("sir_decoupled")
    strict["name"] = "sir_strict"
    strict["blocks"]["rho"] = [0.5]
    out = tmp_path / "out"
    result = runner.invoke(app, ["policies", "-s", str(write_json(base, "base.json")),
                                 "-s", str(write_json(strict, "strict.json")), "--out", str(out), "--dt", "1"])
    assert result.exit_code == 0, result.output
    report = read_json(out / "report.json")
    assert report["command"] == "policies"
    assert report["policy_deltas"]["sir_strict"]["deceased"] > 0
    assert (out / "sir_strict" / "trajectories.csv").is_file()
