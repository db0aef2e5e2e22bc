import json

import numpy as np
import pytest

from graphon_epi.core import ExperimentRunner, ReportExport
from graphon_epi.errors import DimensionError
from graphon_epi.helpers import EpidemicScoring
from graphon_epi.metrics import BlockSummary, EpidemicSummary
from graphon_epi.scenario import load_scenario


@pytest.fixture
def decoupled_runner(tmp_path) -> ExperimentRunner:
    return ExperimentRunner(load_scenario("sir_decoupled").with_overrides(dt=0.5), tmp_path, show_progress=False)


def test_summarize_decoupled_epidemic(decoupled_runner):
    solution = decoupled_runner.solve_block()
    summary = EpidemicScoring.summarize(solution, ["all"])
    assert summary.population_peak_infected == pytest.approx(0.1)
    assert summary.population_peak_time == 0.0
    assert summary.population_deceased == pytest.approx(0.01 * (1.0 - np.exp(-4.0)), abs=1e-8)
    block = summary.block("all")
    assert block.mass == 1.0
    assert block.mean_susceptible_control == pytest.approx(1.0)
    with pytest.raises(KeyError):
        summary.block("none")


def _summary(deceased: float, peak: float) -> EpidemicSummary:
    block = BlockSummary(unit="0", label="a", mass=1.0, terminal_deceased=deceased, peak_infected=peak,
                         peak_time=1.0, mean_susceptible_control=1.0)
    return EpidemicSummary(blocks=[block], population_deceased=deceased, population_peak_infected=peak)


def test_policy_deltas_against_baseline():
    deltas = EpidemicScoring.policy_deltas(["base", "strict"], [_summary(0.3, 0.2), _summary(0.2, 0.1)])
    assert set(deltas) == {"strict"}
    assert deltas["strict"]["deceased"] == pytest.approx(-0.1)
    assert deltas["strict"]["deceased_relative"] == pytest.approx(-1.0 / 3.0)
    assert deltas["strict"]["peak_infected"] == pytest.approx(-0.1)
    assert deltas["strict"]["deceased[a]"] == pytest.approx(-0.1)
    with pytest.raises(DimensionError):
        EpidemicScoring.policy_deltas(["base"], [])


def test_block_means():
    values = np.arange(12.0).reshape(3, 4)
    means = EpidemicScoring.block_means(values, np.array([0, 0, 1, 1]), 2)
    np.testing.assert_allclose(means, [[0.5, 2.5], [4.5, 6.5], [8.5, 10.5]])
    with pytest.raises(DimensionError):
        EpidemicScoring.block_means(values, np.array([0, 0, 0, 0]), 2)


def test_frequency_deviation():
    freq = np.array([[0.5, 0.5], [1.0, 0.0]])
    np.testing.assert_allclose(EpidemicScoring.frequency_deviation(freq, np.array([[1.0, 0.0], [1.0, 0.0]])), [1.0, 0.0])
    with pytest.raises(DimensionError):
        EpidemicScoring.frequency_deviation(freq, np.ones((3, 2)))


def test_report_export_handles_numpy(tmp_path):
    export = ReportExport(tmp_path / "nested")
    path = export.diagnostics({"value": np.float64(0.5), "array": np.arange(3), "where": tmp_path})
    data = json.loads(path.read_text(encoding="utf-8"))
    assert data == {"value": 0.5, "array": [0, 1, 2], "where": str(tmp_path)}


def test_run_block_report(decoupled_runner, tmp_path):
    report = decoupled_runner.run_block()
    assert report.summary.population_deceased > 0
    data = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))
    assert data["extra"]["diagnostics"]["iterations"] <= 2


def test_shoot_records_existence_margin(short_training, tmp_path):
    runner = ExperimentRunner(short_training("seird_powerlaw"), tmp_path, show_progress=False)
    report = runner.run_shoot()
    data = json.loads((tmp_path / "diagnostics.json").read_text(encoding="utf-8"))
    existence = data["existence"]
    assert existence["graphon_l2_norm"] > 0
    assert existence["control_lipschitz"] > 0
    assert existence["existence_margin"] == pytest.approx(
        existence["graphon_l2_norm"] * existence["control_lipschitz"] * runner.model.impact.lipschitz)
    assert existence["margin_status"] in {"guaranteed", "not_guaranteed"}
    assert report.extra["existence_margin"] == pytest.approx(existence["existence_margin"])
