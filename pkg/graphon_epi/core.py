"""
Experiment orchestration: runs the solvers on a scenario, scores the results
and writes every artifact of a run (CSV tables, diagnostics and report JSON).
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from graphon_epi.block_solver import BlockSolver, EquilibriumSolution, existence_diagnostics
from graphon_epi.config import CSV_FLOAT_FORMAT
from graphon_epi.console import debug, debug_log, logger
from graphon_epi.errors import DomainError
from graphon_epi.graphon import BlockGraphon
from graphon_epi.helpers import EpidemicScoring, OutcomeScorer
from graphon_epi.metrics import Command, RunReport, TrainingLog
from graphon_epi.particles import AggregateMode, ControlMode, ParticlePopulation, ParticleRun, run_particles
from graphon_epi.scenario import ScenarioConfig
from graphon_epi.shooting import NetParams, ShootingSolver, value_scale


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


class ReportExport:
    """Write run artifacts into an output directory"""

    def __init__(self, output_dir: str | Path):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        logger.info(f"Initializing report export to: {self.output_dir}")

    def _csv(self, frame: pd.DataFrame, name: str) -> Path:
        path = self.output_dir / name
        frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
        logger.info(f"{name}: {len(frame)} rows written to {path}")
        return path

    def _json(self, data: Dict[str, Any], name: str) -> Path:
        path = self.output_dir / name
        try:
            with open(path, 'w', encoding='utf-8') as f:
                json.dump(data, f, indent=2, default=_json_default)
        except (OSError, TypeError) as e:
            logger.error(f"Failed to export {name}: {str(e)}", exc_info=True)
            raise
        logger.info(f"JSON export complete: {path}")
        return path

    @debug
    def trajectories(self, solution: EquilibriumSolution, name: str = "trajectories.csv") -> Path:
        return self._csv(solution.to_frame(), name)

    def training_log(self, log: TrainingLog) -> Path:
        return self._csv(log.to_frame(), "training_log.csv")

    def events(self, run: ParticleRun) -> Path:
        return self._csv(run.events, "events.csv")

    def aggregate(self, frame: pd.DataFrame) -> Path:
        return self._csv(frame, "aggregate.csv")

    def diagnostics(self, data: Dict[str, Any]) -> Path:
        return self._json(data, "diagnostics.json")

    def report(self, report: RunReport) -> Path:
        return self._json(report.to_dict(), "report.json")

    def checkpoint(self, params: NetParams) -> Path:
        path = self.output_dir / "checkpoint.json"
        params.save(path)
        return path


class ExperimentRunner:
    """Run one command of the pipeline on a scenario and export its artifacts"""

    def __init__(self, config: ScenarioConfig, output_dir: str | Path, show_progress: bool = True,
                 scorer: OutcomeScorer = EpidemicScoring):
        self.config = config
        self.export = ReportExport(output_dir)
        self.show_progress = show_progress
        self.scorer = scorer
        self.model = config.build_model()
        self.graphon = config.build_graphon()
        self.params = config.indexed_params()
        self.solution: Optional[EquilibriumSolution] = None
        logger.info(f"Runner ready for '{config.name}' ({self.model.name}, graphon '{self.graphon.kind}')")

    # -- solvers --------------------------------------------------------------

    def block_solver(self) -> BlockSolver:
        return BlockSolver(self.model, self.graphon, self.config.p0_matrix(self.model), self.config.block_grid(),
                           labels=self.config.blocks.labels)

    @debug
    def solve_block(self) -> EquilibriumSolution:
        s = self.config.solver.block
        solver = self.block_solver()
        if s.check_multiplicity:
            self.solution = solver.check_multiplicity(s.damping, s.tol, s.max_iter).from_zero
        else:
            self.solution = solver.solve_equilibrium(s.damping, s.tol, s.max_iter)
        return self.solution

    def shooting_solver(self) -> ShootingSolver:
        s = self.config.solver.shooting
        return ShootingSolver(self.model, self.graphon, self.config.initial_law(self.model),
                              self.config.shooting_grid(),
                              self.config.architecture(self.model.n, value_scale(self.model, self.config.horizon)),
                              inner_iterations=s.inner_iterations)

    @debug
    def solve_shooting(self) -> Tuple[NetParams, TrainingLog, EquilibriumSolution]:
        solver = self.shooting_solver()
        diagnostics = existence_diagnostics(self.model, self.graphon, self.config.horizon)
        params, log = solver.train(self.config.training_config(self.show_progress))
        indices = np.linspace(0.0, 1.0, self.config.solver.shooting.evaluation_points)
        solution = solver.evaluate(params, indices, diagnostics)
        return params, log, solution

    # -- commands -------------------------------------------------------------

    def _settings(self) -> Dict[str, Any]:
        """Solver defaults in effect, recorded with every run"""
        return {"seed": self.config.seed, "solver": asdict(self.config.solver),
                "controls": list(self.config.controls)}

    @debug
    def run_block(self) -> RunReport:
        start = time.time()
        solution = self.solve_block()
        summary = self.scorer.summarize(solution, self.config.blocks.labels)
        self.export.trajectories(solution)
        self.export.diagnostics({"block": solution.diagnostics.to_dict(), "settings": self._settings()})
        report = RunReport(Command.BLOCK, self.config.name, summary=summary, elapsed=time.time() - start,
                           extra={"diagnostics": solution.diagnostics.to_dict()})
        self.export.report(report)
        return report

    @debug
    def run_shoot(self) -> RunReport:
        start = time.time()
        params, log, solution = self.solve_shooting()
        summary = self.scorer.summarize(solution)
        self.export.trajectories(solution)
        self.export.training_log(log)
        self.export.checkpoint(params)
        training = {"iterations": len(log), "final_loss": log.final_loss, "losses": log.losses}
        existence = solution.diagnostics.existence()
        self.export.diagnostics({"shooting": training, "existence": existence, "settings": self._settings()})
        report = RunReport(Command.SHOOT, self.config.name, summary=summary, elapsed=time.time() - start,
                           extra={"final_loss": log.final_loss, "existence_margin": existence["existence_margin"]})
        self.export.report(report)
        return report

    @debug
    def run_compare(self) -> RunReport:
        """Block and shooting solvers on the same scenario, then their deviations"""
        start = time.time()
        block = self.solve_block()
        params, log, shooting = self.solve_shooting()
        unit_of_index = self.params.block_of(shooting_indices(shooting))
        deviations = EpidemicScoring.compare(block, shooting, unit_of_index)
        for name, value in deviations.items():
            debug_log(f"compare {name}: {value:.4g}")

        self.export.trajectories(block, "trajectories.csv")
        self.export.trajectories(shooting, "trajectories_shooting.csv")
        self.export.training_log(log)
        self.export.checkpoint(params)
        self.export.diagnostics({"block": block.diagnostics.to_dict(),
                                 "shooting": {"iterations": len(log), "final_loss": log.final_loss,
                                              "losses": log.losses},
                                 "existence": shooting.diagnostics.existence(),
                                 "settings": self._settings()})
        report = RunReport(Command.COMPARE, self.config.name,
                           summary=self.scorer.summarize(block, self.config.blocks.labels),
                           deviations=deviations, elapsed=time.time() - start,
                           extra={"final_loss": log.final_loss})
        self.export.report(report)
        return report

    @debug
    def run_particle(self) -> RunReport:
        start = time.time()
        s = self.config.solver.particle
        control_mode, aggregate_mode = ControlMode(s.controls), AggregateMode(s.aggregate)
        needs_solution = control_mode == ControlMode.SOLVER or aggregate_mode == AggregateMode.FROZEN
        if not isinstance(self.graphon, BlockGraphon) and needs_solution:
            raise DomainError("solver controls and frozen aggregates need a block graphon; "
                              "set solver.particle.controls='recommended' and aggregate='empirical'")

        solution = self.solve_block() if isinstance(self.graphon, BlockGraphon) else None
        population = ParticlePopulation.create(s.agents, self.config.initial_law(self.model), self.config.seed)
        unit_of_agent = self.params.block_of(population.indices)
        run = run_particles(self.model, self.graphon, self.config.refresh_grid(), population,
                            control_mode, aggregate_mode, solution=solution,
                            unit_of_agent=unit_of_agent if solution is not None else None,
                            show_progress=self.show_progress)

        labels = self.config.blocks.labels
        frequencies = run.frequencies(unit_of_agent, len(labels))
        deviations: Dict[str, float] = {}
        gap = None
        if solution is not None:
            l1 = EpidemicScoring.frequency_deviation(frequencies, solution.reported_p[-1])
            deviations = {f"l1_frequency[{label}]": float(v) for label, v in zip(labels, l1)}
            gap = run.gap()
            logger.info(f"Aggregate gap: sup {gap.sup:.4g}, rms {gap.rms:.4g}")

        self.export.events(run)
        self.export.aggregate(run.aggregate_frame(unit_of_agent, labels))
        freq_table = {label: dict(zip(self.model.states.labels, map(float, row)))
                      for label, row in zip(labels, frequencies)}
        self.export.diagnostics({"particle": {"agents": population.size, "jumps": len(run.events),
                                              "q_max": self.model.q_max(self.graphon),
                                              "frequencies": freq_table},
                                 "settings": self._settings()})
        report = RunReport(Command.PARTICLE, self.config.name,
                           summary=self.scorer.summarize(solution, labels) if solution is not None else None,
                           deviations=deviations, gap=gap, elapsed=time.time() - start,
                           extra={"frequencies": freq_table})
        self.export.report(report)
        return report


def shooting_indices(solution: EquilibriumSolution) -> np.ndarray:
    """Evaluation indices of a shooting solution (its unit labels)"""
    return np.array([float(u) for u in solution.units])


@debug
def run_policies(configs: Sequence[ScenarioConfig], output_dir: str | Path,
                 scorer: OutcomeScorer = EpidemicScoring) -> Tuple[RunReport, List[str], List[tuple]]:
    """Block-solve several scenarios and report their differences against the first one.

    Returns the report together with the scenario names and comparison rows
    for display.
    """
    start = time.time()
    out = Path(output_dir)
    names, summaries = [], []
    for config in configs:
        runner = ExperimentRunner(config, out / config.name, show_progress=False, scorer=scorer)
        solution = runner.solve_block()
        runner.export.trajectories(solution)
        names.append(config.name)
        summaries.append(scorer.summarize(solution, config.blocks.labels))
        logger.info(f"Policy '{config.name}': deceased {summaries[-1].population_deceased}")

    deltas = EpidemicScoring.policy_deltas(names, summaries)
    rows: List[tuple] = [
        ("Deceased (T)", [s.population_deceased for s in summaries]),
        ("Peak infected", [s.population_peak_infected for s in summaries]),
        ("Peak time", [s.population_peak_time for s in summaries]),
    ]
    for i, block in enumerate(summaries[0].blocks):
        rows.append((f"Deceased [{block.label}]", [s.blocks[i].terminal_deceased if i < len(s.blocks) else None
                                                   for s in summaries]))

    report = RunReport(Command.POLICIES, ",".join(names), summary=summaries[0], policy_deltas=deltas,
                       elapsed=time.time() - start,
                       extra={"deceased": {n: s.population_deceased for n, s in zip(names, summaries)}})
    ReportExport(out).report(report)
    return report, names, rows
