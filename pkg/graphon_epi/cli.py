import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional

import typer
from rich import box
from rich.panel import Panel
from rich.table import Table

from graphon_epi.config import EXIT_NON_CONVERGENCE, EXIT_VALIDATION
from graphon_epi.console import (
    configure_file_logging, console, create_comparison_table, create_diagnostics_table, debug,
    display_final_summary, display_initial_info, logger, set_log_level
)
from graphon_epi.core import ExperimentRunner, ReportExport, run_policies
from graphon_epi.errors import (
    DimensionError, DomainError, GraphonEpiError, ModelBoundError, NonConvergence, NonFiniteError,
    ScenarioError, StepSizeError, TrainingDivergence
)
from graphon_epi.metrics import Command, RunReport
from graphon_epi.scenario import ScenarioConfig, bundled_scenarios, load_scenario

app = typer.Typer(
    name="graphon-epi",
    help="🦠 Graphon game solver - Nash equilibria of epidemic graphon games with block, shooting and particle methods",
    rich_markup_mode="rich"
)

VALIDATION_ERRORS = (ScenarioError, DomainError, DimensionError)
SOLVER_ERRORS = (NonConvergence, TrainingDivergence, StepSizeError, NonFiniteError, ModelBoundError)

ScenarioOption = typer.Option(..., "--scenario", "-s", help="📄 Scenario file or bundled scenario name")
OutOption = typer.Option(Path("results"), "--out", "-o", help="📂 Output directory")
SeedOption = typer.Option(None, "--seed", help="🎲 Override the scenario seed")
DtOption = typer.Option(None, "--dt", help="⏱️ Override the time step of every grid")
ItersOption = typer.Option(None, "--iters", help="🔁 Override the number of training iterations")
VerboseOption = typer.Option(False, "--verbose", "-v", help="🔍 Verbose output")
DebugOption = typer.Option(False, "--debug", "-d", help="🐛 Enable debug logging")


def _set_logging(verbose: bool, debug_mode: bool) -> None:
    if debug_mode:
        set_log_level(logging.DEBUG)
        logger.debug("Debug mode enabled")
    elif verbose:
        set_log_level(logging.INFO)
        logger.info("Verbose mode enabled")


def _fail(error: GraphonEpiError, out: Path, code: int) -> None:
    """Write the error payload to diagnostics.json and exit with `code`"""
    logger.error(f"{type(error).__name__}: {error}")
    console.print(f"[red]❌ {error}[/red]")
    try:
        ReportExport(out).diagnostics({"status": "failed", **error.payload()})
    except OSError as e:
        logger.warning(f"Could not write diagnostics to {out}: {e}")
    raise typer.Exit(code)


@debug
def load_config(scenario: str, seed: Optional[int], dt: Optional[float], iters: Optional[int]) -> ScenarioConfig:
    config = load_scenario(scenario)
    return config.with_overrides(seed=seed, dt=dt, iters=iters)


def _overrides(seed: Optional[int], dt: Optional[float], iters: Optional[int]) -> Dict[str, object]:
    return {k: v for k, v in (("seed", seed), ("dt", dt), ("iters", iters)) if v is not None}


def run_command(command: Command, scenario: str, out: Path, seed: Optional[int], dt: Optional[float],
                iters: Optional[int], verbose: bool, debug_mode: bool,
                action: Callable[[ExperimentRunner], RunReport]) -> RunReport:
    """Shared flow of the single-scenario commands: load, run, display, map errors to exit codes"""
    _set_logging(verbose, debug_mode)
    log_file = configure_file_logging()
    display_initial_info(str(command), scenario, out, _overrides(seed, dt, iters))
    try:
        config = load_config(scenario, seed, dt, iters)
        runner = ExperimentRunner(config, out, show_progress=not debug_mode)
        report = action(runner)
    except VALIDATION_ERRORS as e:
        _fail(e, out, EXIT_VALIDATION)
    except SOLVER_ERRORS as e:
        _fail(e, out, EXIT_NON_CONVERGENCE)

    if verbose and runner.solution is not None:
        console.print(create_diagnostics_table(runner.solution.diagnostics))
    display_final_summary(report, log_file)
    return report


@app.command()
def block(
        scenario: str = ScenarioOption,
        out: Path = OutOption,
        seed: Optional[int] = SeedOption,
        dt: Optional[float] = DtOption,
        iters: Optional[int] = ItersOption,
        verbose: bool = VerboseOption,
        debug_mode: bool = DebugOption,
):
    """
    🧱 Solve a block-graphon scenario exactly (damped Picard on the forward-backward ODEs)
    """
    run_command(Command.BLOCK, scenario, out, seed, dt, iters, verbose, debug_mode, lambda r: r.run_block())


@app.command()
def shoot(
        scenario: str = ScenarioOption,
        out: Path = OutOption,
        seed: Optional[int] = SeedOption,
        dt: Optional[float] = DtOption,
        iters: Optional[int] = ItersOption,
        verbose: bool = VerboseOption,
        debug_mode: bool = DebugOption,
):
    """
    🧠 Train the neural shooting solver and evaluate it on equispaced indices
    """
    run_command(Command.SHOOT, scenario, out, seed, dt, iters, verbose, debug_mode, lambda r: r.run_shoot())


@app.command()
def particle(
        scenario: str = ScenarioOption,
        out: Path = OutOption,
        seed: Optional[int] = SeedOption,
        dt: Optional[float] = DtOption,
        iters: Optional[int] = ItersOption,
        verbose: bool = VerboseOption,
        debug_mode: bool = DebugOption,
):
    """
    🎲 Simulate N agents and compare the empirical aggregate with the deterministic one
    """
    run_command(Command.PARTICLE, scenario, out, seed, dt, iters, verbose, debug_mode, lambda r: r.run_particle())


@app.command()
def compare(
        scenario: str = ScenarioOption,
        out: Path = OutOption,
        seed: Optional[int] = SeedOption,
        dt: Optional[float] = DtOption,
        iters: Optional[int] = ItersOption,
        verbose: bool = VerboseOption,
        debug_mode: bool = DebugOption,
):
    """
    ⚖️ Run the block and the shooting solver on one scenario and report their deviations
    """
    report = run_command(Command.COMPARE, scenario, out, seed, dt, iters, verbose, debug_mode,
                         lambda r: r.run_compare())
    table = Table(title="📏 Shooting vs Block", box=box.ROUNDED)
    table.add_column("Deviation", style="cyan")
    table.add_column("Value", justify="right", style="magenta")
    for name, value in report.deviations.items():
        table.add_row(name, f"{value:.4g}")
    console.print(table)


@app.command()
def policies(
        scenario: List[str] = typer.Option(..., "--scenario", "-s", help="📄 Scenarios to compare (first is the baseline)"),
        out: Path = OutOption,
        dt: Optional[float] = DtOption,
        verbose: bool = VerboseOption,
        debug_mode: bool = DebugOption,
):
    """
    📊 Block-solve several scenarios and compare deceased mass and peak infected
    """
    _set_logging(verbose, debug_mode)
    log_file = configure_file_logging()
    display_initial_info(str(Command.POLICIES), ", ".join(scenario), out, _overrides(None, dt, None))
    try:
        configs = [load_config(s, None, dt, None) for s in scenario]
        report, names, rows = run_policies(configs, out)
    except VALIDATION_ERRORS as e:
        _fail(e, out, EXIT_VALIDATION)
    except SOLVER_ERRORS as e:
        _fail(e, out, EXIT_NON_CONVERGENCE)

    console.print(create_comparison_table(names, rows))
    display_final_summary(report, log_file)


@app.command()
def scenarios():
    """
    📚 List the bundled scenarios
    """
    logger.info("Displaying bundled scenarios")
    console.print(Panel.fit("📚 [bold blue]Bundled Scenarios[/bold blue]", border_style="blue"))

    table = Table(box=box.ROUNDED)
    table.add_column("Name", style="cyan", no_wrap=True)
    table.add_column("Model", style="magenta")
    table.add_column("Graphon", style="green")
    table.add_column("Description")
    for name in bundled_scenarios():
        config = load_scenario(name)
        table.add_row(name, config.model, str(config.graphon.get("kind")), config.description)
    console.print(table)


def main():
    app()


if __name__ == "__main__":
    main()
