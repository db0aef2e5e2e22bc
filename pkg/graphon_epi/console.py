"""
Console and display utilities for graphon-epi.
Centralizes all console output, logging, progress bars, and rich display components.
"""
import functools
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Dict, List, Sequence, TypeVar, cast

from rich import box
from rich.console import Console
from rich.logging import RichHandler
from rich.markdown import Markdown
from rich.panel import Panel
from rich.progress import Progress, SpinnerColumn, TextColumn, BarColumn, TimeElapsedColumn, TimeRemainingColumn
from rich.table import Table
from rich.traceback import install as install_rich_traceback

from graphon_epi.config import LOG_DIR, LOG_FILENAME, DEBUG
from graphon_epi.metrics import EpidemicSummary, RunReport, SolverDiagnostics

# Install rich traceback handler for better exception visualization
install_rich_traceback()

# Configure the rich console for standard output
console = Console()

# Configure rich handler for console output
rich_handler = RichHandler(
    console=console,
    rich_tracebacks=True,
    markup=True,
    show_time=True,
    show_level=True,
    show_path=True
)

# Dedicated logger for graphon-epi; the file handler is attached by the CLI
logger = logging.getLogger("graphon_epi")
logger.addHandler(rich_handler)
logger.setLevel(logging.DEBUG if DEBUG else logging.WARNING)

# Function return type for decorator
F = TypeVar('F', bound=Callable[..., Any])


def configure_file_logging(log_file: Path = LOG_FILENAME) -> Path:
    """Attach the timestamped file handler (once) and return its path."""
    for handler in logger.handlers:
        if isinstance(handler, logging.FileHandler):
            return Path(handler.baseFilename)
    LOG_DIR.mkdir(exist_ok=True)
    file_handler = logging.FileHandler(log_file, mode="w", encoding="utf-8")
    file_handler.setFormatter(
        logging.Formatter(
            "[%(asctime)s] [%(levelname)s] [%(module)s:%(lineno)d] %(message)s",
            datefmt="%Y-%m-%d %H:%M:%S"
        )
    )
    logger.addHandler(file_handler)
    return log_file


def debug_log(message: str) -> None:
    """Log a debug message if DEBUG mode is enabled.

    Args:
        message: The debug message to log
    """
    if DEBUG:
        logger.debug(message)


def debug(func: F) -> F:
    """Decorator to log function entry, exit, and execution time if DEBUG is True.

    Args:
        func: The function to decorate

    Returns:
        The decorated function
    """
    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        if not DEBUG:
            return func(*args, **kwargs)

        # Arrays make unreadable argument dumps, so only types are logged
        arg_str = ", ".join(type(a).__name__ for a in args)
        kwarg_str = ", ".join(f"{k}={type(v).__name__}" for k, v in kwargs.items())
        params = ", ".join(filter(None, [arg_str, kwarg_str]))
        logger.debug(f"ENTER: {func.__name__}({params})")

        start_time = datetime.now()

        try:
            result = func(*args, **kwargs)
            logger.debug(f"EXIT: {func.__name__} -> {type(result).__name__}")
            return result
        except Exception as e:
            logger.debug(f"ERROR in {func.__name__}: {str(e)}")
            raise
        finally:
            execution_time = (datetime.now() - start_time).total_seconds()
            logger.debug(f"TIME: {func.__name__} took {execution_time:.4f}s")

    return cast(F, wrapper)


def set_log_level(level: int) -> None:
    """Set the log level for the graphon_epi logger.

    Args:
        level: The log level to set (e.g., logging.DEBUG, logging.INFO)
    """
    logger.setLevel(level)
    logger.info(f"Log level set to {logging.getLevelName(level)}")


def create_training_progress_bar(disable: bool = False) -> Progress:
    """Create a standardized progress bar for shooting-solver training."""
    logger.debug("Creating progress bar for training")
    return Progress(
        SpinnerColumn(),
        TextColumn("[bold blue]Training...", justify="right"),
        BarColumn(bar_width=40),
        "[progress.percentage]{task.percentage:>3.1f}%",
        "•",
        TextColumn("[cyan]{task.fields[loss]}[/cyan]", justify="right"),
        "•",
        TimeElapsedColumn(),
        "•",
        TimeRemainingColumn(),
        console=console,
        transient=True,
        disable=disable,
    )


def create_simulation_progress_bar(disable: bool = False) -> Progress:
    """Progress bar for particle refresh intervals."""
    return Progress(
        SpinnerColumn(),
        TextColumn("[bold blue]Simulating...", justify="right"),
        BarColumn(bar_width=40),
        "[progress.percentage]{task.percentage:>3.1f}%",
        TimeElapsedColumn(),
        console=console,
        transient=True,
        disable=disable,
    )


@debug
def display_initial_info(command: str, scenario_name: str, out_dir: Path, overrides: Dict[str, Any]) -> None:
    """Display initial information about the run."""
    logger.info(f"Starting '{command}' on scenario {scenario_name}")
    logger.info(f"Overrides: {overrides or 'None'}")

    console.print(Panel.fit(
        f"🦠 [bold blue]Graphon Game Solver[/bold blue]\n"
        f"⚙️  Command: [cyan]{command}[/cyan]\n"
        f"📄 Scenario: [cyan]{scenario_name}[/cyan]\n"
        f"📂 Output: [dim]{out_dir}[/dim]",
        border_style="blue"
    ))

    if overrides:
        console.print(f"[yellow]🔧 Overrides:[/yellow] {', '.join(f'{k}={v}' for k, v in overrides.items())}")


def _fmt(value: Any) -> str:
    if value is None:
        return "—"
    if isinstance(value, float):
        return f"{value:.4g}"
    return str(value)


@debug
def create_summary_panel(report: RunReport) -> Panel:
    """Create a summary panel with the headline numbers of a run."""
    summary = report.summary
    lines = [f"📊 **{report.command} — {report.scenario}**"]
    if summary is not None:
        lines.append(f"• Population deceased at T: {_fmt(summary.population_deceased)}")
        lines.append(f"• Peak infected: {_fmt(summary.population_peak_infected)} "
                     f"at t={_fmt(summary.population_peak_time)}")
    for name, value in report.deviations.items():
        lines.append(f"• {name}: {_fmt(value)}")
    if report.gap is not None:
        lines.append(f"• Aggregate gap: sup {_fmt(report.gap.sup)}, rms {_fmt(report.gap.rms)}")
    lines.append(f"• Run time: {report.elapsed:.2f}s")

    logger.info(f"Created summary panel for {report.command} on {report.scenario}")
    return Panel(
        Markdown("\n".join(lines)),
        title="📋 Run Summary",
        border_style="blue",
        padding=(1, 2),
        title_align="center",
        highlight=True
    )


@debug
def create_block_table(summary: EpidemicSummary) -> Table:
    """Create a table with per-block epidemic outcomes."""
    table = Table(
        title="🏙️ Per-Block Outcomes",
        box=box.ROUNDED,
        title_style="bold blue",
        border_style="cyan",
        highlight=True
    )
    table.add_column("Block", style="cyan", no_wrap=True)
    table.add_column("Mass", justify="right", style="magenta")
    table.add_column("Deceased (T)", justify="right", style="red")
    table.add_column("Peak infected", justify="right", style="yellow")
    table.add_column("Peak time", justify="right", style="green")
    table.add_column("Mean S control", justify="right", style="green")

    for b in summary.blocks:
        table.add_row(b.label, _fmt(b.mass), _fmt(b.terminal_deceased), _fmt(b.peak_infected),
                      _fmt(b.peak_time), _fmt(b.mean_susceptible_control))
    return table


@debug
def create_diagnostics_table(diagnostics: SolverDiagnostics) -> Table:
    """Picard and residual diagnostics of a block solve."""
    table = Table(title="🔁 Solver Diagnostics", box=box.ROUNDED, title_style="bold blue", border_style="cyan")
    table.add_column("Quantity", style="cyan")
    table.add_column("Value", justify="right", style="magenta")

    rows = [
        ("Picard iterations", diagnostics.iterations),
        ("Final residual", diagnostics.residual),
        ("‖w‖ L²", diagnostics.graphon_l2_norm),
        ("Control Lipschitz", diagnostics.control_lipschitz),
        ("Existence margin", diagnostics.existence_margin),
    ]
    if diagnostics.fb_residual is not None:
        rows += [
            ("HJB residual", diagnostics.fb_residual.hjb),
            ("Kolmogorov residual", diagnostics.fb_residual.kolmogorov),
            ("Aggregate residual", diagnostics.fb_residual.aggregate),
        ]
    for label, value in rows:
        table.add_row(label, _fmt(value))
    style = "green" if diagnostics.existence_margin < 1 else "yellow"
    table.add_row("Existence", f"[{style}]{diagnostics.margin_status}[/{style}]")
    return table


@debug
def create_comparison_table(names: Sequence[str], rows: List[tuple]) -> Table:
    """Side-by-side comparison of scenarios with a difference column against the first one.

    Args:
        names: Scenario names, the first one is the baseline
        rows: (label, [value per scenario]) tuples
    """
    table = Table(title="⚖️ Policy Comparison", box=box.ROUNDED)
    table.add_column("Metric", style="cyan", no_wrap=True)
    for name in names:
        table.add_column(f"📄 {name}", justify="right", style="magenta")
    table.add_column("Δ last vs first", justify="right", style="yellow")

    for label, values in rows:
        cells = [_fmt(v) for v in values]
        if values and values[0] is not None and values[-1] is not None:
            diff_str = f"{values[-1] - values[0]:+.4g}"
        else:
            diff_str = "—"
        table.add_row(label, *cells, diff_str)
        logger.debug(f"Comparison - {label}: {values}")
    return table


@debug
def display_final_summary(report: RunReport, log_file: Path | None = None) -> None:
    """Display the final run summary."""
    logger.info(f"Run complete in {report.elapsed:.2f}s")
    console.rule("[bold green]🎉 Run Complete")
    console.print(create_summary_panel(report))
    if report.summary is not None and report.summary.blocks:
        console.print(create_block_table(report.summary))
    if log_file is not None:
        console.print(f"📝 Log file: {log_file}")
