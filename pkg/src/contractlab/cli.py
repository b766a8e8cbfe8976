"""contractlab CLI -- configuration-driven contraction experiments."""

import json
import logging
from pathlib import Path
from typing import Optional

import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from . import __version__
from .config import EXPERIMENT_KINDS, load_config
from .errors import ContractLabError
from .models import MODEL_FAMILIES, build_model
from .reporting import make_json_safe
from .runner import RunResult, exit_code_for, run
from .verify import PROBE_FUNCTIONS

app = typer.Typer(
    name="contractlab",
    help="Numerical checks of Wasserstein contraction for reflection-coupled diffusions.",
    no_args_is_help=True,
)

console = Console()
err_console = Console(stderr=True)

CONFIG_OPTION = typer.Option(None, "--config", "-c", help="YAML experiment file.", exists=True, dir_okay=False)
SEED_OPTION = typer.Option(None, "--seed", help="Master seed (overrides the file).", min=0)
OUT_OPTION = typer.Option(None, "--out", "-o", help="Output directory (overrides the file).")
THREADS_OPTION = typer.Option(None, "--threads", help="Maximum worker threads.", min=1)
DT_OPTION = typer.Option(None, "--dt", help="Time step (overrides the file).")
PATHS_OPTION = typer.Option(None, "--paths", "-n", help="Number of Monte Carlo paths.", min=1)
FORCE_OPTION = typer.Option(False, "--force", "-f", help="Overwrite a report written by another tool.")
VERBOSE_OPTION = typer.Option(False, "--verbose", "-V", help="Log debug detail to stderr.")


def _configure_logging(verbose: bool) -> None:
    logger = logging.getLogger("contractlab")
    logger.handlers.clear()
    logger.addHandler(RichHandler(console=err_console, show_path=False))
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)
    logger.propagate = False


def version_callback(value: bool) -> None:
    if value:
        console.print(f"contractlab version {__version__}")
        raise typer.Exit()


@app.callback()
def main(
    version: bool = typer.Option(
        None,
        "--version",
        "-v",
        help="Show version and exit.",
        callback=version_callback,
        is_eager=True,
    ),
):
    """
    contractlab - a desk-scale lab for contraction of diffusions.

    Each subcommand runs one experiment kind from a YAML file and writes
    report.json plus CSV data into the output directory. Exit codes:
    0 all checks pass, 1 a check failed, 2 configuration or hypothesis
    error, 3 numerical error.
    """
    pass


def _report(kind: str, result: RunResult) -> None:
    if result.error:
        console.print(f"[red]✗[/red] {kind} failed: {result.error}")
    elif result.success:
        console.print(f"[green]✓[/green] {kind}: all checks passed")
    else:
        console.print(f"[red]✗[/red] {kind}: some checks failed")
    for path in result.artifacts:
        console.print(f"  [dim]Wrote:[/dim] {path}")


def _execute(
    kind: str,
    config: Optional[Path],
    seed: Optional[int],
    out: Optional[Path],
    threads: Optional[int],
    dt: Optional[float],
    paths: Optional[int],
    force: bool,
    verbose: bool,
    **extra: object,
) -> RunResult:
    _configure_logging(verbose)
    try:
        experiment = load_config(config, kind, seed=seed, out=out, threads=threads, dt=dt, paths=paths, **extra)
    except ContractLabError as exc:
        console.print(f"[red]✗[/red] Invalid configuration: {exc}")
        raise typer.Exit(code=exit_code_for(exc)) from None
    result = run(experiment, force=force)
    _report(kind, result)
    if result.exit_code:
        raise typer.Exit(code=result.exit_code)
    return result


@app.command("psi-table")
def psi_table(
    config: Optional[Path] = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    out: Optional[Path] = OUT_OPTION,
    threads: Optional[int] = THREADS_OPTION,
    force: bool = FORCE_OPTION,
    verbose: bool = VERBOSE_OPTION,
):
    """Tabulate psi and its constants, and check its defining properties."""
    _execute("psi-table", config, seed, out, threads, None, None, force, verbose)


@app.command()
def validate(
    config: Optional[Path] = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    out: Optional[Path] = OUT_OPTION,
    threads: Optional[int] = THREADS_OPTION,
    force: bool = FORCE_OPTION,
    verbose: bool = VERBOSE_OPTION,
):
    """Check a model's index against a curvature profile."""
    _execute("validate", config, seed, out, threads, None, None, force, verbose)


@app.command("couple-run")
def couple_run(
    config: Optional[Path] = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    out: Optional[Path] = OUT_OPTION,
    threads: Optional[int] = THREADS_OPTION,
    dt: Optional[float] = DT_OPTION,
    paths: Optional[int] = PATHS_OPTION,
    force: bool = FORCE_OPTION,
    verbose: bool = VERBOSE_OPTION,
):
    """Simulate a reflection-coupled ensemble and record distance statistics."""
    _execute("couple-run", config, seed, out, threads, dt, paths, force, verbose)


@app.command("contract-check")
def contract_check(
    config: Optional[Path] = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    out: Optional[Path] = OUT_OPTION,
    threads: Optional[int] = THREADS_OPTION,
    dt: Optional[float] = DT_OPTION,
    paths: Optional[int] = PATHS_OPTION,
    force: bool = FORCE_OPTION,
    verbose: bool = VERBOSE_OPTION,
):
    """Compare coupled distances against the contraction bounds."""
    _execute("contract-check", config, seed, out, threads, dt, paths, force, verbose)


@app.command("gradient-check")
def gradient_check(
    config: Optional[Path] = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    out: Optional[Path] = OUT_OPTION,
    threads: Optional[int] = THREADS_OPTION,
    dt: Optional[float] = DT_OPTION,
    paths: Optional[int] = PATHS_OPTION,
    force: bool = FORCE_OPTION,
    verbose: bool = VERBOSE_OPTION,
):
    """Compare finite-difference semigroup gradients against their bound."""
    _execute("gradient-check", config, seed, out, threads, dt, paths, force, verbose)


@app.command("harnack-check")
def harnack_check(
    config: Optional[Path] = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    out: Optional[Path] = OUT_OPTION,
    threads: Optional[int] = THREADS_OPTION,
    dt: Optional[float] = DT_OPTION,
    paths: Optional[int] = PATHS_OPTION,
    force: bool = FORCE_OPTION,
    verbose: bool = VERBOSE_OPTION,
):
    """Check the dimension-free Harnack inequality and replay its Girsanov coupling."""
    _execute("harnack-check", config, seed, out, threads, dt, paths, force, verbose)


@app.command("esm-run")
def esm_run(
    config: Optional[Path] = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    out: Optional[Path] = OUT_OPTION,
    threads: Optional[int] = THREADS_OPTION,
    dt: Optional[float] = DT_OPTION,
    paths: Optional[int] = PATHS_OPTION,
    force: bool = FORCE_OPTION,
    verbose: bool = VERBOSE_OPTION,
):
    """Approximate the evolution system of measures from ever earlier starts."""
    _execute("esm-run", config, seed, out, threads, dt, paths, force, verbose)


@app.command()
def wasserstein(
    samples_a: Path = typer.Argument(..., help="CSV of samples from the first measure.", exists=True, dir_okay=False),
    samples_b: Path = typer.Argument(..., help="CSV of samples from the second measure.", exists=True, dir_okay=False),
    p: float = typer.Option(1.0, "--p", "-p", help="Transport exponent (>= 1)."),
    cost: str = typer.Option("rho_p", "--cost", help="rho_p or rho_p_or_rho."),
    bootstrap: int = typer.Option(0, "--bootstrap", "-b", help="Bootstrap replicates (0 = none, else >= 100)."),
    config: Optional[Path] = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    out: Optional[Path] = OUT_OPTION,
    threads: Optional[int] = THREADS_OPTION,
    force: bool = FORCE_OPTION,
    verbose: bool = VERBOSE_OPTION,
):
    """Exact empirical transport distance between two sample files, printed as JSON."""
    extra: dict = {
        "samples_a": str(samples_a),
        "samples_b": str(samples_b),
        "p": p,
        "cost": cost,
        "bootstrap": bootstrap,
    }
    if seed is None and config is None:
        seed = 0
    result = _execute("wasserstein", config, seed, out, threads, None, None, force, verbose, **extra)
    if result.report is not None:
        summary = {key: result.report.get(key) for key in ("value", "method", "n", "ci")}
        print(json.dumps(make_json_safe(summary), indent=2))


@app.command()
def models():
    """List the built-in model families and test functions."""
    table = Table(title="contractlab models")
    table.add_column("Family", style="cyan")
    table.add_column("Dim")
    table.add_column("Time-dependent")
    table.add_column("Linear bound (k1, k2)", style="green")
    for family in MODEL_FAMILIES:
        model = build_model(family)
        bound = "-" if model.linear_bound is None else f"({model.linear_bound[0]:g}, {model.linear_bound[1]:g})"
        table.add_row(family, str(model.dim), "yes" if model.time_dependent else "no", bound)
    console.print(table)
    console.print()
    console.print(f"[bold]Experiment kinds:[/bold] {', '.join(EXPERIMENT_KINDS)}")
    console.print(f"[bold]Test functions:[/bold] {', '.join(PROBE_FUNCTIONS)}")


if __name__ == "__main__":
    app()

