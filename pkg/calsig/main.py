from pathlib import Path
from typing import NoReturn, Optional

import typer
from loguru import logger
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table

from calsig.config import Settings, get_settings
from calsig.core.artifacts import (
    load_prior,
    load_signaling,
    save_signaling,
    write_csv,
    write_json,
)
from calsig.core.checks import CalsigError
from calsig.core.ir import design_ir, exante_utility
from calsig.core.marginals import Convention, optimal_thresholds
from calsig.core.prior import welfare
from calsig.core.signaling import Variant, classify_region, design_optimal, revenue
from calsig.execution import oracle, simulator
from calsig.execution.sweep import EXACT_COLUMN, SWEEP_HEADER, run_sweep

EXIT_VERIFY_FAILED = 1
EXIT_INPUT_ERROR = 2

# unwritable or unreadable paths are input errors too
INPUT_ERRORS = (CalsigError, OSError)


app = typer.Typer(
    name="calsig",
    help="Revenue-optimal calibrated signaling for second-price auctions"
)
console = Console()
err_console = Console(stderr=True)

_state: dict = {"settings": None}


def _settings() -> Settings:
    return _state["settings"] or get_settings()


def _configure_logging(verbose: bool) -> None:
    logger.enable("calsig")
    logger.remove()
    level = "DEBUG" if verbose else _settings().log_level
    logger.add(RichHandler(console=err_console, markup=False), format="{message}", level=level)


def _input_error(e: Exception) -> NoReturn:
    err_console.print(f"[red]Error:[/red] {e}")
    raise typer.Exit(EXIT_INPUT_ERROR)


@app.callback()
def configure(
    settings_file: Optional[Path] = typer.Option(
        None, "--settings", help="YAML file overriding CALSIG_* settings"
    ),
):
    """Revenue-optimal calibrated signaling for second-price auctions."""
    if settings_file is not None:
        try:
            _state["settings"] = get_settings().load(settings_file)
        except INPUT_ERRORS as e:
            _input_error(e)
    else:
        _state["settings"] = None


@app.command()
def design(
    config: Path = typer.Argument(..., help="Prior file (JSON or YAML)"),
    output: Path = typer.Option(Path("signaling.json"), "--output", "-o", help="Bundle path"),
    convention: Convention = typer.Option(Convention.APPENDIX, "--convention"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Verbose output"),
):
    """
    Design the revenue-optimal calibrated signaling for a prior.

    Example:
        calsig design prior.json -o signaling.json
    """
    _configure_logging(verbose)
    settings = _settings()
    try:
        prior = load_prior(config)
        sig = design_optimal(
            prior, convention, method=settings.lp_method, threads=settings.threads
        )
        region = classify_region(prior, convention)
        sig.meta.extra["region"] = region.region
        sig.meta.extra["thresholds"] = {
            conv.value: optimal_thresholds(prior, conv).to_dict() for conv in Convention
        }
        save_signaling(output, sig)
    except INPUT_ERRORS as e:
        _input_error(e)

    rev, wel = revenue(sig), welfare(prior)
    console.print(Panel(
        f"t1 = {sig.meta.t1:.10g}\n"
        f"t0 = {sig.meta.t0:.10g}\n"
        f"Rev = {rev:.10g}\n"
        f"Wel = {wel:.10g}\n"
        f"region = {region.region}",
        title="Optimal Signaling",
        border_style="green" if rev <= wel else "yellow"
    ))
    console.print(f"[dim]wrote {output}[/dim]")


@app.command("design-ir")
def design_ir_cmd(
    config: Path = typer.Argument(..., help="Prior file (JSON or YAML)"),
    epsilon: float = typer.Option(..., "--epsilon", "-e", help="Approximation parameter"),
    output: Path = typer.Option(Path("signaling_ir.json"), "--output", "-o", help="Bundle path"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Verbose output"),
):
    """Design the individually rational eps-approximate signaling."""
    _configure_logging(verbose)
    settings = _settings()
    try:
        prior = load_prior(config)
        sig = design_ir(prior, epsilon, method=settings.lp_method, threads=settings.threads)
        save_signaling(output, sig)
    except INPUT_ERRORS as e:
        _input_error(e)

    utility = exante_utility(sig)
    console.print(Panel(
        f"epsilon = {epsilon:g} (M = {sig.meta.extra['M']})\n"
        f"region = {sig.meta.extra['region']}\n"
        f"t0_ir = {sig.meta.extra['t0_ir']:.10g}\n"
        f"Rev = {revenue(sig):.10g}\n"
        f"Wel = {welfare(prior):.10g}\n"
        f"bidder utility = {utility.common:.3e}",
        title="IR Signaling",
        border_style="green"
    ))
    console.print(f"[dim]wrote {output}[/dim]")


@app.command()
def simulate(
    bundle: Path = typer.Argument(..., help="Signaling bundle"),
    samples: int = typer.Option(100_000, "--samples", "-n"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Defaults to CALSIG_SEED"),
    shards: int = typer.Option(simulator.DEFAULT_SHARDS, "--shards"),
    json_out: Optional[Path] = typer.Option(None, "--json", help="Summary JSON path"),
    csv_out: Optional[Path] = typer.Option(None, "--csv", help="Per-signal calibration CSV"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Verbose output"),
):
    """Run Monte-Carlo auctions under a signaling bundle."""
    _configure_logging(verbose)
    settings = _settings()
    try:
        sig = load_signaling(bundle)
        report = simulator.run(
            sig,
            samples,
            seed=settings.seed if seed is None else seed,
            shards=shards,
            threads=settings.threads,
        )
    except INPUT_ERRORS as e:
        _input_error(e)

    if json_out:
        write_json(json_out, report.to_dict())
    if csv_out:
        write_csv(csv_out, simulator.CSV_HEADER, report.to_csv_rows())

    analytic = revenue(sig)
    console.print(Panel(
        f"samples = {report.samples} (seed {report.seed}, {report.shards} shards)\n"
        f"revenue = {report.revenue_mean:.6f} +- {report.revenue_stderr:.6f} "
        f"(analytic {analytic:.6f})\n"
        f"utility = {report.utility_mean[0]:.6f} +- {report.utility_stderr[0]:.6f}",
        title=f"Simulation ({sig.meta.variant.value})"
    ))
    if verbose:
        table = Table(title="Calibration")
        table.add_column("Signal")
        table.add_column("Hits")
        table.add_column("Click rate")
        for stat in report.calibration:
            table.add_row(f"{stat.value:.6g}", str(stat.hits), f"{stat.rate:.6f}")
        console.print(table)


@app.command()
def sweep(
    n: int = typer.Option(20, "--n", help="Number of bidders"),
    p_start: float = typer.Option(0.01, "--p-start"),
    p_end: float = typer.Option(0.5, "--p-end"),
    p_steps: int = typer.Option(50, "--p-steps"),
    epsilon: float = typer.Option(1e-5, "--epsilon", "-e"),
    output: Path = typer.Option(Path("sweep.csv"), "--output", "-o"),
    threads: Optional[int] = typer.Option(None, "--threads", help="Defaults to CALSIG_THREADS"),
    mark_exact: bool = typer.Option(
        False, "--mark-exact", help="Append an ir_exact column (0: rev_ir is the floor)"
    ),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Verbose output"),
):
    """Compare optimal, IR and full-information revenue over Bernoulli(p) priors."""
    _configure_logging(verbose)
    try:
        rows = run_sweep(
            n, p_start, p_end, p_steps, epsilon, threads=threads or _settings().threads
        )
        header = SWEEP_HEADER + ((EXACT_COLUMN,) if mark_exact else ())
        write_csv(output, header, [r.as_tuple(mark_exact) for r in rows])
    except INPUT_ERRORS as e:
        _input_error(e)
    floors = sum(1 for r in rows if not r.ir_exact)
    if floors:
        console.print(f"[yellow]{floors} rows fall back to the IR revenue floor[/yellow]")
    crossover = next((r.p for r in rows if r.region == 2), None)
    console.print(
        f"[green]wrote {len(rows)} rows to {output}[/green]"
        + (f" (region 2 from p = {crossover:.4g})" if crossover is not None else "")
    )


@app.command()
def verify(
    config: Path = typer.Argument(..., help="Prior file (JSON or YAML)"),
    bundle: Optional[Path] = typer.Option(None, "--bundle", "-b", help="Bundle to re-check"),
    output: Optional[Path] = typer.Option(None, "--output", "-o", help="Report JSON path"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Verbose output"),
):
    """Run the oracle suite; exits 1 if any check fails."""
    _configure_logging(verbose)
    settings = _settings()
    try:
        prior = load_prior(config)
        sig = load_signaling(bundle) if bundle else None
        tol = settings.ir_tol if sig is not None and sig.meta.variant == Variant.IR else settings.tol
        report = oracle.verify_suite(
            prior, sig, oracle.SuiteOptions(tol=tol, method=settings.lp_method)
        )
        if output:
            write_json(output, report.to_dict())
    except INPUT_ERRORS as e:
        _input_error(e)

    table = Table(title="Verification")
    table.add_column("Check")
    table.add_column("Verdict")
    table.add_column("Worst")
    for name, sub in report.details.items():
        style = "green" if sub["verdict"] == "pass" else "red"
        table.add_row(name, f"[{style}]{sub['verdict']}[/{style}]", f"{sub['worst']:.3e}")
    console.print(table)
    for v in report.violations:
        console.print(f"[red]{v.rule_id}[/red] {v.message}" + (f" ({v.location})" if v.location else ""))

    if not report.passed:
        raise typer.Exit(EXIT_VERIFY_FAILED)


def main():
    """Entry point."""
    app()


if __name__ == "__main__":
    main()
