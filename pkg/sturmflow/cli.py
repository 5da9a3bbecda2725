#!/usr/bin/env python3
"""
Sturmflow CLI - scenario-driven experiments on scalar reaction-diffusion
equations on the circle.

This module provides the command-line interface for the sturmflow package:
simulating scenarios, analyzing and connecting their critical elements,
checking exponential dichotomies, running verification suites and exporting
the results.
"""

import logging
from dataclasses import replace
from pathlib import Path
from typing import Any, List, NoReturn, Optional, Sequence

import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.progress import Progress
from rich.table import Table

from sturmflow.connections import connection_graph
from sturmflow.core import display_census, run_census, run_connections
from sturmflow.dichotomy import (
    bounded_adjoint_solutions,
    detect_dichotomy,
    fredholm_index,
    load_family,
    split_dichotomies,
)
from sturmflow.errors import InputError, NoGapError, NumericalAbort
from sturmflow.exports import FORMATS, export_records
from sturmflow.scenario import Scenario, dump_scenario, load_scenario
from sturmflow.semiflow import evolve
from sturmflow.suites import run_suites, summarize

logging.basicConfig(
    level=logging.INFO,
    format="%(message)s",
    datefmt="[%X]",
    handlers=[RichHandler(rich_tracebacks=True)],
)
logger = logging.getLogger("sturmflow")

app = typer.Typer(
    help="Sturmflow: numerical experiments on reaction-diffusion equations on the circle",
    add_completion=False,
)
console = Console()

EXIT_SUITE_FAILURE = 1
EXIT_INPUT_ERROR = 2
EXIT_NUMERICAL_ABORT = 3


@app.callback()
def callback():
    """Sturmflow CLI tool for reaction-diffusion experiments."""
    pass


def parse_list_option(option_value: Optional[List[str]]) -> List[str]:
    """Parse a list option that may contain space-separated values.

    This allows both multiple uses of the option flag and space-separated values:
    --suite pairing graph
    --suite pairing --suite graph

    Args:
        option_value: List of option values, potentially with space-separated items

    Returns:
        List of individual items
    """
    if not option_value:
        return []

    result = []
    for item in option_value:
        result.extend([x.strip() for x in item.split() if x.strip()])
    return result


def exit_code_for(error: Exception) -> int:
    """Exit code of a failed command: 2 for rejected input, 3 for a
    numerical abort, 1 otherwise."""
    if isinstance(error, InputError):
        return EXIT_INPUT_ERROR
    if isinstance(error, NumericalAbort):
        return EXIT_NUMERICAL_ABORT
    return EXIT_SUITE_FAILURE


def _abort(error: Exception, verbose: bool) -> NoReturn:
    code = exit_code_for(error)
    if code == EXIT_INPUT_ERROR:
        logger.error(f"Input error: {error}")
    elif code == EXIT_NUMERICAL_ABORT:
        logger.error(f"Numerical abort: {error}")
    else:
        logger.error(f"Error: {error}", exc_info=verbose)
    raise typer.Exit(code)


def _set_verbose(verbose: bool) -> None:
    if verbose:
        logger.setLevel(logging.DEBUG)
        logger.debug("Verbose mode enabled")


def _load(scenario: str, seed: Optional[int] = None) -> Scenario:
    loaded = load_scenario(scenario)
    if seed is not None:
        loaded = replace(loaded, rng_seed=seed)
    logger.info(f"Scenario: {loaded.name} (n = {loaded.grid.n_points}, dt = {loaded.flow.dt})")
    return loaded


def _validate_formats(formats: Sequence[str], valid: Sequence[str]) -> List[str]:
    parsed = [fmt.lower() for fmt in parse_list_option(list(formats))]
    invalid = [fmt for fmt in parsed if fmt not in valid]
    if invalid:
        logger.info(f"Supported formats: {', '.join(valid)}")
        raise InputError(f"Unsupported export format(s): {', '.join(invalid)}")
    return parsed


def _export_all(
    records: Sequence[Any], name: str, formats: Sequence[str], out: Path, prefix: str
) -> List[Path]:
    out.mkdir(parents=True, exist_ok=True)
    written = []
    logger.info(f"Exporting to {len(formats)} format(s)")
    with Progress() as progress:
        for fmt in formats:
            output_path = out / f"{prefix}.{fmt}"
            task_export = progress.add_task(f"[green]Exporting to {fmt}...", total=None)
            try:
                export_records(records, name, fmt, str(output_path))
                written.append(output_path)
            except Exception as e:
                logger.error(f"Failed to export to {fmt}: {e}")
            finally:
                progress.update(task_export, completed=True)
    return written


@app.command()
def simulate(
    scenario: str = typer.Option(
        ..., "--scenario", "-s", help="Scenario JSON file or builtin:<name>"
    ),
    initial: Optional[str] = typer.Option(
        None, "--initial", "-i", help="Label of the seed to start from (first initial seed by default)"
    ),
    t_end: Optional[float] = typer.Option(
        None, "--t-end", help="Integration time (the scenario's t_end option by default)"
    ),
    out: Path = typer.Option(Path("."), "--out", "-o", help="Output directory"),
    prefix: str = typer.Option("trajectory", "--prefix", "-n", help="Prefix for output filenames"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """
    Integrate a scenario from one of its seeds.

    Writes <prefix>.ndjson (a header record, then one {t, values} record per
    saved sample) and <prefix>.csv (t, sup_norm, l2_norm, mean).

    Examples:
        sturmflow simulate -s builtin:heat
        sturmflow simulate -s my.json -i bump --t-end 5 -o runs
    """
    _set_verbose(verbose)
    try:
        sc = _load(scenario)
        seeds = sc.seeds_of("initial") or list(sc.seeds)
        if initial is not None:
            seeds = [s for s in sc.seeds if s.label == initial]
        if not seeds:
            raise InputError(
                f"no seed labelled '{initial}'" if initial else "scenario has no seeds to simulate"
            )
        span = float(t_end if t_end is not None else sc.option("t_end", 1.0))
        u0 = seeds[0].field(sc.grid)

        with Progress() as progress:
            task = progress.add_task(f"[cyan]Integrating to t = {span:g}...", total=None)
            traj = evolve(u0, sc.nonlinearity, span, sc.flow)
            progress.update(task, completed=True)

        logger.info(
            f"Reached t = {traj.t_end:.6g}: sup-norm {traj.final.sup_norm():.6g}, "
            f"{len(traj)} samples"
        )
        _export_all([traj], sc.name, ["ndjson", "csv"], out, prefix)
    except typer.Exit:
        raise
    except Exception as e:
        _abort(e, verbose)


@app.command()
def analyze(
    scenario: str = typer.Option(
        ..., "--scenario", "-s", help="Scenario JSON file or builtin:<name>"
    ),
    export_formats: Optional[List[str]] = typer.Option(
        None,
        "--export",
        "-f",
        help=f"Export formats (space-separated or multiple flags): {', '.join(FORMATS)}",
    ),
    out: Path = typer.Option(Path("."), "--out", "-o", help="Output directory"),
    prefix: str = typer.Option("census", "--prefix", "-n", help="Prefix for output filenames"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """
    Find the equilibria and periodic orbits of a scenario.

    Every equilibrium seed is refined by Newton's method and every
    rotating-wave seed by the periodic-orbit solver. The census is displayed
    as a tree and written as NDJSON records with spectra and pairing
    verdicts. Exits with 3 when a seed fails to converge.

    Examples:
        sturmflow analyze -s builtin:chafee-infante-2.5
        sturmflow analyze -s my.json -f ndjson csv npz
    """
    _set_verbose(verbose)
    try:
        sc = _load(scenario)
        formats = _validate_formats(export_formats or ["ndjson"], FORMATS)
        with Progress() as progress:
            task = progress.add_task("[cyan]Refining seeds...", total=None)
            census = run_census(sc)
            progress.update(task, completed=True)

        display_census(census)
        _export_all(census.elements, sc.name, formats, out, prefix)
        if census.failures:
            labels = ", ".join(label for label, _ in census.failures)
            raise NumericalAbort(f"{len(census.failures)} seed(s) did not converge: {labels}")
    except typer.Exit:
        raise
    except Exception as e:
        _abort(e, verbose)


@app.command()
def connect(
    scenario: str = typer.Option(
        ..., "--scenario", "-s", help="Scenario JSON file or builtin:<name>"
    ),
    sources: Optional[List[str]] = typer.Option(
        None, "--source", help="Only shoot from these elements (space-separated or multiple flags)"
    ),
    out: Path = typer.Option(Path("."), "--out", "-o", help="Output directory"),
    prefix: str = typer.Option("connections", "--prefix", "-n", help="Prefix for output filenames"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """
    Search for connecting orbits between the critical elements of a scenario.

    Writes <prefix>.ndjson (one record per connection), graph.dot and
    graph.csv (the edge table with the index rule verdicts).

    Examples:
        sturmflow connect -s builtin:chafee-infante-0.5
        sturmflow connect -s builtin:gradient-2.5 --source e0
    """
    _set_verbose(verbose)
    try:
        sc = _load(scenario)
        with Progress() as progress:
            task = progress.add_task("[cyan]Refining seeds...", total=None)
            census = run_census(sc)
            progress.update(task, completed=True)
            shots = progress.add_task("[cyan]Shooting...", total=None)
            search = run_connections(
                sc,
                census,
                parse_list_option(sources) or None,
                on_shot=lambda name: progress.update(shots, description=f"[cyan]Shooting {name}..."),
            )
            progress.update(shots, completed=True)

        display_census(census, search)
        for name, kind, message in search.skipped:
            logger.debug(f"Skipped {name}: {kind}: {message}")
        report = connection_graph(census.elements, search.connections)
        if not report.passed:
            logger.warning(
                f"Connection graph: {len(report.rule_violations)} rule violation(s), "
                f"{len(report.cycles)} cycle(s)"
            )
        _export_all(search.connections, sc.name, ["ndjson"], out, prefix)
        _export_all([report], sc.name, ["dot", "csv"], out, "graph")
    except typer.Exit:
        raise
    except Exception as e:
        _abort(e, verbose)


@app.command()
def dichotomy(
    families: Optional[List[str]] = typer.Option(
        None, "--family", help="Family files to check (space-separated or multiple flags)"
    ),
    scenario: Optional[str] = typer.Option(
        None, "--scenario", "-s", help="Scenario whose 'families' option lists family files"
    ),
    shift: Optional[float] = typer.Option(
        None, "--shift", help="Check the shifted dichotomy with this radius"
    ),
    out: Path = typer.Option(Path("."), "--out", "-o", help="Output directory"),
    prefix: str = typer.Option("dichotomy", "--prefix", "-n", help="Prefix for output filenames"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """
    Check exponential dichotomies of evolution families loaded from files.

    Windows straddling 0 are split into half-line dichotomies and their
    Fredholm index and bounded adjoint solutions are computed. Exits with 1
    when a family has no dichotomy or its index differs from the file's
    expect_index.

    Examples:
        sturmflow dichotomy --family fixtures/scalar_plus.txt
        sturmflow dichotomy -s my.json --shift 0.5
    """
    _set_verbose(verbose)
    try:
        paths = parse_list_option(families)
        if scenario is not None:
            paths.extend(str(p) for p in load_scenario(scenario).option("families", []))
        if not paths:
            raise InputError("no family files given (use --family or a scenario with 'families')")

        records: List[Any] = []
        failed = []
        table = Table(title="Dichotomies")
        for column in ("Family", "Window", "Rank", "Exponent", "Index", "Adjoint", "Verdict"):
            table.add_column(column)

        with Progress() as progress:
            for path in paths:
                task = progress.add_task(f"[cyan]Checking {path}...", total=None)
                fam, meta = load_family(path)
                window = f"[{fam.n_lo}, {fam.n_hi}]"
                try:
                    if fam.n_lo < 0 < fam.n_hi:
                        minus, plus = split_dichotomies(fam, shift)
                        result = fredholm_index(fam, minus, plus)
                        adjoint = bounded_adjoint_solutions(fam, minus, plus)
                        records.extend([minus, plus, result])
                        expected = meta.get("expect_index")
                        ok = minus.passed and plus.passed and result.consistent
                        if expected is not None and result.index != expected:
                            logger.error(f"{path}: index {result.index}, expected {expected}")
                            ok = False
                        row = (
                            f"{minus.rank}/{plus.rank}",
                            f"{min(minus.exponent, plus.exponent):.4g}",
                            str(result.index),
                            str(adjoint.dimension),
                        )
                    else:
                        report = detect_dichotomy(fam, shift)
                        records.append(report)
                        ok = report.passed
                        row = (str(report.rank), f"{report.exponent:.4g}", "-", "-")
                except NoGapError as e:
                    logger.error(f"{path}: {e}")
                    ok = False
                    row = ("-", "-", "-", "-")
                progress.update(task, completed=True)
                if not ok:
                    failed.append(path)
                table.add_row(path, window, *row, "[green]pass" if ok else "[red]fail")

        console.print(table)
        _export_all(records, "dichotomy", ["ndjson"], out, prefix)
        if failed:
            logger.error(f"{len(failed)} of {len(paths)} families failed")
            raise typer.Exit(EXIT_SUITE_FAILURE)
    except typer.Exit:
        raise
    except Exception as e:
        _abort(e, verbose)


@app.command()
def verify(
    scenario: str = typer.Option(
        ..., "--scenario", "-s", help="Scenario JSON file or builtin:<name>"
    ),
    suites: Optional[List[str]] = typer.Option(
        None, "--suite", help="Suites to run (space-separated or multiple flags); the scenario's by default"
    ),
    threads: int = typer.Option(1, "--threads", "-t", min=1, help="Worker threads"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Override the scenario's rng_seed"),
    out: Path = typer.Option(Path("."), "--out", "-o", help="Output directory"),
    prefix: str = typer.Option("verify", "--prefix", "-n", help="Prefix for output filenames"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """
    Run verification suites and report their verdicts.

    Results are sorted by suite name and written to <prefix>.ndjson. Exits
    with 1 when any suite fails.

    Examples:
        sturmflow verify -s builtin:chafee-infante-2.5
        sturmflow verify -s builtin:lap-random --suite lap-monotone --threads 4
    """
    _set_verbose(verbose)
    try:
        sc = _load(scenario, seed)
        names = parse_list_option(suites)
        with Progress() as progress:
            task = progress.add_task("[cyan]Running suites...", total=None)
            results = run_suites(sc, names or None, threads)
            progress.update(task, completed=True)

        table = Table(title=f"Verification: {sc.name}")
        table.add_column("Suite")
        table.add_column("Verdict")
        table.add_column("Failures")
        for r in results:
            table.add_row(
                r.name, "[green]pass" if r.passed else "[red]fail", "\n".join(r.failures)
            )
        console.print(table)

        _export_all(results, sc.name, ["ndjson"], out, prefix)
        summary = summarize(results)
        if not summary["passed"]:
            logger.error(f"{summary['failures']} failure(s) in {len(results)} suite(s)")
            raise typer.Exit(EXIT_SUITE_FAILURE)
        logger.info(f"All {len(results)} suite(s) passed")
    except typer.Exit:
        raise
    except Exception as e:
        _abort(e, verbose)


@app.command()
def export(
    scenario: str = typer.Option(
        ..., "--scenario", "-s", help="Scenario JSON file or builtin:<name>"
    ),
    export_formats: Optional[List[str]] = typer.Option(
        None,
        "--export",
        "-f",
        help=f"Export formats (space-separated or multiple flags): {', '.join(FORMATS)}, json",
    ),
    connections: bool = typer.Option(
        False, "--connections", "-c", help="Include the connection search"
    ),
    out: Path = typer.Option(Path("."), "--out", "-o", help="Output directory"),
    prefix: Optional[str] = typer.Option(
        None, "--prefix", "-n", help="Prefix for exported filenames (the scenario name by default)"
    ),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """
    Export a scenario's census (and optionally its connections) to several
    formats at once. The 'json' format writes the canonical scenario document.

    Examples:
        sturmflow export -s builtin:heat -f json
        sturmflow export -s builtin:chafee-infante-0.5 -c -f ndjson dot npz
    """
    _set_verbose(verbose)
    try:
        sc = _load(scenario)
        formats = _validate_formats(export_formats or ["ndjson"], FORMATS + ("json",))
        name = prefix or sc.name
        if "json" in formats:
            out.mkdir(parents=True, exist_ok=True)
            dump_scenario(sc, out / f"{name}.json")
            formats = [fmt for fmt in formats if fmt != "json"]
        if not formats:
            return

        with Progress() as progress:
            task = progress.add_task("[cyan]Refining seeds...", total=None)
            census = run_census(sc)
            progress.update(task, completed=True)
            records: List[Any] = list(census.elements)
            if connections:
                shots = progress.add_task("[cyan]Shooting...", total=None)
                records.extend(run_connections(sc, census).connections)
                progress.update(shots, completed=True)

        _export_all(records, sc.name, formats, out, name)
    except typer.Exit:
        raise
    except Exception as e:
        _abort(e, verbose)


@app.command()
def compare(
    scenario: str = typer.Option(
        ..., "--scenario", "-s", help="Scenario JSON file or builtin:<name>"
    ),
    factor: int = typer.Option(2, "--factor", min=2, help="Refinement factor for n (dt is divided by it)"),
    export_formats: Optional[List[str]] = typer.Option(
        None,
        "--export",
        "-f",
        help="Export formats (space-separated or multiple flags): txt, json",
    ),
    out: Path = typer.Option(Path("."), "--out", "-o", help="Output directory"),
    prefix: str = typer.Option("comparison", "--prefix", "-n", help="Prefix for exported filenames"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable verbose output"),
):
    """
    Compare a scenario's census at n and at factor * n grid points side by side.

    Elements whose Morse index or pairing verdict changes with resolution
    are highlighted. Exits with 1 when any verdict changes.

    Examples:
        sturmflow compare -s builtin:chafee-infante-2.5
        sturmflow compare -s builtin:chafee-infante-0.5 -f txt json -o reports
    """
    _set_verbose(verbose)

    from sturmflow.compare import compare_resolutions, display_comparison, export_comparison

    try:
        sc = _load(scenario)
        formats = _validate_formats(export_formats or [], ["txt", "json"])
        with Progress() as progress:
            task = progress.add_task("[cyan]Comparing resolutions...", total=None)
            comparison = compare_resolutions(sc, factor)
            progress.update(task, completed=True)

        display_comparison(comparison)

        if formats:
            out.mkdir(parents=True, exist_ok=True)
            logger.info(f"Exporting comparison to {len(formats)} format(s)")
            with Progress() as progress:
                for fmt in formats:
                    output_path = out / f"{prefix}.{fmt}"
                    task_export = progress.add_task(f"[green]Exporting to {fmt}...", total=None)
                    try:
                        export_comparison(comparison, fmt, str(output_path))
                    except Exception as e:
                        logger.error(f"Failed to export to {fmt}: {e}")
                    finally:
                        progress.update(task_export, completed=True)

        if not comparison.passed:
            logger.error(f"{len(comparison.mismatches)} element(s) change with resolution")
            raise typer.Exit(EXIT_SUITE_FAILURE)
    except typer.Exit:
        raise
    except Exception as e:
        _abort(e, verbose)


@app.command()
def version():
    """Display the current version of sturmflow."""
    from sturmflow import __version__

    typer.echo(f"Sturmflow version: {__version__}")


def main():
    """Entry point for the CLI."""
    app()


if __name__ == "__main__":
    main()
