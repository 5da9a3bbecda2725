"""
Named verification suites run against a scenario.

Each suite returns a SuiteResult. Suites share one lazily computed census
and connection search per run, execute in a thread pool and are reported
sorted by name, so the outcome does not depend on scheduling.
"""

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from sturmflow.compare import compare_resolutions
from sturmflow.connections import (
    ConnectionRecord,
    connection_graph,
    verify_connection_inequalities,
)
from sturmflow.core import Census, ConnectionSearch, run_census, run_connections
from sturmflow.critical import equilibrium_spectrum, verify_pairing
from sturmflow.dichotomy import (
    EvolutionFamily,
    bounded_adjoint_solutions,
    construct_breaking_bump,
    detect_dichotomy,
    fredholm_index,
    green_solve,
    load_family,
    materialize_adjoint,
    roughness_check,
    split_dichotomies,
    window_sensitivity,
)
from sturmflow.errors import (
    BumpConstructionError,
    IndeterminateError,
    InputError,
    NoGapError,
    PreconditionError,
    WindowTooShortError,
)
from sturmflow.grid import Field, Grid, TrigCoefficient, chafee_infante
from sturmflow.scenario import Scenario, random_stream
from sturmflow.semiflow import evolve
from sturmflow.sturm import difference_trajectory, track_lap

logger = logging.getLogger(__name__)

SPECTRUM_TOL = 1e-8
TRIVIAL_TOL = 1e-5
TRIVIAL_ALIGNMENT = 0.999
MINUS_ONE_GAP = 1e-3
GREEN_TOL = 1e-10


@dataclass
class SuiteResult:
    name: str
    passed: bool
    details: Dict[str, Any] = field(default_factory=dict)
    failures: List[str] = field(default_factory=list)


class SuiteContext:
    """Scenario plus the census and connections shared by the suites of a run."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self._lock = threading.RLock()
        self._census: Optional[Census] = None
        self._search: Optional[Tuple[Census, ConnectionSearch]] = None

    def census(self) -> Census:
        with self._lock:
            if self._census is None:
                self._census = run_census(self.scenario)
            return self._census

    def connections(self) -> Tuple[Census, ConnectionSearch]:
        """The connection search, on a copy of the census it may extend."""
        with self._lock:
            if self._search is None:
                base = self.census()
                extended = Census(
                    base.scenario, list(base.equilibria), list(base.orbits), list(base.failures)
                )
                self._search = (extended, run_connections(self.scenario, extended))
            return self._search


SuiteFunction = Callable[[SuiteContext], SuiteResult]
SUITES: Dict[str, SuiteFunction] = {}


def suite(name: str) -> Callable[[SuiteFunction], SuiteFunction]:
    def register(func: SuiteFunction) -> SuiteFunction:
        SUITES[name] = func
        return func

    return register


def _result(name: str, failures: List[str], **details) -> SuiteResult:
    return SuiteResult(name, not failures, details, failures)


@suite("pairing")
def pairing_suite(ctx: SuiteContext) -> SuiteResult:
    """Pairing verdicts of the census, plus the linear oracle f = lam*u when
    the scenario lists ``pairing_lambdas``."""
    failures: List[str] = []
    verdicts = {}
    for e in ctx.census().equilibria:
        verdict = verify_pairing(e.spectrum)
        verdicts[e.label] = verdict.passed
        failures.extend(f"{e.label}: {f}" for f in verdict.failures)

    errors = {}
    n = int(ctx.scenario.option("pairing_points", ctx.scenario.grid.n_points))
    for lam in ctx.scenario.option("pairing_lambdas", []):
        grid = Grid(n)
        spectrum = equilibrium_spectrum(Field.zeros(grid), chafee_infante(lam, cubic=0.0))
        expected = np.sort(
            np.concatenate([[lam], np.repeat(lam - np.arange(1, grid.band + 1) ** 2.0, 2)])
        )[::-1][: spectrum.trusted]
        error = float(np.max(np.abs(spectrum.eigenvalues[: spectrum.trusted] - expected)))
        errors[str(lam)] = error
        if error > SPECTRUM_TOL:
            failures.append(f"lambda={lam}: eigenvalue error {error:.2e}")
        verdict = verify_pairing(spectrum)
        failures.extend(f"lambda={lam}: {f}" for f in verdict.failures)
    return _result("pairing", failures, equilibria=verdicts, oracle_errors=errors)


def _random_profile(rng: np.random.Generator, modes: int) -> TrigCoefficient:
    decay = 1.0 / (1.0 + np.arange(1, modes + 1))
    return TrigCoefficient(
        float(rng.normal()),
        tuple(rng.normal(size=modes) * decay),
        tuple(rng.normal(size=modes) * decay),
    )


@suite("lap-monotone")
def lap_suite(ctx: SuiteContext) -> SuiteResult:
    """Zero number of u - v along random solution pairs never increases and
    every strict drop is bracketed by a multiple zero."""
    sc = ctx.scenario
    pairs = int(sc.option("pairs", 100))
    t_end = float(sc.option("t_end", 2.0))
    modes = int(sc.option("modes", 4))
    failures: List[str] = []
    drops = violations = 0
    for i in range(pairs):
        rng = random_stream(sc.rng_seed, i)
        u0 = Field(sc.grid, _random_profile(rng, modes).evaluate(sc.grid.x))
        v0 = Field(sc.grid, _random_profile(rng, modes).evaluate(sc.grid.x))
        a = evolve(u0, sc.nonlinearity, t_end, sc.flow)
        b = evolve(v0, sc.nonlinearity, t_end, sc.flow)
        history = track_lap(difference_trajectory(a, b))
        drops += len(history.drop_events)
        violations += len(history.violations)
        if history.violations:
            failures.append(f"pair {i}: zero number increased {len(history.violations)} times")
        if history.inconsistent or not history.all_drops_bracketed:
            failures.append(f"pair {i}: a drop has no bracketed multiple zero")
    return _result("lap-monotone", failures, pairs=pairs, drops=drops, violations=violations)


@suite("floquet")
def floquet_suite(ctx: SuiteContext) -> SuiteResult:
    """Trivial multiplier near 1 along gamma_t(0), no multiplier near -1."""
    census = ctx.census()
    failures = [f"{label}: {reason}" for label, reason in census.failures]
    details: Dict[str, Any] = {}
    if not census.orbits:
        failures.append("no periodic orbit in the census")
    for orbit in census.orbits:
        s = orbit.spectrum
        if s.trivial_index is None:
            failures.append(f"{orbit.label}: no trivial multiplier identified")
            continue
        mu = s.eigenvalues[s.trivial_index]
        v = np.real(s.eigenvectors[:, s.trivial_index])
        d = orbit.flow_direction()
        cosine = float(abs(v @ d) / (np.linalg.norm(v) * np.linalg.norm(d)))
        nearest = float(np.min(np.abs(s.eigenvalues + 1.0)))
        details[orbit.label] = {
            "trivial_error": float(abs(mu - 1.0)),
            "cosine": cosine,
            "minus_one_distance": nearest,
            "morse_index": s.morse_index,
        }
        if abs(mu - 1.0) > TRIVIAL_TOL:
            failures.append(f"{orbit.label}: trivial multiplier off by {abs(mu - 1.0):.2e}")
        if cosine < TRIVIAL_ALIGNMENT:
            failures.append(f"{orbit.label}: trivial eigenvector cosine {cosine:.5f}")
        if nearest < MINUS_ONE_GAP:
            failures.append(f"{orbit.label}: multiplier within {nearest:.1e} of -1")
    return _result("floquet", failures, orbits=details)


def _shot_failures(search: ConnectionSearch, kinds: Sequence[str]) -> List[str]:
    return [f"{name}: {message}" for name, kind, message in search.skipped if kind in kinds]


@suite("asymptotics")
def asymptotics_suite(ctx: SuiteContext) -> SuiteResult:
    """Fitted exit and entry rates match eigenvalues of the endpoints."""
    _, search = ctx.connections()
    tol = ctx.scenario.connect.rate_tol
    failures = _shot_failures(search, ("NoEigenvalueMatchError", "WindowTooShortError"))
    rates = {}
    for conn in search.connections:
        rates[conn.label] = (conn.source_fit.rate, conn.target_fit.rate)
        for fit in (conn.source_fit, conn.target_fit):
            if abs(fit.rate - fit.matched_rate) > tol:
                failures.append(
                    f"{conn.label} {fit.side}: rate {fit.rate:.6f} vs {fit.matched_rate:.6f}"
                )
    return _result("asymptotics", failures, rates=rates)


@suite("inequalities")
def inequalities_suite(ctx: SuiteContext) -> SuiteResult:
    """Zero-number and Morse-index inequalities on every connection."""
    _, search = ctx.connections()
    failures: List[str] = []
    clauses = 0
    for conn in search.connections:
        verdict = verify_connection_inequalities(conn)
        clauses += len(verdict.clauses)
        failures.extend(
            f"{conn.label} {c.name}: measured {c.measured}, bound {c.bound}"
            for c in verdict.failures
        )
        if verdict.inconsistent:
            failures.append(f"{conn.label}: lap history inconsistent")
    return _result(
        "inequalities", failures, connections=len(search.connections), clauses=clauses
    )


@suite("transversality")
def transversality_suite(ctx: SuiteContext) -> SuiteResult:
    """Dimension check and an empty bounded-adjoint basis, stable under
    window doubling, on every connection."""
    _, search = ctx.connections()
    tau = float(ctx.scenario.option("tau", 0.5))
    half_window = int(ctx.scenario.option("half_window", 10))
    failures: List[str] = []
    details = {}
    for conn in search.connections:
        if conn.transversality is not None and not conn.transversality.passed:
            failures.append(f"{conn.label}: dimension check {conn.transversality.status}")
        try:
            sensitivity = window_sensitivity(conn, tau, half_window)
        except (WindowTooShortError, NoGapError) as e:
            failures.append(f"{conn.label}: {e}")
            continue
        details[conn.label] = {
            "dimensions": list(sensitivity.dimensions),
            "smallest_singular_values": list(sensitivity.smallest_singular_values),
        }
        if not sensitivity.stable:
            failures.append(f"{conn.label}: verdict changes under window doubling")
        elif sensitivity.dimensions[0] != 0:
            failures.append(
                f"{conn.label}: {sensitivity.dimensions[0]} bounded adjoint solution(s)"
            )
            details[conn.label]["breaking_bump"] = _breaking_bump(
                conn, tau, half_window, sensitivity.origin
            )
    return _result("transversality", failures, connections=details)


def _breaking_bump(
    conn: ConnectionRecord, tau: float, half_window: int, origin: float
) -> Dict[str, Any]:
    """Try to break a non-transverse connection with a bump perturbation."""
    fam = EvolutionFamily.from_trajectory(
        conn.trajectory, tau, origin, -half_window, half_window
    )
    minus, plus = split_dichotomies(fam)
    basis = bounded_adjoint_solutions(fam, minus, plus)
    psi = materialize_adjoint(fam, basis.sequences[0])
    try:
        bump = construct_breaking_bump(conn, psi)
    except (BumpConstructionError, PreconditionError) as e:
        logger.warning(f"No breaking bump for {conn.label}: {e}")
        return {"found": False, "reason": str(e)}
    return {
        "found": True,
        "center": list(bump.center),
        "melnikov": bump.melnikov.value,
        "error": bump.melnikov.error,
        "halvings": bump.halvings,
    }


@suite("graph")
def graph_suite(ctx: SuiteContext) -> SuiteResult:
    """Acyclic connection graph obeying the index rule with bounded chains."""
    census, search = ctx.connections()
    report = connection_graph(census.elements, search.connections)
    failures = [f"cycle {' -> '.join(c)}" for c in report.cycles]
    failures.extend(
        f"edge {e.source} -> {e.target} breaks the {e.rule} index rule"
        for e in report.rule_violations
    )
    if report.chain_length > report.chain_bound:
        failures.append(f"chain of length {report.chain_length} exceeds {report.chain_bound}")
    return _result(
        "graph",
        failures,
        nodes=report.nodes,
        edges=len(report.edges),
        chain_length=report.chain_length,
        chain_bound=report.chain_bound,
    )


def random_gapped_family(
    rng: np.random.Generator, dim: int, n_lo: int = -15, n_hi: int = 15
) -> Tuple[EvolutionFamily, int]:
    """Steps S (D + small noise) S^-1 with |D| split away from 1; returns the rank."""
    rank = int(rng.integers(0, dim + 1))
    moduli = np.concatenate(
        [rng.uniform(1.5, 3.0, rank), rng.uniform(0.2, 0.6, dim - rank)]
    )
    signs = rng.choice([-1.0, 1.0], dim)
    frame = np.eye(dim) + 0.3 * rng.standard_normal((dim, dim))
    inverse = np.linalg.inv(frame)
    steps = [
        frame @ (np.diag(signs * moduli) + 0.05 * rng.standard_normal((dim, dim))) @ inverse
        for _ in range(n_hi - n_lo)
    ]
    return EvolutionFamily.from_matrices(steps, n_lo), rank


def scalar_index_family(index: int, half: int = 20) -> EvolutionFamily:
    """a(n) = 2 then 1/2 (index +1) or 1/2 then 2 (index -1), switching at 0."""
    if index not in (1, -1):
        raise InputError("scalar families have index +1 or -1")
    before, after = (2.0, 0.5) if index == 1 else (0.5, 2.0)
    return EvolutionFamily.from_matrices(
        [[[before]]] * half + [[[after]]] * half, -half
    )


def _check_index(fam: EvolutionFamily, expected: Optional[int], name: str, failures: List[str]):
    try:
        minus, plus = split_dichotomies(fam)
        result = fredholm_index(fam, minus, plus)
    except (NoGapError, IndeterminateError, WindowTooShortError) as e:
        failures.append(f"{name}: {e}")
        return None
    if not result.consistent:
        failures.append(
            f"{name}: ker/coker {result.kernel_dim}/{result.cokernel_dim} but the window "
            f"operator gives {result.section_kernel_dim}/{result.section_cokernel_dim}"
        )
    if expected is not None and result.index != expected:
        failures.append(f"{name}: index {result.index}, expected {expected}")
    return result.index


@suite("dichotomy")
def dichotomy_suite(ctx: SuiteContext) -> SuiteResult:
    """Synthetic battery: random gapped families, the scalar +/-1 index
    families, roughness of diag(2, 1/2) and any family files listed under
    ``families``."""
    sc = ctx.scenario
    count = int(sc.option("random_families", 200))
    failures: List[str] = []
    worst_residual = 0.0
    for i in range(count):
        rng = random_stream(sc.rng_seed, i)
        fam, rank = random_gapped_family(rng, 1 + i % 4)
        try:
            report = detect_dichotomy(fam)
        except NoGapError as e:
            failures.append(f"family {i}: {e}")
            continue
        if report.rank != rank:
            failures.append(f"family {i}: rank {report.rank}, expected {rank}")
        if not report.passed:
            failures.append(f"family {i}: dichotomy clauses fail")
        forcing = rng.standard_normal((fam.length, fam.dim))
        residual = green_solve(fam, report, forcing).residual
        worst_residual = max(worst_residual, residual)
        if residual > GREEN_TOL:
            failures.append(f"family {i}: Green residual {residual:.2e}")
        _check_index(fam, 0, f"family {i}", failures)

    indices = {}
    for index in (1, -1):
        indices[str(index)] = _check_index(
            scalar_index_family(index), index, f"scalar {index:+d}", failures
        )
    roughness = roughness_check(
        EvolutionFamily.constant(np.diag([2.0, 0.5]), 0, 20),
        directions=np.array([[0.0, 1.0], [1.0, 0.0]]),
    )
    if not roughness.passed:
        failures.append(
            f"roughness: slope {roughness.slope:.3g}, ranks {sorted(set(roughness.ranks))}"
        )
    for path in sc.option("families", []):
        fam, meta = load_family(path)
        indices[str(path)] = _check_index(fam, meta.get("expect_index"), str(path), failures)
    return _result(
        "dichotomy",
        failures,
        families=count,
        worst_green_residual=worst_residual,
        indices=indices,
        roughness_slope=roughness.slope,
    )


@suite("resolution")
def resolution_suite(ctx: SuiteContext) -> SuiteResult:
    """Morse indices and pairing verdicts unchanged at doubled n and halved dt."""
    comparison = compare_resolutions(ctx.scenario)
    failures = [
        f"{row.label}: index {row.coarse_index} -> {row.fine_index}, "
        f"pairing {row.coarse_pairing} -> {row.fine_pairing}"
        for row in comparison.mismatches
    ]
    return _result("resolution", failures, elements=len(comparison.rows))


def _run_one(name: str, ctx: SuiteContext) -> SuiteResult:
    logger.debug("Running suite %s", name)
    result = SUITES[name](ctx)
    level = logging.INFO if result.passed else logging.WARNING
    logger.log(level, f"Suite {name}: {'pass' if result.passed else 'FAIL'}")
    return result


def run_suites(
    scenario: Scenario,
    names: Optional[Sequence[str]] = None,
    threads: int = 1,
    rng_seed: Optional[int] = None,
) -> List[SuiteResult]:
    """Run the named suites (the scenario's own by default), sorted by name.

    Raises:
        InputError: On an unknown suite name
    """
    if rng_seed is not None:
        scenario = replace(scenario, rng_seed=rng_seed)
    names = list(names) if names else list(scenario.suites)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise InputError(
            f"Unknown suite(s): {', '.join(unknown)} (available: {', '.join(sorted(SUITES))})"
        )
    ctx = SuiteContext(scenario)
    ordered = sorted(set(names))
    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
        results = list(pool.map(lambda n: _run_one(n, ctx), ordered))
    return sorted(results, key=lambda r: r.name)


def summarize(results: Sequence[SuiteResult]) -> Dict[str, Any]:
    return {
        "passed": all(r.passed for r in results),
        "suites": {r.name: r.passed for r in results},
        "failures": sum(len(r.failures) for r in results),
    }
