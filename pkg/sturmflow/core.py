"""
Scenario orchestration: the census of critical elements, the connection
search between them and their terminal display.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from rich.console import Console
from rich.text import Text
from rich.tree import Tree

from sturmflow.connections import ConnectionRecord, assemble_connection, shoot_unstable
from sturmflow.critical import (
    CriticalElement,
    EquilibriumRecord,
    PeriodicOrbitRecord,
    RotatingWaveSeed,
    find_equilibrium,
    find_periodic_orbit,
)
from sturmflow.errors import (
    ConvergenceError,
    EscapeError,
    IndeterminateError,
    NoCaptureError,
    NoEigenvalueMatchError,
    PreconditionError,
    SingularJacobianError,
    WindowTooShortError,
)
from sturmflow.grid import Field
from sturmflow.scenario import Scenario
from sturmflow.semiflow import Trajectory, rhs

logger = logging.getLogger(__name__)

# shots ending in one of these are reported and skipped
REPORTED_ERRORS = (
    NoCaptureError,
    EscapeError,
    WindowTooShortError,
    NoEigenvalueMatchError,
    PreconditionError,
    IndeterminateError,
)
NEWTON_ERRORS = (ConvergenceError, SingularJacobianError)
DUPLICATE_TOL = 1e-6
# sup|u_t| below which a shot's endpoint is refined into a new equilibrium
SETTLED_VELOCITY = 1e-3


@dataclass
class Census:
    scenario: str
    equilibria: List[EquilibriumRecord] = field(default_factory=list)
    orbits: List[PeriodicOrbitRecord] = field(default_factory=list)
    failures: List[Tuple[str, str]] = field(default_factory=list)

    @property
    def elements(self) -> List[CriticalElement]:
        return [*self.equilibria, *self.orbits]

    def find(self, label: str) -> CriticalElement:
        for element in self.elements:
            if element.label == label:
                return element
        raise KeyError(label)


@dataclass
class ConnectionSearch:
    connections: List[ConnectionRecord] = field(default_factory=list)
    skipped: List[Tuple[str, str, str]] = field(default_factory=list)


def _signature(profile: np.ndarray, translation_invariant: bool) -> np.ndarray:
    if translation_invariant:
        return np.abs(np.fft.rfft(profile)) / profile.size
    return profile


def is_duplicate(
    profile: np.ndarray, known: Sequence[EquilibriumRecord], translation_invariant: bool
) -> Optional[EquilibriumRecord]:
    """The known equilibrium ``profile`` repeats, modulo shifts when the flow
    commutes with them."""
    mine = _signature(profile, translation_invariant)
    for other in known:
        theirs = _signature(other.profile.values, translation_invariant)
        scale = max(1.0, float(np.max(np.abs(theirs))))
        if float(np.max(np.abs(mine - theirs))) <= DUPLICATE_TOL * scale:
            return other
    return None


def _add_equilibrium(
    census: Census, guess: Field, scenario: Scenario, label: str
) -> Optional[EquilibriumRecord]:
    spec = scenario.nonlinearity
    try:
        record = find_equilibrium(guess, spec, label=label)
    except NEWTON_ERRORS as e:
        logger.warning(f"Equilibrium search from {label} failed: {e}")
        census.failures.append((label, str(e)))
        return None
    duplicate = is_duplicate(
        record.profile.values, census.equilibria, spec.is_translation_invariant
    )
    if duplicate is not None:
        logger.debug("Seed %s converged to known equilibrium %s", label, duplicate.label)
        return duplicate
    record = replace(record, label=f"e{len(census.equilibria)}")
    census.equilibria.append(record)
    logger.debug(
        "Found %s: Morse index %d, residual %.2e",
        record.label,
        record.morse_index,
        record.residual,
    )
    return record


def run_census(scenario: Scenario) -> Census:
    """Equilibria from every equilibrium seed and orbits from every
    rotating-wave seed, duplicates removed.

    Equilibria are labelled e0, e1, ... and orbits orbit0, ... in seed order.
    """
    census = Census(scenario.name)
    grid = scenario.grid
    for i, seed in enumerate(scenario.seeds_of("equilibrium")):
        _add_equilibrium(census, seed.field(grid), scenario, seed.label or f"seed{i}")
    for i, seed in enumerate(scenario.seeds_of("rotating-wave")):
        label = f"orbit{len(census.orbits)}"
        try:
            orbit = find_periodic_orbit(
                RotatingWaveSeed(seed.field(grid), seed.speed),
                scenario.nonlinearity,
                scenario.flow,
                label=label,
            )
        except NEWTON_ERRORS as e:
            logger.warning(f"Orbit search from {seed.label or label} failed: {e}")
            census.failures.append((seed.label or label, str(e)))
            continue
        census.orbits.append(orbit)
        logger.debug("Found %s: period %.6g", label, orbit.period)
    logger.info(
        f"Census of {scenario.name}: {len(census.equilibria)} equilibria, "
        f"{len(census.orbits)} periodic orbits"
    )
    return census


def _settle(census: Census, traj: Trajectory, scenario: Scenario) -> bool:
    """Refine the end of a shot into a new equilibrium; True when one was added."""
    velocity = rhs(scenario.nonlinearity, traj.grid, traj.states[-1])
    if float(np.max(np.abs(velocity))) > SETTLED_VELOCITY:
        return False
    before = len(census.equilibria)
    _add_equilibrium(census, traj.final, scenario, f"endpoint@{traj.t_end:.4g}")
    return len(census.equilibria) > before


def run_connections(
    scenario: Scenario,
    census: Census,
    sources: Optional[Sequence[str]] = None,
    on_shot: Optional[Callable[[str], None]] = None,
) -> ConnectionSearch:
    """Shoot along every unstable direction (both signs) of every source.

    A shot that no known element captures but that has settled is refined
    into a new equilibrium, which joins the census before the shot is
    classified again. Reported failures are logged and collected.
    """
    settings = scenario.connect
    spec = scenario.nonlinearity
    limit = scenario.option("directions")
    search = ConnectionSearch()
    chosen = [
        e for e in census.elements if e.spectrum is not None and e.morse_index > 0
    ]
    if sources:
        chosen = [e for e in chosen if e.label in sources]
    for source in chosen:
        basis = source.spectrum.unstable_basis()
        count = basis.shape[1] if limit is None else min(int(limit), basis.shape[1])
        for j in range(count):
            for sign in (1.0, -1.0):
                name = f"{source.label}[{j}{'+' if sign > 0 else '-'}]"
                if on_shot:
                    on_shot(name)
                try:
                    traj = shoot_unstable(
                        source,
                        sign * basis[:, j],
                        settings.eps,
                        spec,
                        settings.t_max,
                        scenario.flow,
                        census.elements,
                        settings.capture_radius,
                        settings.dwell_min,
                        settings.escape_radius,
                        settings.chunk,
                        stop_on_capture=bool(scenario.option("stop_on_capture", False)),
                    )
                    try:
                        record = assemble_connection(source, traj, census.elements, settings)
                    except NoCaptureError:
                        if not _settle(census, traj, scenario):
                            raise
                        record = assemble_connection(source, traj, census.elements, settings)
                except REPORTED_ERRORS + NEWTON_ERRORS as e:
                    logger.warning(f"Shot {name} skipped: {e}")
                    search.skipped.append((name, type(e).__name__, str(e)))
                    continue
                search.connections.append(record)
    logger.info(
        f"Found {len(search.connections)} connections ({len(search.skipped)} shots skipped)"
    )
    return search


def element_summary(element: CriticalElement) -> str:
    if isinstance(element, EquilibriumRecord):
        return (
            f"index {element.morse_index}, sup {element.profile.sup_norm():.6g}, "
            f"residual {element.residual:.1e}"
        )
    index = element.morse_index if element.spectrum is not None else "?"
    return f"index {index}, period {element.period:.6g}, closure {element.closure_error:.1e}"


def build_census_tree(
    census: Census, connections: Union[ConnectionSearch, Sequence[ConnectionRecord], None] = None
) -> Tree:
    """Rich tree of a census and, optionally, its connections."""
    tree = Tree(f"[bold]{census.scenario}[/bold]")
    eq_branch = tree.add("[cyan]Equilibria[/cyan]")
    for e in census.equilibria:
        style = "green" if e.spectrum.hyperbolic else "yellow"
        eq_branch.add(Text(f"{e.label}: {element_summary(e)}", style=style))
    if census.orbits:
        orbit_branch = tree.add("[cyan]Periodic orbits[/cyan]")
        for o in census.orbits:
            orbit_branch.add(Text(f"{o.label}: {element_summary(o)}", style="magenta"))
    if census.failures:
        failed = tree.add("[red]Failed seeds[/red]")
        for label, reason in census.failures:
            failed.add(Text(f"{label}: {reason}", style="red"))
    if connections is not None:
        records = (
            connections.connections if isinstance(connections, ConnectionSearch) else connections
        )
        conn_branch = tree.add("[cyan]Connections[/cyan]")
        for c in records:
            verdict = ""
            if c.transversality is not None:
                verdict = f", {c.transversality.status}"
            conn_branch.add(
                Text(
                    f"{c.label}: rates {c.source_fit.rate:+.4f} / {c.target_fit.rate:+.4f}{verdict}"
                )
            )
    return tree


def display_census(
    census: Census, connections: Union[ConnectionSearch, Sequence[ConnectionRecord], None] = None
) -> None:
    console = Console()
    console.print(build_census_tree(census, connections))
