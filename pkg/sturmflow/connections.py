"""
Connecting orbits between critical elements.

Orbits are computed by shooting from an unstable direction of the source
and classified at both ends: which element captures the tail, at which
exponential rate the difference decays, and whether the zero-number and
Morse-index inequalities between the endpoints hold.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg
from scipy.optimize import least_squares, minimize_scalar
from scipy.spatial import cKDTree

from sturmflow.critical import CriticalElement, EquilibriumRecord, PeriodicOrbitRecord
from sturmflow.errors import (
    DegenerateFieldError,
    EscapeError,
    InputError,
    NoCaptureError,
    NoEigenvalueMatchError,
    PreconditionError,
    WindowTooShortError,
)
from sturmflow.grid import Field, NonlinearitySpec, derivative_values
from sturmflow.semiflow import FlowConfig, Trajectory, evolve, propagate_tangent
from sturmflow.sturm import LapHistory, track_lap, zero_number

logger = logging.getLogger(__name__)

CAPTURE_RADIUS = 1e-3
DWELL_MIN = 5.0
RATE_TOL = 1e-3
SIGMA_LOW = 1e-8
SIGMA_HIGH = 1e-4
FIT_BAND = (1e-9, 1e-2)
MIN_SAMPLES = 20
INJ_TOL = 1e-6


@dataclass(frozen=True)
class ConnectSettings:
    """Shooting, capture and classification thresholds of a scenario."""

    eps: float = 1e-4
    t_max: float = 60.0
    capture_radius: float = CAPTURE_RADIUS
    dwell_min: float = DWELL_MIN
    escape_radius: Optional[float] = None
    chunk: float = 10.0
    rate_tol: float = RATE_TOL
    sigma_low: float = SIGMA_LOW
    sigma_high: float = SIGMA_HIGH
    inj_tol: float = INJ_TOL
    lap_stride: int = 10
    transversality: bool = True

    def __post_init__(self):
        if not 0 <= self.eps:
            raise InputError(f"eps must be nonnegative, got {self.eps}")
        if not (self.t_max > 0 and self.chunk > 0 and self.capture_radius > 0):
            raise InputError("t_max, chunk and capture_radius must be positive")
        if not 0 < self.sigma_low < self.sigma_high:
            raise InputError("need 0 < sigma_low < sigma_high")
        if int(self.lap_stride) < 1:
            raise InputError("lap_stride must be at least 1")


# references along critical elements --------------------------------------------


def _reference(element: CriticalElement, phase: Optional[float]) -> Callable[[float], np.ndarray]:
    """t -> e for equilibria, t -> gamma(phase + t) for orbits."""
    if isinstance(element, PeriodicOrbitRecord):
        a = phase or 0.0
        return lambda t: element.point(a + t)
    profile = element.profile.values
    return lambda t: profile


def _base_state(element: CriticalElement) -> np.ndarray:
    if isinstance(element, PeriodicOrbitRecord):
        return np.array(element.snapshots.states[0])
    return np.array(element.profile.values)


def _differences(
    traj: Trajectory, element: CriticalElement, phase: Optional[float], stride: int = 1
) -> Trajectory:
    ref = _reference(element, phase)
    times = traj.times[::stride]
    if times[-1] != traj.times[-1]:
        times = np.append(times, traj.times[-1])
    states = np.array([traj.state_at(float(t)) - ref(float(t)) for t in times])
    return Trajectory(traj.grid, traj.spec, times, states, traj.cfg)


# shooting ----------------------------------------------------------------------


def shoot_unstable(
    element: CriticalElement,
    direction: Union[Field, np.ndarray],
    eps: float,
    spec: NonlinearitySpec,
    t_max: float = 60.0,
    cfg: FlowConfig = FlowConfig(),
    elements: Sequence[CriticalElement] = (),
    capture_radius: float = CAPTURE_RADIUS,
    dwell_min: float = DWELL_MIN,
    escape_radius: Optional[float] = None,
    chunk: float = 10.0,
    stop_on_capture: bool = False,
) -> Trajectory:
    """Evolve u0 = e + eps * direction (or gamma(0) + eps * direction).

    ``direction`` is scaled to unit sup-norm and must lie in the unstable
    eigenspace of ``element``.

    Args:
        element: Source equilibrium or periodic orbit
        direction: Unstable (generalized) eigenfunction
        eps: Sup-norm size of the initial offset, at most 1e-3 * max(1, |e|)
        spec: Nonlinearity
        t_max: Integration horizon
        cfg: Integrator settings
        elements: Candidate targets for early stopping
        escape_radius: Sup-norm ball the shot must stay in
        chunk: Integration length between capture and escape checks
        stop_on_capture: Stop as soon as an element of ``elements`` captures

    Returns:
        Trajectory starting at t = 0

    Raises:
        PreconditionError: If the direction leaves the unstable eigenspace
        InputError: If eps is negative or too large
        EscapeError: If the shot leaves the escape ball
        BlowupError: Propagated from the integrator
    """
    base = _base_state(element)
    scale = max(1.0, float(np.max(np.abs(base))))
    if eps < 0 or eps > 1e-3 * scale:
        raise InputError(f"eps must lie in [0, {1e-3 * scale:.3g}], got {eps}")
    d = np.asarray(direction.values if isinstance(direction, Field) else direction, dtype=float)
    if not np.max(np.abs(d)) > 0:
        raise InputError("shooting direction is zero")
    d = d / np.max(np.abs(d))

    unstable = element.spectrum.unstable_basis() if element.spectrum is not None else None
    if unstable is None or unstable.shape[1] == 0:
        raise PreconditionError(f"{element.label or element.kind} has no unstable directions")
    unit = d / np.linalg.norm(d)
    leftover = np.linalg.norm(unit - unstable @ (unstable.T @ unit))
    if leftover > 1e-3:
        raise PreconditionError(
            f"direction is not in the unstable eigenspace (residual {leftover:.2e})"
        )

    state = Field(element.grid, base + eps * d)
    targets = [e for e in elements if e is not element]
    traj: Optional[Trajectory] = None
    t = 0.0
    while t < t_max - 1e-12:
        span = min(chunk, t_max - t)
        piece = evolve(state, spec, span, cfg, t_start=t)
        traj = piece if traj is None else traj.concatenate(piece)
        t = piece.t_end
        state = piece.final
        if escape_radius is not None:
            sup = float(np.max(np.abs(piece.states)))
            if sup > escape_radius:
                raise EscapeError(
                    f"shot left the ball of radius {escape_radius:g} (sup-norm {sup:.3g}) by t={t:.4g}"
                )
        if stop_on_capture and targets:
            try:
                capture = detect_capture(traj, targets, capture_radius, dwell_min)
            except NoCaptureError:
                continue
            logger.debug("Shot captured by %s at t=%.4g", capture.element.label, capture.entry_time)
            break
    return traj


# capture -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Capture:
    element: CriticalElement
    entry_time: float
    phase: Optional[float]
    distance: float


def _orbit_phase(orbit: PeriodicOrbitRecord, state: np.ndarray, t: float) -> float:
    """Asymptotic phase a with state ~ gamma(a + t), in (-p/2, p/2]."""
    snaps = orbit.snapshots
    coarse = np.max(np.abs(snaps.states - state[None, :]), axis=1)
    s0 = float(snaps.times[int(np.argmin(coarse))] - snaps.t_start)
    width = max(snaps.spacing, 1e-12)
    res = minimize_scalar(
        lambda s: float(np.max(np.abs(orbit.point(s) - state))),
        bounds=(s0 - width, s0 + width),
        method="bounded",
        options={"xatol": 1e-12},
    )
    p = orbit.period
    a = math.fmod(float(res.x) - t, p)
    if a <= -p / 2:
        a += p
    elif a > p / 2:
        a -= p
    return a


def _distances(
    traj: Trajectory, element: CriticalElement, phase: Optional[float]
) -> np.ndarray:
    ref = _reference(element, phase)
    if isinstance(element, EquilibriumRecord):
        return traj.sup_distance(element.profile.values)
    return np.array(
        [np.max(np.abs(s - ref(float(t)))) for t, s in zip(traj.times, traj.states)]
    )


def detect_capture(
    traj: Trajectory,
    elements: Sequence[CriticalElement],
    capture_radius: float = CAPTURE_RADIUS,
    dwell_min: float = DWELL_MIN,
) -> Capture:
    """First element whose capture ball holds the tail of ``traj`` for at
    least ``dwell_min`` time units.

    Raises:
        NoCaptureError: If no element captures the tail
    """
    for element in elements:
        phase = None
        if isinstance(element, PeriodicOrbitRecord):
            phase = _orbit_phase(element, traj.states[-1], traj.t_end)
        dist = _distances(traj, element, phase)
        if dist[-1] > capture_radius:
            continue
        outside = np.where(dist > capture_radius)[0]
        entry = 0 if outside.size == 0 else int(outside[-1]) + 1
        entry_time = float(traj.times[entry])
        if traj.t_end - entry_time >= dwell_min:
            return Capture(element, entry_time, phase, float(dist[-1]))
    raise NoCaptureError(
        f"no element captures the tail of the trajectory ending at t={traj.t_end:.4g}"
    )


# asymptotic fits ---------------------------------------------------------------


@dataclass(frozen=True)
class AsymptoticFit:
    rate: float
    case: str
    matched_eigenvalue_index: int
    residual: float
    side: str
    window: Tuple[float, float]
    samples: int
    matched_rate: float


def _element_rates(element: CriticalElement) -> np.ndarray:
    spec = element.spectrum
    values = spec.eigenvalues[: spec.trusted]
    if spec.kind == "floquet":
        with np.errstate(divide="ignore"):
            return np.log(np.abs(values)) / element.period
    return values.real


def _window(inside: np.ndarray, from_start: bool) -> np.ndarray:
    idx = np.where(inside)[0]
    if idx.size == 0:
        return idx
    if from_start:
        start = stop = int(idx[0])
        while stop + 1 < inside.size and inside[stop + 1]:
            stop += 1
    else:
        start = stop = int(idx[-1])
        while start > 0 and inside[start - 1]:
            start -= 1
    return np.arange(start, stop + 1)


def _oscillates(directions: np.ndarray) -> bool:
    """True when the normalized differences rotate by more than pi in a plane."""
    if directions.shape[0] > 2000:
        directions = directions[:: int(math.ceil(directions.shape[0] / 2000))]
    _, s, vt = linalg.svd(directions, full_matrices=False)
    if s.size < 2 or s[1] < 0.1 * s[0]:
        return False
    coords = directions @ vt[:2].T
    angle = np.unwrap(np.arctan2(coords[:, 1], coords[:, 0]))
    return bool(abs(angle[-1] - angle[0]) > math.pi)


def _jordan_improves(t: np.ndarray, y: np.ndarray, linear_ssr: float, coef) -> bool:
    tt = t - t[0]

    def residual(p):
        return p[0] + p[1] * tt + np.log(np.abs(1.0 + p[2] * tt) + 1e-300) - y

    res = least_squares(residual, x0=[coef[1], coef[0], 0.0])
    jordan_ssr = float(np.sum(res.fun**2))
    return jordan_ssr * 10.0 <= linear_ssr


def asymptotic_fit(
    traj: Trajectory,
    element: CriticalElement,
    side: str,
    phase: Optional[float] = None,
    band: Tuple[float, float] = FIT_BAND,
    min_samples: int = MIN_SAMPLES,
    rate_tol: float = RATE_TOL,
) -> AsymptoticFit:
    """Fit the exponential rate of v(t) = u(t) - element in the linear regime.

    The window is the first (source side) or last (target side) run of
    samples whose L2 norm lies inside ``band``. The rate is matched to the
    nearest trusted Re(lambda_i), or ln|mu_i| / p for orbits; the rate
    tolerance is relative for |rate| >= 0.1 and absolute below.

    Raises:
        WindowTooShortError: If fewer than ``min_samples`` samples qualify
        NoEigenvalueMatchError: If no trusted eigenvalue is within tolerance
    """
    if side not in ("source", "target"):
        raise InputError(f"side must be 'source' or 'target', got {side!r}")
    ref = _reference(element, phase)
    diffs = np.array([s - ref(float(t)) for t, s in zip(traj.times, traj.states)])
    norms = np.sqrt(np.sum(diffs**2, axis=1) * traj.grid.spacing)
    inside = (norms >= band[0]) & (norms <= band[1])
    idx = _window(inside, from_start=(side == "source"))
    if idx.size < min_samples:
        raise WindowTooShortError(
            f"{side} window has {idx.size} samples in the linear band, need {min_samples}"
        )
    t = traj.times[idx]
    y = np.log(norms[idx])
    coef = np.polyfit(t, y, 1)
    rate = float(coef[0])
    linear_ssr = float(np.sum((np.polyval(coef, t) - y) ** 2))
    residual = math.sqrt(linear_ssr / idx.size)

    rates = _element_rates(element)
    finite = np.where(np.isfinite(rates))[0]
    best = int(finite[np.argmin(np.abs(rates[finite] - rate))])
    allowed = rate_tol * abs(rate) if abs(rate) >= 0.1 else rate_tol

    double = next(
        (
            b.kind
            for b in element.spectrum.pairing
            if best in b.indices and b.kind.startswith("double-real")
        ),
        None,
    )
    if _oscillates(diffs[idx] / np.linalg.norm(diffs[idx], axis=1)[:, None]):
        case = "complex-pair"
    elif double and residual > 1e-6 and _jordan_improves(t, y, linear_ssr, coef):
        case = "double-real-jordan"
    else:
        case = double or "simple-real"

    fit = AsymptoticFit(
        rate=rate,
        case=case,
        matched_eigenvalue_index=best,
        residual=residual,
        side=side,
        window=(float(t[0]), float(t[-1])),
        samples=int(idx.size),
        matched_rate=float(rates[best]),
    )
    if abs(rates[best] - rate) > allowed:
        raise NoEigenvalueMatchError(
            f"{side} rate {rate:.6g} matches no trusted eigenvalue "
            f"(nearest {rates[best]:.6g})",
            fit,
        )
    logger.debug("%s fit: rate %.6g, case %s, eigenvalue #%d", side, rate, case, best)
    return fit


# connection records ------------------------------------------------------------


@dataclass(frozen=True)
class TransversalityVerdict:
    status: str
    dimension: Optional[int]
    bound: Optional[int]
    singular_values: Tuple[float, ...] = ()
    mid_time: Optional[float] = None

    @property
    def passed(self) -> bool:
        return self.status in ("transverse", "not-applicable")


@dataclass(frozen=True, eq=False)
class ConnectionRecord:
    trajectory: Trajectory
    source: CriticalElement
    target: CriticalElement
    source_fit: AsymptoticFit
    target_fit: AsymptoticFit
    lap_source: LapHistory
    lap_target: LapHistory
    transversality: Optional[TransversalityVerdict] = None
    target_phase: Optional[float] = None
    label: str = ""
    source_phase: Optional[float] = None

    @property
    def lap_history(self) -> Tuple[LapHistory, LapHistory]:
        return self.lap_target, self.lap_source

    @property
    def heteroindexed(self) -> bool:
        return not (
            isinstance(self.source, EquilibriumRecord)
            and isinstance(self.target, EquilibriumRecord)
            and self.source.morse_index == self.target.morse_index
        )


def assemble_connection(
    source: CriticalElement,
    trajectory: Trajectory,
    elements: Sequence[CriticalElement],
    settings: ConnectSettings = ConnectSettings(),
) -> ConnectionRecord:
    """Capture, asymptotic fits, lap histories and (optionally) the
    transversality verdict of one shot.

    Raises:
        NoCaptureError, WindowTooShortError, NoEigenvalueMatchError
    """
    candidates = [e for e in elements if e is not source]
    capture = detect_capture(trajectory, candidates, settings.capture_radius, settings.dwell_min)
    source_phase = None
    if isinstance(source, PeriodicOrbitRecord):
        source_phase = _orbit_phase(source, trajectory.states[0], trajectory.t_start)
    source_fit = asymptotic_fit(
        trajectory, source, "source", source_phase, rate_tol=settings.rate_tol
    )
    target_fit = asymptotic_fit(
        trajectory, capture.element, "target", capture.phase, rate_tol=settings.rate_tol
    )
    stride = int(settings.lap_stride)
    lap_source = track_lap(_differences(trajectory, source, source_phase, stride))
    lap_target = track_lap(_differences(trajectory, capture.element, capture.phase, stride))
    label = f"{source.label}->{capture.element.label}"
    record = ConnectionRecord(
        trajectory,
        source,
        capture.element,
        source_fit,
        target_fit,
        lap_source,
        lap_target,
        None,
        capture.phase,
        label,
        source_phase,
    )
    if settings.transversality:
        verdict = transversality_dimension_check(
            record,
            capture_radius=settings.capture_radius,
            sigma_low=settings.sigma_low,
            sigma_high=settings.sigma_high,
        )
        record = replace(record, transversality=verdict)
    logger.info("Connection %s assembled (captured at t=%.4g)", label, capture.entry_time)
    return record


# inequalities ------------------------------------------------------------------


@dataclass(frozen=True)
class ClauseResult:
    name: str
    passed: bool
    measured: Optional[int]
    bound: Optional[int]
    detail: str = ""


@dataclass(frozen=True)
class InequalityVerdict:
    passed: bool
    clauses: Tuple[ClauseResult, ...]
    inconsistent: bool

    @property
    def failures(self) -> List[ClauseResult]:
        return [c for c in self.clauses if not c.passed]


def _reference_zero_number(conn: ConnectionRecord) -> Optional[int]:
    """z(target - source) for the sandwich; None for orbit-to-orbit."""
    src, tgt = conn.source, conn.target
    if isinstance(src, PeriodicOrbitRecord) and isinstance(tgt, PeriodicOrbitRecord):
        return None
    if isinstance(tgt, PeriodicOrbitRecord):
        diff = tgt.point(conn.target_phase or 0.0) - src.profile.values
    elif isinstance(src, PeriodicOrbitRecord):
        diff = tgt.profile.values - src.point(conn.source_phase or 0.0)
    else:
        diff = tgt.profile.values - src.profile.values
    try:
        return zero_number(Field(conn.trajectory.grid, diff))
    except DegenerateFieldError:
        return None


def morse_index_clause(source: CriticalElement, target: CriticalElement) -> ClauseResult:
    """Morse-index inequality between the endpoints of a connection.

    - equilibrium -> equilibrium: i(e+) <= i(e-), equal only for even indices
    - equilibrium -> orbit: i(orbit) + 1 <= i(e-), + 2 for even positive i(orbit)
    - orbit -> equilibrium: i(e+) <= i(orbit), i(e+) + 1 <= i(orbit) for odd i(orbit)
    - orbit -> orbit: strict decrease
    """
    i_src, i_tgt = source.morse_index, target.morse_index
    src_orbit = isinstance(source, PeriodicOrbitRecord)
    tgt_orbit = isinstance(target, PeriodicOrbitRecord)
    if src_orbit and tgt_orbit:
        bound = i_src - 1
        return ClauseResult(
            "morse-index", i_tgt <= bound, i_tgt, bound, "i(target orbit) < i(source orbit)"
        )
    if tgt_orbit:
        step = 2 if i_tgt % 2 == 0 and i_tgt > 0 else 1
        bound = i_src - step
        return ClauseResult(
            "morse-index", i_tgt <= bound, i_tgt, bound, f"i(orbit) + {step} <= i(e-)"
        )
    if src_orbit:
        bound = i_src - 1 if i_src % 2 else i_src
        return ClauseResult("morse-index", i_tgt <= bound, i_tgt, bound, f"i(e+) <= {bound}")
    ok = i_tgt < i_src or (i_tgt == i_src and i_src % 2 == 0)
    return ClauseResult(
        "morse-index", ok, i_tgt, i_src, "i(e+) <= i(e-), equal only for even indices"
    )


def verify_connection_inequalities(conn: ConnectionRecord) -> InequalityVerdict:
    """Every applicable zero-number and Morse-index inequality for ``conn``.

    Source clauses bound z(u(t) - source) from above, target clauses bound
    z(u(t) - target) from below, the sandwich places z(target - source)
    between the two histories at every sample, and the index clause compares
    the Morse indices according to the endpoint types.
    """
    clauses: List[ClauseResult] = []
    src, tgt = conn.source, conn.target
    i_src, i_tgt = src.morse_index, tgt.morse_index
    src_orbit = isinstance(src, PeriodicOrbitRecord)
    tgt_orbit = isinstance(tgt, PeriodicOrbitRecord)

    z_src = conn.lap_source.z_values
    if z_src.size:
        bound = i_src - 1 if i_src % 2 else i_src
        measured = int(z_src.max())
        clauses.append(
            ClauseResult(
                "source-zero-bound",
                measured <= bound,
                measured,
                bound,
                f"z(u - {'gamma' if src_orbit else 'e'}-) <= {bound}",
            )
        )

    z_tgt = conn.lap_target.z_values
    if z_tgt.size:
        if tgt_orbit:
            bound = i_tgt + 1 if i_tgt % 2 else i_tgt + 2
        else:
            bound = i_tgt + 1 if i_tgt % 2 else i_tgt
        measured = int(z_tgt.min())
        clauses.append(
            ClauseResult(
                "target-zero-bound",
                measured >= bound,
                measured,
                bound,
                f"z(u - {'gamma' if tgt_orbit else 'e'}+) >= {bound}",
            )
        )

    z_ref = _reference_zero_number(conn)
    if z_ref is not None and z_src.size and z_tgt.size:
        low, high = int(z_tgt.max()), int(z_src.min())
        clauses.append(
            ClauseResult(
                "sandwich",
                low <= z_ref <= high,
                z_ref,
                None,
                f"z(u - target) <= {z_ref} <= z(u - source) at every sample "
                f"(max below {low}, min above {high})",
            )
        )

    clauses.append(morse_index_clause(src, tgt))

    inconsistent = conn.lap_source.inconsistent or conn.lap_target.inconsistent
    return InequalityVerdict(all(c.passed for c in clauses), tuple(clauses), inconsistent)


# injectivity -------------------------------------------------------------------


@dataclass(frozen=True)
class Collision:
    x: float
    t0: float
    t1: float
    distance: float


@dataclass(frozen=True)
class InjectivityVerdict:
    passed: bool
    report_only: bool
    collisions: Tuple[Collision, ...]
    endpoint_distance: float
    core_window: Tuple[float, float]


def _core_indices(conn: ConnectionRecord, radius: float) -> np.ndarray:
    traj = conn.trajectory
    far_src = _distances(traj, conn.source, conn.source_phase) > radius
    far_tgt = _distances(traj, conn.target, conn.target_phase) > radius
    return np.where(far_src & far_tgt)[0]


def injectivity_check(
    conn: ConnectionRecord,
    inj_tol: float = INJ_TOL,
    capture_radius: float = CAPTURE_RADIUS,
    min_separation: float = 1.0,
    x_stride: int = 1,
) -> InjectivityVerdict:
    """Check that (x, t) -> (x, u, u_x) is one to one on the core of ``conn``.

    The core is the part of the trajectory outside both capture balls. For
    fixed x, points (u, u_x) at times at least ``min_separation`` apart
    closer than ``inj_tol`` are reported as collisions. The endpoint clause
    requires (u, u_x)(x, t) to differ from the endpoint profiles everywhere
    on the core. Connections other than equilibria of equal even index run
    in report-only mode.
    """
    src, tgt = conn.source, conn.target
    report_only = not (
        isinstance(src, EquilibriumRecord)
        and isinstance(tgt, EquilibriumRecord)
        and src.morse_index == tgt.morse_index
        and src.morse_index % 2 == 0
    )
    traj = conn.trajectory
    core = _core_indices(conn, capture_radius)
    if report_only and core.size == 0:
        core = np.arange(len(traj))
    if core.size == 0:
        return InjectivityVerdict(not report_only, report_only, (), math.inf, (0.0, 0.0))

    times = traj.times[core]
    u = traj.states[core]
    ux = derivative_values(traj.grid, u, 1)
    collisions: List[Collision] = []
    for j in range(0, traj.grid.n_points, x_stride):
        points = np.column_stack([u[:, j], ux[:, j]])
        tree = cKDTree(points)
        for a, b in sorted(tree.query_pairs(inj_tol)):
            if abs(times[b] - times[a]) >= min_separation:
                collisions.append(
                    Collision(
                        float(traj.grid.x[j]),
                        float(times[a]),
                        float(times[b]),
                        float(np.linalg.norm(points[a] - points[b])),
                    )
                )

    endpoint_distance = math.inf
    for element, phase in ((src, conn.source_phase), (tgt, conn.target_phase)):
        ref = _reference(element, phase)
        for row, t in enumerate(times):
            e = ref(float(t))
            ex = derivative_values(traj.grid, e, 1)
            d = np.sqrt((u[row] - e) ** 2 + (ux[row] - ex) ** 2)
            endpoint_distance = min(endpoint_distance, float(d.min()))

    passed = not collisions and endpoint_distance > 0.0
    if collisions:
        log = logger.info if report_only else logger.warning
        log("%d near-collisions in (u, u_x) along %s", len(collisions), conn.label)
    return InjectivityVerdict(
        passed,
        report_only,
        tuple(collisions),
        endpoint_distance,
        (float(times[0]), float(times[-1])),
    )


# transversality ----------------------------------------------------------------


@dataclass(frozen=True)
class IntersectionDimension:
    dimension: int
    bound: Optional[int]
    singular_values: Tuple[float, ...]
    status: str


def intersection_dimension(
    frame: np.ndarray,
    complement: np.ndarray,
    bound: Optional[int] = None,
    sigma_low: float = SIGMA_LOW,
    sigma_high: float = SIGMA_HIGH,
) -> IntersectionDimension:
    """dim(span(frame) cap ker(complement^T)) by a singular-value rank test.

    Both bases are orthonormalized first. Singular values of complement^T
    frame above ``sigma_high`` count toward the rank; any value inside
    (sigma_low, sigma_high) makes the result indeterminate.
    """
    frame = np.asarray(frame, dtype=float)
    complement = np.asarray(complement, dtype=float)
    k = frame.shape[1]
    if k:
        frame = linalg.orth(frame)
    if complement.shape[1] == 0 or k == 0:
        sigma = np.zeros(0)
    else:
        complement = linalg.orth(complement)
        sigma = linalg.svdvals(complement.T @ frame)
    rank = int(np.count_nonzero(sigma >= sigma_high))
    dimension = frame.shape[1] - rank
    if np.any((sigma > sigma_low) & (sigma < sigma_high)):
        status = "indeterminate"
    elif bound is None:
        status = "not-applicable"
    else:
        status = "transverse" if dimension <= bound else "not-transverse"
    return IntersectionDimension(dimension, bound, tuple(float(s) for s in sigma), status)


def _mid_time(conn: ConnectionRecord, capture_radius: float) -> float:
    traj = conn.trajectory
    dist = _distances(traj, conn.target, conn.target_phase)
    hits = np.where(dist <= 10.0 * capture_radius)[0]
    if hits.size == 0:
        raise PreconditionError("trajectory never comes within 10 capture radii of its target")
    t = float(traj.times[hits[0]])
    if isinstance(conn.target, PeriodicOrbitRecord):
        p = conn.target.period
        t += math.fmod(-(conn.target_phase or 0.0) - t, p) % p
        if t > traj.t_end:
            raise PreconditionError("trajectory ends before the target phase returns to zero")
    return t


def transversality_dimension_check(
    conn: ConnectionRecord,
    capture_radius: float = CAPTURE_RADIUS,
    sigma_low: float = SIGMA_LOW,
    sigma_high: float = SIGMA_HIGH,
) -> TransversalityVerdict:
    """Evolve the source's unstable frame along ``conn`` and count its
    intersection with the target's stable directions.

    The frame is re-orthonormalized every unit of time up to the first time
    the trajectory is within 10 capture radii of the target (moved forward
    to target phase zero for orbits). For an orbit source the frame also
    carries gamma_t at the source phase, so it spans i(source) + 1
    directions, and the bound is raised by one to match. The verdict is
    numerical at the current resolution.
    """
    src, tgt = conn.source, conn.target
    basis = src.spectrum.unstable_basis()
    if basis.shape[1] == 0:
        return TransversalityVerdict("not-applicable", None, None)
    if isinstance(src, PeriodicOrbitRecord):
        velocity = src.flow_direction(conn.source_phase)
        basis = linalg.orth(np.column_stack([basis, velocity]), rcond=1e-8)
    traj = conn.trajectory
    t_mid = _mid_time(conn, capture_radius)

    frame = basis.T
    t = traj.t_start
    while t < t_mid - 1e-12:
        t_next = min(t + 1.0, t_mid)
        frame = propagate_tangent(traj, frame, t, t_next)
        frame = linalg.qr(frame.T, mode="economic")[0].T
        t = t_next

    bound = src.morse_index - tgt.morse_index
    if isinstance(src, PeriodicOrbitRecord):
        bound += 1
    result = intersection_dimension(
        frame.T, tgt.spectrum.left_unstable_basis(), bound, sigma_low, sigma_high
    )
    if result.status != "transverse":
        logger.warning(
            "Connection %s is %s: intersection dimension %d, bound %d",
            conn.label,
            result.status,
            result.dimension,
            bound,
        )
    return TransversalityVerdict(
        result.status, result.dimension, bound, result.singular_values, t_mid
    )


# graph -------------------------------------------------------------------------


@dataclass(frozen=True)
class GraphEdge:
    source: str
    target: str
    i_source: int
    i_target: int
    rule: str
    passed: bool


@dataclass(frozen=True)
class GraphReport:
    nodes: Dict[str, int]
    edges: Tuple[GraphEdge, ...]
    cycles: Tuple[Tuple[str, ...], ...]
    longest_chain: Tuple[str, ...]
    chain_bound: int
    non_hyperbolic: Tuple[str, ...] = field(default=())

    @property
    def acyclic(self) -> bool:
        return not self.cycles

    @property
    def chain_length(self) -> int:
        return max(len(self.longest_chain) - 1, 0)

    @property
    def rule_violations(self) -> List[GraphEdge]:
        return [e for e in self.edges if not e.passed]

    @property
    def passed(self) -> bool:
        return self.acyclic and not self.rule_violations and self.chain_length <= self.chain_bound


def _edge_rule(source: CriticalElement, target: CriticalElement) -> Tuple[str, bool]:
    i_s, i_t = source.morse_index, target.morse_index
    if isinstance(source, EquilibriumRecord):
        return "strict", i_t < i_s
    if isinstance(target, PeriodicOrbitRecord):
        return "strict", i_t < i_s
    return "non-strict", i_t <= i_s


def connection_graph(
    elements: Sequence[CriticalElement],
    connections: Sequence[Union[ConnectionRecord, Tuple[CriticalElement, CriticalElement]]],
) -> GraphReport:
    """Directed graph of connections with the index rule per edge, cycles
    and the longest chain.

    Edges out of an equilibrium and between orbits need a strict index
    decrease; orbit-to-equilibrium edges allow equality. Chains are bounded
    by twice the largest index.
    """
    nodes = {e.label: e.morse_index for e in elements}
    non_hyperbolic = tuple(e.label for e in elements if not e.spectrum.hyperbolic)
    for label in non_hyperbolic:
        logger.warning("Element %s is not hyperbolic; the index rules may not apply", label)

    edges: List[GraphEdge] = []
    adjacency: Dict[str, List[str]] = {label: [] for label in nodes}
    for conn in connections:
        src, tgt = (conn.source, conn.target) if isinstance(conn, ConnectionRecord) else conn
        for element in (src, tgt):
            nodes.setdefault(element.label, element.morse_index)
            adjacency.setdefault(element.label, [])
        rule, ok = _edge_rule(src, tgt)
        edges.append(GraphEdge(src.label, tgt.label, src.morse_index, tgt.morse_index, rule, ok))
        if tgt.label not in adjacency[src.label]:
            adjacency[src.label].append(tgt.label)

    cycles: List[Tuple[str, ...]] = []
    state: Dict[str, int] = {}
    stack: List[str] = []

    def visit(node: str) -> None:
        state[node] = 1
        stack.append(node)
        for nxt in adjacency[node]:
            if state.get(nxt) == 1:
                cycles.append(tuple(stack[stack.index(nxt):]) + (nxt,))
            elif nxt not in state:
                visit(nxt)
        stack.pop()
        state[node] = 2

    for node in sorted(adjacency):
        if node not in state:
            visit(node)

    longest: Tuple[str, ...] = ()
    if not cycles:
        memo: Dict[str, Tuple[str, ...]] = {}

        def chain_from(node: str) -> Tuple[str, ...]:
            if node not in memo:
                tails = [chain_from(n) for n in sorted(adjacency[node])]
                memo[node] = (node,) + max(tails, key=len, default=())
            return memo[node]

        for node in sorted(adjacency):
            candidate = chain_from(node)
            if len(candidate) > len(longest):
                longest = candidate
    else:
        for cycle in cycles:
            logger.warning("Connection graph has a cycle: %s", " -> ".join(cycle))

    max_index = max(nodes.values(), default=0)
    return GraphReport(
        nodes=dict(sorted(nodes.items())),
        edges=tuple(edges),
        cycles=tuple(cycles),
        longest_chain=longest,
        chain_bound=2 * max_index,
        non_hyperbolic=non_hyperbolic,
    )
