"""
Zero numbers (lap numbers) of periodic fields, multiple-zero detection and
monotonicity tracking of z(v(t)) along sampled trajectories.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from sturmflow.errors import DegenerateFieldError
from sturmflow.grid import TWO_PI, Field, Grid
from sturmflow.semiflow import Trajectory, rhs

logger = logging.getLogger(__name__)

TOL_ZERO = 1e-9
MULTIPLE_TOL = 1e-6
ABSOLUTE_FLOOR = 1e-12
NOISE_FLOOR = 1e-11
DT_MIN = 1e-8

# sub-points evaluated inside each flagged grid interval
_SUBSAMPLES = 8
# upsampling factor for the multiple-zero scan
_SCAN_FACTOR = 16
# sub-times scanned inside a drop bracket before refinement
_DROP_SCAN = 16


class ZeroCount(NamedTuple):
    count: int
    low_confidence: bool


def _trig_eval(coeffs: np.ndarray, n: int, xs: np.ndarray, derivative: int = 0):
    """Evaluate the trigonometric interpolant with rfft ``coeffs`` at ``xs``."""
    k = np.arange(coeffs.size)
    weights = np.full(coeffs.size, 2.0)
    weights[0] = 1.0
    weights[-1] = 1.0
    c = coeffs * (1j * k) ** derivative * weights
    if derivative % 2:
        c[-1] = 0.0
    phase = np.exp(1j * np.outer(xs, k))
    return np.real(phase @ c) / n


def _slope(coeffs: np.ndarray, n: int) -> np.ndarray:
    dc = coeffs * 1j * np.arange(coeffs.size)
    dc[-1] = 0.0
    return np.fft.irfft(dc, n=n)


def _interval_points(coeffs: np.ndarray, n: int, j: int) -> List[Tuple[float, float]]:
    """Interior sub-points of grid interval ``j`` plus every interior extremum."""
    xs = (TWO_PI / n) * (j + np.arange(_SUBSAMPLES + 1) / _SUBSAMPLES)
    vals = _trig_eval(coeffs, n, xs)
    ders = _trig_eval(coeffs, n, xs, 1)
    points = list(zip(xs[1:-1].tolist(), vals[1:-1].tolist()))

    def slope_at(x):
        return _trig_eval(coeffs, n, np.array([x]), 1)[0]

    for a in np.where(ders[:-1] * ders[1:] < 0)[0]:
        xe = brentq(slope_at, xs[a], xs[a + 1], xtol=1e-14)
        points.append((xe, float(_trig_eval(coeffs, n, np.array([xe]))[0])))
    points.sort()
    return points


def _refined_cycle(values: np.ndarray, scale: float) -> np.ndarray:
    """Grid samples in circular order with sub-points inside unclear intervals.

    An interval is unclear when it holds a sign change, a small sample or an
    extremum of the interpolant. Extrema are inserted exactly so that two
    zeros closing in on each other stay visible until they merge.
    """
    n = values.size
    coeffs = np.fft.rfft(values)
    slope = _slope(coeffs, n)
    nxt = np.roll(values, -1)
    flagged = (
        (values * nxt < 0)
        | (np.minimum(np.abs(values), np.abs(nxt)) < 1e-3 * scale)
        | (slope * np.roll(slope, -1) <= 0)
    )
    if not flagged.any():
        return values
    pieces = []
    start = 0
    for j in np.where(flagged)[0]:
        pieces.append(values[start : j + 1])
        pieces.append(np.array([v for _, v in _interval_points(coeffs, n, j)]))
        start = j + 1
    pieces.append(values[start:])
    return np.concatenate(pieces)


def count_zeros(v: Field, tol_zero: float = TOL_ZERO) -> ZeroCount:
    """Strict sign changes around the circle, with a confidence flag.

    Unclear grid intervals are resampled from the global trigonometric
    interpolant, not from an 8-point local fit.

    Args:
        v: Field to examine
        tol_zero: Samples with |v| <= tol_zero * max|v| count as zero

    Returns:
        ZeroCount(count, low_confidence)

    Raises:
        DegenerateFieldError: If max|v| is below the absolute floor
    """
    values = np.asarray(v.values, dtype=float)
    scale = float(np.max(np.abs(values)))
    if not np.isfinite(scale) or scale < ABSOLUTE_FLOOR:
        raise DegenerateFieldError(
            f"max|v| = {scale:.3e} is below the degeneracy floor {ABSOLUTE_FLOOR:.0e}"
        )
    samples = _refined_cycle(values, scale)
    signs = np.sign(samples[np.abs(samples) > tol_zero * scale])
    count = int(np.count_nonzero(signs != np.roll(signs, -1)))
    near = (np.abs(samples) > tol_zero * scale) & (np.abs(samples) < 10 * tol_zero * scale)
    low_confidence = bool(scale < 1e3 * ABSOLUTE_FLOOR or near.any())
    return ZeroCount(count, low_confidence)


def zero_number(v: Field, tol_zero: float = TOL_ZERO) -> int:
    """The (even) number of strict sign changes of v on S^1."""
    return count_zeros(v, tol_zero).count


def _scan(values: np.ndarray, scale: float) -> Tuple[np.ndarray, np.ndarray, float]:
    """rfft coefficients and (v^2 + v_x^2) / scale^2 on an upsampled grid."""
    n = values.size
    coeffs = np.fft.rfft(values)
    m = n * _SCAN_FACTOR
    padded = np.zeros(m // 2 + 1, dtype=complex)
    padded[: coeffs.size] = coeffs
    # the Nyquist coefficient becomes an ordinary mode on the finer grid
    padded[coeffs.size - 1] *= 0.5
    k = np.arange(padded.size)
    fine = np.fft.irfft(padded, n=m) * (m / n)
    fine_dx = np.fft.irfft(padded * 1j * k, n=m) * (m / n)
    g = (fine / scale) ** 2 + (fine_dx / scale) ** 2
    return coeffs, g, TWO_PI / m


def _refine_minimum(
    coeffs: np.ndarray, n: int, scale: float, x0: float, step: float
) -> Tuple[float, float]:
    def objective(x):
        val = _trig_eval(coeffs, n, np.array([x]))[0]
        der = _trig_eval(coeffs, n, np.array([x]), 1)[0]
        return (val / scale) ** 2 + (der / scale) ** 2

    res = minimize_scalar(
        objective, bounds=(x0 - step, x0 + step), method="bounded",
        options={"xatol": 1e-12},
    )
    return float(np.mod(res.x, TWO_PI)), float(res.fun)


def multiple_zeros(
    v: Field, tol: float = MULTIPLE_TOL, relative: bool = True
) -> List[float]:
    """Locations where v and v_x vanish together.

    Candidates are the local minima of v^2 + v_x^2 on a 16x upsampled grid,
    refined with the global trigonometric interpolant (exact for the
    band-limited fields the flow produces) rather than an 8-point local one.

    Args:
        v: Field to examine
        tol: Threshold on |v| and |v_x| after refinement
        relative: Scale ``tol`` by max|v| (the default, so that differences
            u - e of any size are judged alike); False applies it as given

    Returns:
        Sorted x-locations in [0, 2*pi); empty when every zero is simple
    """
    values = np.asarray(v.values, dtype=float)
    n = values.size
    scale = float(np.max(np.abs(values)))
    if not np.isfinite(scale) or scale < ABSOLUTE_FLOOR:
        raise DegenerateFieldError(f"max|v| = {scale:.3e} is below the degeneracy floor")
    threshold = tol * scale if relative else tol
    coeffs, g, step = _scan(values, scale)
    minima = np.where((g <= np.roll(g, 1)) & (g < np.roll(g, -1)) & (g < 0.05))[0]

    found: List[float] = []
    for i in minima:
        x, _ = _refine_minimum(coeffs, n, scale, i * step, step)
        val = abs(_trig_eval(coeffs, n, np.array([x]))[0])
        der = abs(_trig_eval(coeffs, n, np.array([x]), 1)[0])
        if val <= threshold and der <= threshold:
            if not any(abs(np.angle(np.exp(1j * (x - y)))) < 2 * step for y in found):
                found.append(x)
    return sorted(found)


def _collision_residual(values: np.ndarray) -> float:
    """min over x of (v^2 + v_x^2) / max|v|^2; zero exactly at a multiple zero."""
    scale = float(np.max(np.abs(values)))
    if scale < ABSOLUTE_FLOOR:
        return 0.0
    coeffs, g, step = _scan(values, scale)
    _, value = _refine_minimum(coeffs, values.size, scale, int(np.argmin(g)) * step, step)
    return value


@dataclass(frozen=True)
class DropEvent:
    t_lo: float
    t_hi: float
    time: Optional[float]
    locations: Tuple[float, ...]
    z_before: int
    z_after: int


@dataclass
class LapHistory:
    """z(v(t)) along a trajectory of differences (or tangent solutions)."""

    times: np.ndarray
    z_values: np.ndarray
    drop_events: List[DropEvent] = field(default_factory=list)
    inconsistent: bool = False
    low_confidence_times: List[float] = field(default_factory=list)
    violations: List[Tuple[float, float, int, int]] = field(default_factory=list)
    carried_times: List[float] = field(default_factory=list)

    @property
    def monotone(self) -> bool:
        return not self.violations and bool(np.all(np.diff(self.z_values) <= 0))

    @property
    def all_drops_bracketed(self) -> bool:
        return all(e.time is not None for e in self.drop_events)

    def z_at(self, t: float) -> int:
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return int(self.z_values[max(i, 0)])

    def forged(self, z: int) -> "LapHistory":
        """A copy with every count replaced by ``z``."""
        return replace(self, z_values=np.full_like(self.z_values, z))


def _locate_drop(
    traj: Trajectory,
    t_lo: float,
    t_hi: float,
    dt_min: float,
    multiple_tol: float,
) -> Tuple[Optional[float], Tuple[float, ...]]:
    """Find the instant in [t_lo, t_hi] where the difference has a multiple zero.

    The collision residual is scanned on sub-times of the bracket and its
    smallest value refined to ``dt_min``; the refined state must then pass
    :func:`multiple_zeros`.
    """

    def residual(t):
        return _collision_residual(traj.state_at(t))

    ts = np.linspace(t_lo, t_hi, _DROP_SCAN + 1)
    scores = [residual(t) for t in ts]
    i = int(np.argmin(scores))
    lo, hi = ts[max(i - 1, 0)], ts[min(i + 1, ts.size - 1)]
    res = minimize_scalar(residual, bounds=(lo, hi), method="bounded", options={"xatol": dt_min})
    t_star = float(res.x) if res.fun <= scores[i] else float(ts[i])
    try:
        locs = multiple_zeros(Field(traj.grid, traj.state_at(t_star)), multiple_tol)
    except DegenerateFieldError:
        return None, ()
    return (t_star, tuple(locs)) if locs else (None, ())


def track_lap(
    diff_trajectory: Trajectory,
    dt_min: float = DT_MIN,
    multiple_tol: float = MULTIPLE_TOL,
    noise_floor: float = NOISE_FLOOR,
) -> LapHistory:
    """Track the zero number along every stored sample of ``diff_trajectory``.

    A sample carrying a multiple zero is not counted; the previous value is
    carried forward. Samples whose sup-norm sits below ``noise_floor`` are
    skipped and listed as low confidence. Each observed decrease must be
    explained by a multiple zero inside its bracket; failure marks the history
    inconsistent.
    Increases are recorded as violations.
    """
    times: List[float] = []
    zs: List[int] = []
    history = LapHistory(np.array([]), np.array([], dtype=int))
    last_t: Optional[float] = None
    last_z: Optional[int] = None

    for t, values in zip(diff_trajectory.times, diff_trajectory.states):
        t = float(t)
        v = Field(diff_trajectory.grid, values)
        if v.sup_norm() < noise_floor:
            history.low_confidence_times.append(t)
            continue
        counted = count_zeros(v)
        if counted.low_confidence:
            history.low_confidence_times.append(t)
        if multiple_zeros(v, multiple_tol) and last_z is not None:
            history.carried_times.append(t)
            times.append(t)
            zs.append(last_z)
            continue

        z = counted.count
        if last_z is not None and z < last_z:
            when, locs = _locate_drop(
                diff_trajectory, last_t, t, dt_min, multiple_tol
            )
            history.drop_events.append(DropEvent(last_t, t, when, locs, last_z, z))
            if when is None:
                history.inconsistent = True
                logger.warning(
                    "Zero number dropped %d -> %d in [%.6g, %.6g] with no multiple zero",
                    last_z,
                    z,
                    last_t,
                    t,
                )
        elif last_z is not None and z > last_z:
            history.violations.append((last_t, t, last_z, z))
            logger.warning(
                "Zero number increased %d -> %d in [%.6g, %.6g]", last_z, z, last_t, t
            )
        times.append(t)
        zs.append(z)
        last_t, last_z = t, z

    history.times = np.array(times)
    history.z_values = np.array(zs, dtype=int)
    return history


def difference_trajectory(a: Trajectory, b: Trajectory) -> Trajectory:
    """u_a(t) - u_b(t) on the samples of ``a`` (``b`` interpolated)."""
    states = np.array([s - b.state_at(float(t)) for t, s in zip(a.times, a.states)])
    return replace(a, states=states)


def velocity_history(traj: Trajectory, **kwargs) -> LapHistory:
    """Lap history of u_t along ``traj``."""
    states = np.array([rhs(traj.spec, traj.grid, s) for s in traj.states])
    return track_lap(replace(traj, states=states), **kwargs)


@dataclass(frozen=True)
class OrbitZeroCheck:
    z_values: Tuple[int, ...]
    constant: bool
    multiple_zero_times: Tuple[float, ...]

    @property
    def passed(self) -> bool:
        return self.constant and not self.multiple_zero_times


def orbit_equilibrium_zeros(
    profile: Field, orbit: Trajectory, stride: int = 1
) -> OrbitZeroCheck:
    """z(e - gamma(t)) over the stored samples of one period."""
    zs, multiple = [], []
    for t, state in zip(orbit.times[::stride], orbit.states[::stride]):
        diff = Field(orbit.grid, profile.values - state)
        zs.append(zero_number(diff))
        if multiple_zeros(diff):
            multiple.append(float(t))
    return OrbitZeroCheck(tuple(zs), len(set(zs)) <= 1, tuple(multiple))


def fine_grid_count(v: Field, factor: int = 64) -> int:
    """Reference sign-change count on a heavily upsampled grid."""
    grid = Grid(v.grid.n_points * factor)
    coeffs = np.fft.rfft(v.values)
    values = _trig_eval(coeffs, v.grid.n_points, grid.x)
    scale = np.max(np.abs(values))
    signs = np.sign(values[np.abs(values) > TOL_ZERO * scale])
    return int(np.count_nonzero(signs != np.roll(signs, -1)))
