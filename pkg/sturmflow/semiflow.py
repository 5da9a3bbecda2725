"""
Time integration of u_t = u_xx + f(x, u, u_x) on the circle, of its
linearization along a stored trajectory and of the adjoint linear flow.

Diffusion is handled exactly in Fourier space (ETDRK4) or implicitly
(IMEX-BDF2); the nonlinearity is explicit. The tangent flow always uses
ETDRK4 with linearly interpolated coefficients, and the adjoint step is
the exact transpose of the tangent step.
"""

import logging
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import List, NamedTuple, Optional, Tuple, Union

import numpy as np

from sturmflow.errors import BlowupError, InputError
from sturmflow.grid import (
    Field,
    Grid,
    LinearizedTerm,
    NonlinearitySpec,
    derivative_values,
    fourier_apply,
    nonlinear_term,
)

logger = logging.getLogger(__name__)

SCHEMES = ("etdrk4", "imex-bdf2")

# contour points for the ETD coefficient integrals
_CONTOUR_POINTS = 32


@dataclass(frozen=True)
class FlowConfig:
    """Integrator settings shared by every command of a scenario."""

    dt: float = 1e-3
    scheme: str = "etdrk4"
    blowup_bound: float = 1e8
    save_every: int = 1
    tangent_bound: float = 1e12

    def __post_init__(self):
        if not self.dt > 0:
            raise InputError(f"dt must be positive, got {self.dt}")
        if self.scheme not in SCHEMES:
            raise InputError(
                f"Unsupported scheme: {self.scheme} (expected one of {', '.join(SCHEMES)})"
            )
        if not self.blowup_bound > 0 or not self.tangent_bound > 0:
            raise InputError("blowup bounds must be positive")
        if int(self.save_every) < 1:
            raise InputError("save_every must be at least 1")


def step_count(span: float, dt: float) -> int:
    """Even number of steps of size <= dt covering ``span``."""
    return max(2, 2 * math.ceil(span / (2.0 * dt) - 1e-9))


def rhs(spec: NonlinearitySpec, grid: Grid, values: np.ndarray) -> np.ndarray:
    """u_xx + Pi f(x, u, u_x)."""
    return derivative_values(grid, values, 2) + nonlinear_term(spec, grid, values)


class EtdCoefficients(NamedTuple):
    e: np.ndarray
    e2: np.ndarray
    q: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray


@lru_cache(maxsize=64)
def etd_coefficients(grid: Grid, h: float) -> EtdCoefficients:
    """ETDRK4 multipliers for L = d^2/dx^2, evaluated by contour averages."""
    hl = h * grid.second_derivative_symbol
    roots = np.exp(1j * np.pi * (np.arange(1, _CONTOUR_POINTS + 1) - 0.5) / _CONTOUR_POINTS)
    lr = hl[:, None] + roots[None, :]
    exp_lr = np.exp(lr)
    q = h * np.real(np.mean((np.exp(lr / 2.0) - 1.0) / lr, axis=1))
    f1 = h * np.real(
        np.mean((-4.0 - lr + exp_lr * (4.0 - 3.0 * lr + lr**2)) / lr**3, axis=1)
    )
    f2 = h * np.real(np.mean((2.0 + lr + exp_lr * (lr - 2.0)) / lr**3, axis=1))
    f3 = h * np.real(
        np.mean((-4.0 - 3.0 * lr - lr**2 + exp_lr * (4.0 - lr)) / lr**3, axis=1)
    )
    return EtdCoefficients(np.exp(hl), np.exp(hl / 2.0), q, f1, f2, f3)


class _Etdrk4Stepper:
    def __init__(self, grid: Grid, spec: NonlinearitySpec, h: float):
        self.grid = grid
        self.spec = spec
        self.c = etd_coefficients(grid, h)

    def _n(self, u: np.ndarray) -> np.ndarray:
        return np.fft.rfft(nonlinear_term(self.spec, self.grid, u))

    def __call__(self, u: np.ndarray) -> np.ndarray:
        c, n = self.c, self.grid.n_points
        v = np.fft.rfft(u)
        nv = self._n(u)
        a = c.e2 * v + c.q * nv
        na = self._n(np.fft.irfft(a, n=n))
        b = c.e2 * v + c.q * na
        nb = self._n(np.fft.irfft(b, n=n))
        cc = c.e2 * a + c.q * (2.0 * nb - nv)
        nc = self._n(np.fft.irfft(cc, n=n))
        v_new = c.e * v + c.f1 * nv + 2.0 * c.f2 * (na + nb) + c.f3 * nc
        return np.fft.irfft(v_new, n=n)


class _ImexBdf2Stepper:
    """Second-order backward differences; the first step is IMEX Euler."""

    def __init__(self, grid: Grid, spec: NonlinearitySpec, h: float):
        self.grid = grid
        self.spec = spec
        self.h = h
        lam = grid.second_derivative_symbol
        self.euler = 1.0 / (1.0 - h * lam)
        self.bdf2 = 1.0 / (3.0 - 2.0 * h * lam)
        self.previous: Optional[Tuple[np.ndarray, np.ndarray]] = None

    def __call__(self, u: np.ndarray) -> np.ndarray:
        v = np.fft.rfft(u)
        nv = np.fft.rfft(nonlinear_term(self.spec, self.grid, u))
        if self.previous is None:
            v_new = self.euler * (v + self.h * nv)
        else:
            v_old, n_old = self.previous
            v_new = self.bdf2 * (
                4.0 * v - v_old + 2.0 * self.h * (2.0 * nv - n_old)
            )
        self.previous = (v, nv)
        return np.fft.irfft(v_new, n=self.grid.n_points)


def _make_stepper(scheme: str, grid: Grid, spec: NonlinearitySpec, h: float):
    if scheme == "etdrk4":
        return _Etdrk4Stepper(grid, spec, h)
    return _ImexBdf2Stepper(grid, spec, h)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Stored samples u(t_i) of one solution; immutable once built."""

    grid: Grid
    spec: NonlinearitySpec
    times: np.ndarray
    states: np.ndarray
    cfg: FlowConfig = FlowConfig()

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        states = np.array(self.states, dtype=float)
        if times.ndim != 1 or states.shape != (times.size, self.grid.n_points):
            raise InputError("trajectory needs one state per time sample")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise InputError("trajectory times must be strictly increasing")
        if not np.all(np.isfinite(states)):
            raise InputError("trajectory states must be finite")
        times.flags.writeable = False
        states.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    def __len__(self) -> int:
        return self.times.size

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @property
    def spacing(self) -> float:
        if len(self) < 2:
            return 0.0
        return (self.t_end - self.t_start) / (len(self) - 1)

    def field(self, index: int) -> Field:
        return Field(self.grid, self.states[index])

    @property
    def initial(self) -> Field:
        return self.field(0)

    @property
    def final(self) -> Field:
        return self.field(-1)

    def contains(self, t: float) -> bool:
        slack = 1e-9 * max(1.0, abs(self.t_end))
        return self.t_start - slack <= t <= self.t_end + slack

    def state_at(self, t: float) -> np.ndarray:
        """Linear interpolation between the stored samples."""
        if not self.contains(t):
            raise InputError(
                f"t={t} outside trajectory range [{self.t_start}, {self.t_end}]"
            )
        if len(self) == 1:
            return self.states[0].copy()
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        i = min(max(i, 0), len(self) - 2)
        t0, t1 = self.times[i], self.times[i + 1]
        w = min(max((t - t0) / (t1 - t0), 0.0), 1.0)
        return (1.0 - w) * self.states[i] + w * self.states[i + 1]

    def velocity(self, t: float) -> np.ndarray:
        return rhs(self.spec, self.grid, self.state_at(t))

    def window(self, t0: float, t1: float) -> "Trajectory":
        keep = (self.times >= t0 - 1e-12) & (self.times <= t1 + 1e-12)
        return replace(self, times=self.times[keep], states=self.states[keep])

    def concatenate(self, other: "Trajectory") -> "Trajectory":
        """Append ``other``, dropping its first sample when it repeats our last."""
        start = 1 if abs(other.t_start - self.t_end) <= 1e-12 * max(1.0, self.t_end) else 0
        return replace(
            self,
            times=np.concatenate([self.times, other.times[start:]]),
            states=np.vstack([self.states, other.states[start:]]),
        )

    def sup_distance(self, profile: np.ndarray) -> np.ndarray:
        return np.max(np.abs(self.states - profile[None, :]), axis=1)


def evolve(
    u0: Field,
    spec: NonlinearitySpec,
    t_end: float,
    cfg: FlowConfig = FlowConfig(),
    t_start: float = 0.0,
) -> Trajectory:
    """Integrate the semiflow from ``t_start`` over a span of ``t_end``.

    Args:
        u0: Initial state
        spec: Nonlinearity f(x, u, p)
        t_end: Length of the integration interval
        cfg: Integrator settings
        t_start: Time label of ``u0``

    Returns:
        Trajectory with every ``cfg.save_every``-th sample and the endpoint

    Raises:
        InputError: If t_end is not positive or u0 is not finite
        BlowupError: If the sup-norm exceeds ``cfg.blowup_bound``
    """
    if not t_end > 0:
        raise InputError(f"t_end must be positive, got {t_end}")
    if not u0.is_finite():
        raise InputError("initial state has non-finite values")

    grid = u0.grid
    nsteps = step_count(t_end, cfg.dt)
    h = t_end / nsteps
    stepper = _make_stepper(cfg.scheme, grid, spec, h)
    logger.debug(
        "Evolving %s over %.4g with %d steps of %.3g", cfg.scheme, t_end, nsteps, h
    )

    u = np.array(u0.values)
    times: List[float] = [t_start]
    states: List[np.ndarray] = [u.copy()]
    for i in range(1, nsteps + 1):
        u = stepper(u)
        sup = float(np.max(np.abs(u)))
        if not math.isfinite(sup) or sup > cfg.blowup_bound:
            raise BlowupError(t_start + i * h, sup, cfg.blowup_bound)
        if i % cfg.save_every == 0 or i == nsteps:
            times.append(t_start + i * h)
            states.append(u.copy())
    return Trajectory(grid, spec, np.array(times), np.array(states), cfg)


def time_tau_map(
    u0: Field, spec: NonlinearitySpec, tau: float, cfg: FlowConfig = FlowConfig()
) -> Field:
    """G_f(u0) = S_f(tau) u0, the endpoint of ``evolve``."""
    return evolve(u0, spec, tau, cfg).final


def one_step_residual(traj: Trajectory, max_checks: int = 20) -> float:
    """Largest sup-norm gap between stored steps and re-steps at dt/2."""
    if len(traj) < 2:
        return 0.0
    fine = replace(traj.cfg, dt=traj.cfg.dt / 2.0, save_every=1)
    picks = np.unique(np.linspace(0, len(traj) - 2, min(max_checks, len(traj) - 1)).astype(int))
    worst = 0.0
    for i in picks:
        span = float(traj.times[i + 1] - traj.times[i])
        end = evolve(traj.field(int(i)), traj.spec, span, fine).final.values
        worst = max(worst, float(np.max(np.abs(end - traj.states[i + 1]))))
    return worst


# linearized flow -------------------------------------------------------------


def _partition(base: Trajectory, t0: float, t1: float) -> np.ndarray:
    """Tangent step nodes: two sample spacings per step, so stages hit samples."""
    spacing = base.spacing if base.spacing > 0 else base.cfg.dt
    nsteps = max(1, math.ceil((t1 - t0) / (2.0 * spacing) - 1e-9))
    return np.linspace(t0, t1, nsteps + 1)


class _Coefficients:
    """Linearized nonlinear term along a base trajectory, cached per time."""

    def __init__(self, base: Trajectory):
        self.base = base
        self._cache: dict = {}

    def at(self, t: float) -> LinearizedTerm:
        key = round(t, 12)
        if key not in self._cache:
            if len(self._cache) > 8:
                self._cache.clear()
            state = self.base.state_at(t)
            self._cache[key] = LinearizedTerm(self.base.spec, self.base.grid, state)
        return self._cache[key]

    def apply(self, t: float, v: np.ndarray) -> np.ndarray:
        return self.at(t).apply(v)

    def apply_transpose(self, t: float, w: np.ndarray) -> np.ndarray:
        return self.at(t).apply_transpose(w)


def _check_range(base: Trajectory, t0: float, t1: float) -> None:
    if t1 < t0:
        raise InputError(f"need t0 <= t1, got t0={t0}, t1={t1}")
    if not (base.contains(t0) and base.contains(t1)):
        raise InputError(
            f"[{t0}, {t1}] not inside trajectory range [{base.t_start}, {base.t_end}]"
        )


def _guard(base: Trajectory, t: float, v: np.ndarray, scale: float) -> None:
    sup = float(np.max(np.abs(v))) if v.size else 0.0
    limit = base.cfg.tangent_bound * max(1.0, scale)
    if not math.isfinite(sup) or sup > limit:
        raise BlowupError(t, sup, limit)


def propagate_tangent(
    base: Trajectory, vectors: np.ndarray, t0: float, t1: float
) -> np.ndarray:
    """T_u(t1, t0) applied to each row of ``vectors`` (or to a single vector)."""
    _check_range(base, t0, t1)
    v = np.array(vectors, dtype=float)
    if t1 == t0:
        return v
    grid = base.grid
    coeffs = _Coefficients(base)
    nodes = _partition(base, t0, t1)
    h = (t1 - t0) / (nodes.size - 1)
    c = etd_coefficients(grid, h)
    scale = float(np.max(np.abs(v))) if v.size else 0.0

    def lin(symbol, w):
        return fourier_apply(grid, symbol, w)

    for t, t_next in zip(nodes[:-1], nodes[1:]):
        mid = t + h / 2.0
        n0 = coeffs.apply(t, v)
        s1 = lin(c.e2, v) + lin(c.q, n0)
        n1 = coeffs.apply(mid, s1)
        s2 = lin(c.e2, v) + lin(c.q, n1)
        n2 = coeffs.apply(mid, s2)
        s3 = lin(c.e2, s1) + lin(c.q, 2.0 * n2 - n0)
        n3 = coeffs.apply(t_next, s3)
        v = (
            lin(c.e, v)
            + lin(c.f1, n0)
            + lin(2.0 * c.f2, n1 + n2)
            + lin(c.f3, n3)
        )
        _guard(base, float(t_next), v, scale)
    return v


def _adjoint_step(
    grid: Grid,
    coeffs: _Coefficients,
    t: float,
    t_next: float,
    h: float,
    psi: np.ndarray,
) -> np.ndarray:
    """Transpose of one tangent step from t to t_next, applied to psi."""
    c = etd_coefficients(grid, h)
    mid = t + h / 2.0

    def lin(symbol, w):
        return fourier_apply(grid, symbol, w)

    g_v = lin(c.e, psi)
    g_n0 = lin(c.f1, psi)
    g_n1 = lin(2.0 * c.f2, psi)
    g_n2 = g_n1.copy()
    g_n3 = lin(c.f3, psi)

    g_s3 = coeffs.apply_transpose(t_next, g_n3)
    g_s1 = lin(c.e2, g_s3)
    g_n2 = g_n2 + lin(2.0 * c.q, g_s3)
    g_n0 = g_n0 - lin(c.q, g_s3)

    g_s2 = coeffs.apply_transpose(mid, g_n2)
    g_v = g_v + lin(c.e2, g_s2)
    g_n1 = g_n1 + lin(c.q, g_s2)

    g_s1 = g_s1 + coeffs.apply_transpose(mid, g_n1)
    g_v = g_v + lin(c.e2, g_s1)
    g_n0 = g_n0 + lin(c.q, g_s1)

    return g_v + coeffs.apply_transpose(t, g_n0)


def propagate_adjoint(
    base: Trajectory,
    vectors: np.ndarray,
    t1: float,
    t0: float,
    keep_path: bool = False,
) -> Union[np.ndarray, Tuple[np.ndarray, np.ndarray]]:
    """T_u(t1, t0)^T applied to ``vectors``, stepping backward from t1 to t0.

    With ``keep_path`` the step nodes and the adjoint state at each node are
    returned as well, in increasing time order.
    """
    _check_range(base, t0, t1)
    psi = np.array(vectors, dtype=float)
    nodes = _partition(base, t0, t1) if t1 > t0 else np.array([t0])
    path = [psi]
    if t1 > t0:
        coeffs = _Coefficients(base)
        h = (t1 - t0) / (nodes.size - 1)
        scale = float(np.max(np.abs(psi))) if psi.size else 0.0
        for t, t_next in zip(nodes[-2::-1], nodes[:0:-1]):
            psi = _adjoint_step(base.grid, coeffs, float(t), float(t_next), h, psi)
            _guard(base, float(t), psi, scale)
            path.append(psi)
    if keep_path:
        return nodes, np.array(path[::-1])
    return psi


def tangent_evolve(base: Trajectory, v0: Field, t0: float, t1: float) -> Field:
    """T_u(t1, t0) v0 along ``base``."""
    return Field(base.grid, propagate_tangent(base, v0.values, t0, t1))


def adjoint_evolve(base: Trajectory, psi1: Field, t1: float, t0: float) -> Field:
    """T_u(t1, t0)^T psi1, integrated backward from t1 to t0."""
    return Field(base.grid, propagate_adjoint(base, psi1.values, t1, t0))


def time_tau_derivative(
    u0: Field,
    v0: Field,
    spec: NonlinearitySpec,
    tau: float,
    cfg: FlowConfig = FlowConfig(),
) -> Field:
    """DG_f(u0) v0 by the tangent flow along the trajectory of u0 over [0, tau]."""
    base = evolve(u0, spec, tau, replace(cfg, save_every=1))
    return tangent_evolve(base, v0, 0.0, tau)
