"""
Discrete exponential dichotomies of linear evolution families on a finite
window of integer times, and the machinery built on them: the bounded
solution operator (Green function), the Fredholm index of
Y(n+1) - T_n Y(n), bounded adjoint solutions along a connection and the
Melnikov pairing of those with a perturbation of the nonlinearity.

Synthetic families carry dense step matrices; PDE families are the tangent
flow along a trajectory over steps of length tau, reduced to the leading
real Fourier modes.
"""

import logging
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg
from scipy.integrate import trapezoid

from sturmflow.connections import (
    SIGMA_HIGH,
    SIGMA_LOW,
    ConnectionRecord,
    InjectivityVerdict,
    _distances,
    injectivity_check,
)
from sturmflow.errors import (
    BumpConstructionError,
    IndeterminateError,
    InputError,
    NoGapError,
    PreconditionError,
    WindowTooShortError,
)
from sturmflow.grid import BumpTerm, Field, Grid, NonlinearitySpec, derivative_values
from sturmflow.semiflow import Trajectory, propagate_adjoint, propagate_tangent, time_tau_map

logger = logging.getLogger(__name__)

MIN_WINDOW = 10
GAP_TOL = 1e-6
COND_LIMIT = 1e12
# exp(-k^2 tau) must stay representable for every retained mode
_DECAY_LIMIT = 200.0


def band_basis(grid: Grid, modes: Optional[int] = None) -> np.ndarray:
    """Orthonormal columns 1, cos(kx), sin(kx) for k <= modes, sampled on the grid."""
    modes = grid.band if modes is None else min(modes, grid.band)
    n = grid.n_points
    columns = [np.full(n, 1.0 / math.sqrt(n))]
    for k in range(1, modes + 1):
        columns.append(np.cos(k * grid.x) * math.sqrt(2.0 / n))
        columns.append(np.sin(k * grid.x) * math.sqrt(2.0 / n))
    return np.column_stack(columns)


@dataclass(frozen=True, eq=False)
class EvolutionFamily:
    """Step operators T_n for n in [n_lo, n_hi); T(n, m) = T_{n-1} ... T_m."""

    n_lo: int
    n_hi: int
    steps: Tuple[np.ndarray, ...]
    basis: Optional[np.ndarray] = None
    trajectory: Optional[Trajectory] = None
    tau: Optional[float] = None
    origin: float = 0.0

    def __post_init__(self):
        steps = tuple(np.array(s, dtype=float) for s in self.steps)
        if self.n_hi <= self.n_lo or len(steps) != self.n_hi - self.n_lo:
            raise InputError(
                f"window [{self.n_lo}, {self.n_hi}] needs {self.n_hi - self.n_lo} steps, "
                f"got {len(steps)}"
            )
        d = steps[0].shape[0]
        if any(s.shape != (d, d) for s in steps):
            raise InputError("step operators must be square and of one size")
        if not all(np.all(np.isfinite(s)) for s in steps):
            raise InputError("step operators must be finite")
        object.__setattr__(self, "steps", steps)

    @property
    def dim(self) -> int:
        return self.steps[0].shape[0]

    @property
    def length(self) -> int:
        return self.n_hi - self.n_lo

    def step(self, n: int) -> np.ndarray:
        if not self.n_lo <= n < self.n_hi:
            raise InputError(f"step {n} outside window [{self.n_lo}, {self.n_hi})")
        return self.steps[n - self.n_lo]

    def propagator(self, n: int, m: int) -> np.ndarray:
        """T(n, m) for n >= m."""
        if n < m:
            raise InputError("propagator needs n >= m")
        out = np.eye(self.dim)
        for k in range(m, n):
            out = self.step(k) @ out
        return out

    def restrict(self, n_lo: int, n_hi: int) -> "EvolutionFamily":
        if not self.n_lo <= n_lo < n_hi <= self.n_hi:
            raise InputError(f"[{n_lo}, {n_hi}] is not inside [{self.n_lo}, {self.n_hi}]")
        return replace(
            self,
            n_lo=n_lo,
            n_hi=n_hi,
            steps=self.steps[n_lo - self.n_lo : n_hi - self.n_lo],
        )

    def scaled(self, rho: float) -> "EvolutionFamily":
        """Every step divided by rho (the shifted-dichotomy reduction)."""
        if not rho > 0:
            raise InputError(f"shift must be positive, got {rho}")
        return replace(self, steps=tuple(s / rho for s in self.steps))

    def adjoint(self) -> "EvolutionFamily":
        """The time-reversed transposed family S_m = T_{-m-1}^T on [-n_hi, -n_lo]."""
        return EvolutionFamily(
            -self.n_hi,
            -self.n_lo,
            tuple(s.T for s in reversed(self.steps)),
        )

    @classmethod
    def constant(cls, matrix, n_lo: int, n_hi: int) -> "EvolutionFamily":
        m = np.atleast_2d(np.array(matrix, dtype=float))
        return cls(n_lo, n_hi, tuple(m for _ in range(n_hi - n_lo)))

    @classmethod
    def from_matrices(cls, matrices: Sequence, n_lo: int) -> "EvolutionFamily":
        steps = tuple(np.atleast_2d(np.array(m, dtype=float)) for m in matrices)
        return cls(n_lo, n_lo + len(steps), steps)

    @classmethod
    def from_trajectory(
        cls,
        traj: Trajectory,
        tau: float,
        origin: float,
        n_lo: int,
        n_hi: int,
        modes: Optional[int] = None,
    ) -> "EvolutionFamily":
        """Band-reduced tangent flow along ``traj``: T_n = B^T T_u(t_{n+1}, t_n) B
        with t_n = origin + n * tau.

        Raises:
            WindowTooShortError: If the trajectory does not cover the window
        """
        if not tau > 0:
            raise InputError(f"tau must be positive, got {tau}")
        t_lo, t_hi = origin + n_lo * tau, origin + n_hi * tau
        if not (traj.contains(t_lo) and traj.contains(t_hi)):
            raise WindowTooShortError(
                f"trajectory [{traj.t_start:.4g}, {traj.t_end:.4g}] does not cover "
                f"[{t_lo:.4g}, {t_hi:.4g}]"
            )
        if modes is None:
            modes = int(math.sqrt(_DECAY_LIMIT / tau))
        basis = band_basis(traj.grid, modes)
        steps = []
        for n in range(n_lo, n_hi):
            rows = propagate_tangent(
                traj, basis.T, origin + n * tau, origin + (n + 1) * tau
            )
            steps.append((rows @ basis).T)
        logger.debug(
            "PDE family on [%d, %d]: dimension %d, tau %.3g", n_lo, n_hi, basis.shape[1], tau
        )
        return cls(n_lo, n_hi, tuple(steps), basis, traj, tau, origin)


# dichotomy detection -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DichotomyReport:
    rank: int
    exponent: float
    bound: float
    projections: np.ndarray
    n_lo: int
    n_hi: int
    unstable_frames: Tuple[np.ndarray, ...]
    adjoint_frames: Tuple[np.ndarray, ...]
    r_factors: Tuple[np.ndarray, ...]
    adjoint_r_factors: Tuple[np.ndarray, ...]
    exponents: np.ndarray
    clauses: Dict[str, bool] = field(default_factory=dict)
    gap: Optional[Tuple[float, float]] = None
    shift: Optional[float] = None

    @property
    def passed(self) -> bool:
        return all(self.clauses.values())

    def projection(self, n: int) -> np.ndarray:
        return self.projections[n - self.n_lo]

    def stable_basis(self, n: int) -> np.ndarray:
        """Orthonormal basis of R(I - P(n))."""
        w = self.adjoint_frames[n - self.n_lo]
        if w.shape[1] == 0:
            return np.eye(w.shape[0])
        return linalg.null_space(w.T)

    def unstable_basis(self, n: int) -> np.ndarray:
        return self.unstable_frames[n - self.n_lo]


def _dominant_subspace(matrix: np.ndarray, k: int) -> np.ndarray:
    """Invariant subspace of the k largest-modulus eigenvalues (real Schur)."""
    d = matrix.shape[0]
    if k == 0:
        return np.zeros((d, 0))
    if k == d:
        return np.eye(d)
    moduli = np.sort(np.abs(linalg.eigvals(matrix)))[::-1]
    if moduli[k - 1] - moduli[k] > 1e-12 * max(1.0, moduli[0]):
        threshold = 0.5 * (moduli[k - 1] + moduli[k])
        _, z, sdim = linalg.schur(
            matrix, output="real", sort=lambda re, im=0.0: re * re + im * im > threshold**2
        )
        if sdim == k:
            return z[:, :k]
    return linalg.svd(matrix)[0][:, :k]


def _exponents(steps: Sequence[np.ndarray]) -> np.ndarray:
    """Window-averaged growth exponents by QR accumulation."""
    q = np.eye(steps[0].shape[0])
    logs = np.zeros(q.shape[0])
    for step in steps:
        q, r = linalg.qr(step @ q)
        diag = np.abs(np.diag(r))
        if np.any(diag == 0.0):
            raise NoGapError("a step operator is singular")
        logs += np.log(diag)
    return np.sort(logs / len(steps))[::-1]


def _qr(matrix: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if matrix.shape[1] == 0:
        return matrix, np.zeros((0, 0))
    return linalg.qr(matrix, mode="economic")


def detect_dichotomy(
    fam: EvolutionFamily, shift: Optional[float] = None, gap_tol: float = GAP_TOL
) -> DichotomyReport:
    """Exponential (or shifted, with center ``shift``) dichotomy on the window.

    The rank is the number of positive window-averaged growth exponents.
    The unstable range is iterated forward from the dominant invariant
    subspace of the first step; the annihilator of the stable range is
    iterated backward with the transposed steps from the last one. Both are
    re-orthonormalized every step. (beta, M) are the tightest constants on
    the window: beta from pairs at least half a window apart, M over all
    pairs.

    Raises:
        WindowTooShortError: If the window has fewer than 10 steps
        NoGapError: If a growth exponent sits within ``gap_tol`` of zero or
            the splitting degenerates
    """
    if fam.length < MIN_WINDOW:
        raise WindowTooShortError(
            f"window has {fam.length} steps, need at least {MIN_WINDOW}"
        )
    work = fam if shift is None else fam.scaled(shift)
    steps = work.steps
    d, n_steps = work.dim, work.length

    exponents = _exponents(steps)
    if np.any(np.abs(exponents) <= gap_tol):
        raise NoGapError(
            f"growth exponent {exponents[np.argmin(np.abs(exponents))]:.3e} "
            f"within {gap_tol:.0e} of zero: spectrum on the reference circle"
        )
    k = int(np.count_nonzero(exponents > 0))

    frames = [_dominant_subspace(steps[0], k)]
    r_factors = []
    for step in steps:
        q, r = _qr(step @ frames[-1])
        frames.append(q)
        r_factors.append(r)

    adjoint = [_dominant_subspace(steps[-1].T, k)]
    adjoint_r = []
    for step in reversed(steps):
        q, r = _qr(step.T @ adjoint[-1])
        adjoint.append(q)
        adjoint_r.append(r)
    adjoint = adjoint[::-1]
    adjoint_r = adjoint_r[::-1]

    projections = np.zeros((n_steps + 1, d, d))
    couplings = []
    for i, (u, w) in enumerate(zip(frames, adjoint)):
        if k == 0:
            couplings.append(np.zeros((0, d)))
            continue
        wu = w.T @ u
        if np.linalg.cond(wu) > COND_LIMIT:
            raise NoGapError(
                f"unstable and stable ranges nearly intersect at n={work.n_lo + i}"
            )
        g = linalg.solve(wu, w.T)
        couplings.append(g)
        projections[i] = u @ g

    eye = np.eye(d)
    stable_norms: List[Tuple[int, float]] = []
    for m in range(n_steps + 1):
        y = eye - projections[m]
        for n in range(m, n_steps + 1):
            stable_norms.append((n - m, float(np.linalg.norm(y, 2))))
            if n < n_steps:
                y = (eye - projections[n + 1]) @ (steps[n] @ y)

    unstable_norms: List[Tuple[int, float]] = []
    if k:
        for m in range(n_steps + 1):
            kk = couplings[m]
            for n in range(m, -1, -1):
                unstable_norms.append((m - n, float(np.linalg.norm(kk, 2))))
                if n > 0:
                    kk = linalg.solve_triangular(r_factors[n - 1], kk)

    pairs = [(g, v) for g, v in stable_norms + unstable_norms if v > 0.0]
    long_rates = [
        -math.log(v) / g for g, v in pairs if g >= n_steps / 2 and g > 0
    ]
    beta = min(long_rates) if long_rates else math.inf
    if not beta > 0:
        raise NoGapError(f"fitted dichotomy exponent {beta:.3e} is not positive")
    bound = max((v * math.exp(beta * g) for g, v in pairs), default=1.0)

    def holds(norms):
        return all(v <= bound * math.exp(-beta * g) * (1 + 1e-9) for g, v in norms)

    idempotent = max(
        float(np.linalg.norm(p @ p - p, 2)) / max(1.0, float(np.linalg.norm(p, 2)))
        for p in projections
    )
    invariant = max(
        float(np.linalg.norm(s @ projections[i] - projections[i + 1] @ s, 2))
        / max(1.0, float(np.linalg.norm(s, 2)) * float(np.linalg.norm(projections[i], 2)))
        for i, s in enumerate(steps)
    )
    clauses = {
        "projection": idempotent <= 1e-10,
        "invariance": invariant <= 1e-8,
        "unstable-invertible": all(
            np.all(np.abs(np.diag(r)) > 0.0) for r in r_factors
        ),
        "stable-decay": holds(stable_norms),
        "unstable-decay": holds(unstable_norms),
    }
    if not all(clauses.values()):
        logger.warning(
            "Dichotomy clauses failed on [%d, %d]: %s",
            fam.n_lo,
            fam.n_hi,
            ", ".join(name for name, ok in clauses.items() if not ok),
        )
    gap = None
    if shift is not None:
        gap = (shift * math.exp(-beta), shift * math.exp(beta))
    logger.debug("Dichotomy rank %d, beta %.6g, M %.6g", k, beta, bound)
    return DichotomyReport(
        rank=k,
        exponent=beta,
        bound=bound,
        projections=projections,
        n_lo=fam.n_lo,
        n_hi=fam.n_hi,
        unstable_frames=tuple(frames),
        adjoint_frames=tuple(adjoint),
        r_factors=tuple(r_factors),
        adjoint_r_factors=tuple(adjoint_r),
        exponents=exponents,
        clauses=clauses,
        gap=gap,
        shift=shift,
    )


def split_dichotomies(
    fam: EvolutionFamily, shift: Optional[float] = None, gap_tol: float = GAP_TOL
) -> Tuple[DichotomyReport, DichotomyReport]:
    """Dichotomies on the negative and positive half-windows [n_lo, 0], [0, n_hi]."""
    if not fam.n_lo < 0 < fam.n_hi:
        raise InputError(f"window [{fam.n_lo}, {fam.n_hi}] must straddle 0")
    return (
        detect_dichotomy(fam.restrict(fam.n_lo, 0), shift, gap_tol),
        detect_dichotomy(fam.restrict(0, fam.n_hi), shift, gap_tol),
    )


# bounded solutions -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GreenSolution:
    values: np.ndarray
    n_lo: int
    n_hi: int
    residual: float
    tail_bound: float

    def at(self, n: int) -> np.ndarray:
        return self.values[n - self.n_lo]


def green_solve(
    fam: EvolutionFamily, report: DichotomyReport, forcing
) -> GreenSolution:
    """The bounded solution of Y(n+1) - T_n Y(n) = F(n) on the window.

    The stable part is summed forward from the left edge and the unstable
    part backward from the right edge, each projected at every step. The
    residual is measured on the inner half-window; the tail bound is the
    geometric remainder M sup|F| (e^{-beta a} + e^{-beta b}) / (1 - e^{-beta})
    at its worst inner point.

    Args:
        fam: Family the report was computed on
        report: Dichotomy over the same window
        forcing: Array of shape (n_hi - n_lo, dim), F(n) for n in [n_lo, n_hi)
    """
    if (report.n_lo, report.n_hi) != (fam.n_lo, fam.n_hi):
        raise PreconditionError("report and family windows differ")
    work = fam if report.shift is None else fam.scaled(report.shift)
    f = np.array(forcing, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    n_steps, d = work.length, work.dim
    if f.shape != (n_steps, d):
        raise InputError(f"forcing needs shape {(n_steps, d)}, got {f.shape}")

    eye = np.eye(d)
    stable = np.zeros((n_steps + 1, d))
    for n in range(n_steps):
        stable[n + 1] = (eye - report.projections[n + 1]) @ (
            work.steps[n] @ stable[n] + f[n]
        )

    unstable = np.zeros((n_steps + 1, d))
    if report.rank:
        couplings = [
            linalg.solve(w.T @ u, w.T)
            for u, w in zip(report.unstable_frames, report.adjoint_frames)
        ]
        c = np.zeros(report.rank)
        unstable[n_steps] = 0.0
        for n in range(n_steps - 1, -1, -1):
            c = linalg.solve_triangular(report.r_factors[n], c - couplings[n + 1] @ f[n])
            unstable[n] = report.unstable_frames[n] @ c

    values = stable + unstable
    quarter = n_steps // 4
    inner = range(quarter, n_steps - quarter)
    residual = max(
        (
            float(np.max(np.abs(values[n + 1] - work.steps[n] @ values[n] - f[n])))
            for n in inner
        ),
        default=0.0,
    )
    q = math.exp(-report.exponent)
    sup_f = float(np.max(np.abs(f))) if f.size else 0.0
    tail = report.bound * sup_f * (q**quarter + q ** (n_steps - quarter)) / (1.0 - q)
    return GreenSolution(values, fam.n_lo, fam.n_hi, residual, tail)


# Fredholm index and bounded adjoints -------------------------------------------


def _half_window_bases(
    report_minus: DichotomyReport, report_plus: DichotomyReport
) -> Tuple[np.ndarray, np.ndarray]:
    if report_minus.n_hi != 0 or report_plus.n_lo != 0:
        raise PreconditionError("half-window reports must meet at n = 0")
    return report_minus.unstable_basis(0), report_plus.stable_basis(0)


def _ambiguous(sigma: np.ndarray, sigma_low: float, sigma_high: float) -> bool:
    return bool(np.any((sigma > sigma_low) & (sigma < sigma_high)))


@dataclass(frozen=True)
class FredholmResult:
    index: int
    kernel_dim: int
    cokernel_dim: int
    rank_minus: int
    rank_plus: int
    singular_values: Tuple[float, ...]
    section_kernel_dim: Optional[int] = None
    section_cokernel_dim: Optional[int] = None

    @property
    def consistent(self) -> bool:
        """The projection counts agree with the rank of the window operator."""
        if self.section_kernel_dim is None:
            return self.index == self.kernel_dim - self.cokernel_dim
        return (
            self.section_kernel_dim == self.kernel_dim
            and self.section_cokernel_dim == self.cokernel_dim
        )


def _complement(basis: np.ndarray) -> np.ndarray:
    d, k = basis.shape
    if k == 0:
        return np.eye(d)
    if k >= d:
        return np.zeros((d, 0))
    return linalg.null_space(basis.T)


def window_operator(
    fam: EvolutionFamily, report_minus: DichotomyReport, report_plus: DichotomyReport
) -> np.ndarray:
    """Matrix of w -> (w(n+1) - T_n w(n))_n on [n_lo, n_hi], with the end conditions
    w(n_lo) in R(P^-(n_lo)) and w(n_hi) in R(I - P^+(n_hi)) as extra rows."""
    n_lo, n_hi = report_minus.n_lo, report_plus.n_hi
    d, length = fam.dim, n_hi - n_lo
    left = _complement(report_minus.unstable_basis(n_lo)).T
    right = _complement(report_plus.stable_basis(n_hi)).T
    rows = d * length + left.shape[0] + right.shape[0]
    matrix = np.zeros((rows, d * (length + 1)))
    eye = np.eye(d)
    for i, n in enumerate(range(n_lo, n_hi)):
        block = slice(d * i, d * (i + 1))
        matrix[block, d * i : d * (i + 1)] = -fam.step(n)
        matrix[block, d * (i + 1) : d * (i + 2)] = eye
    top = d * length
    matrix[top : top + left.shape[0], :d] = left
    matrix[top + left.shape[0] :, d * length :] = right
    return matrix


def fredholm_index(
    fam: EvolutionFamily,
    report_minus: DichotomyReport,
    report_plus: DichotomyReport,
    sigma_low: float = SIGMA_LOW,
    sigma_high: float = SIGMA_HIGH,
) -> FredholmResult:
    """rank P^-(0) - rank P^+(0), with kernel and cokernel dimensions.

    The kernel is R(P^-(0)) intersected with R(I - P^+(0)); the cokernel is
    the orthogonal complement of their sum. Both come from the singular
    values of the stacked bases, and are checked against the numerical rank
    of :func:`window_operator`.

    Raises:
        IndeterminateError: If a singular value lies in (sigma_low, sigma_high)
    """
    a_basis, b_basis = _half_window_bases(report_minus, report_plus)
    stacked = np.hstack([a_basis, b_basis])
    sigma = linalg.svdvals(stacked) if stacked.shape[1] else np.zeros(0)
    if _ambiguous(sigma, sigma_low, sigma_high):
        raise IndeterminateError(
            "intersection singular value inside the ambiguity band", sigma
        )
    r = int(np.count_nonzero(sigma >= sigma_high))
    a, b, d = a_basis.shape[1], b_basis.shape[1], fam.dim

    operator = window_operator(fam, report_minus, report_plus)
    op_sigma = linalg.svdvals(operator)
    op_rank = int(np.count_nonzero(op_sigma > sigma_low * max(float(op_sigma[0]), 1.0)))
    result = FredholmResult(
        index=report_minus.rank - report_plus.rank,
        kernel_dim=a + b - r,
        cokernel_dim=d - r,
        rank_minus=report_minus.rank,
        rank_plus=report_plus.rank,
        singular_values=tuple(float(s) for s in sigma),
        section_kernel_dim=operator.shape[1] - op_rank,
        section_cokernel_dim=operator.shape[0] - op_rank,
    )
    if not result.consistent:
        logger.warning(
            "Fredholm counts ker %d, coker %d differ from the window operator's %d, %d",
            result.kernel_dim,
            result.cokernel_dim,
            result.section_kernel_dim,
            result.section_cokernel_dim,
        )
    return result


@dataclass(frozen=True, eq=False)
class AdjointBasis:
    """Initial values psi_0 (columns) and their sequences psi(n) on the window."""

    vectors: np.ndarray
    sequences: np.ndarray
    n_lo: int
    n_hi: int
    singular_values: Tuple[float, ...]

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]

    @property
    def empty(self) -> bool:
        return self.dimension == 0

    @property
    def smallest_singular_value(self) -> float:
        return min(self.singular_values, default=math.inf)


def bounded_adjoint_solutions(
    fam: EvolutionFamily,
    report_minus: DichotomyReport,
    report_plus: DichotomyReport,
    sigma_low: float = SIGMA_LOW,
    sigma_high: float = SIGMA_HIGH,
) -> AdjointBasis:
    """Basis of psi_0 with T(n, 0)^* psi_0 bounded on the whole window.

    psi_0 ranges over R(P^-(0))^perp intersected with R(I - P^+(0))^perp.
    Each basis vector is carried backward by psi(n) = T_n^T psi(n+1),
    projected onto R(P^-(n))^perp, and forward through the adjoint QR
    factors on the positive half-window.

    Raises:
        IndeterminateError: If a singular value lies in (sigma_low, sigma_high)
    """
    a_basis, b_basis = _half_window_bases(report_minus, report_plus)
    d = fam.dim
    stacked = np.hstack([a_basis, b_basis])
    if stacked.shape[1]:
        u, sigma, _ = linalg.svd(stacked, full_matrices=True)
    else:
        u, sigma = np.eye(d), np.zeros(0)
    if _ambiguous(sigma, sigma_low, sigma_high):
        raise IndeterminateError(
            "intersection singular value inside the ambiguity band", sigma
        )
    r = int(np.count_nonzero(sigma >= sigma_high))
    vectors = u[:, r:]

    n_lo, n_hi = report_minus.n_lo, report_plus.n_hi
    length = n_hi - n_lo + 1
    sequences = np.zeros((vectors.shape[1], length, d))
    eye = np.eye(d)
    for j in range(vectors.shape[1]):
        psi0 = vectors[:, j]
        sequences[j, -n_lo] = psi0
        psi = psi0
        for n in range(-1, n_lo - 1, -1):
            p = report_minus.projection(n)
            psi = (eye - p).T @ (fam.step(n).T @ psi)
            sequences[j, n - n_lo] = psi
        if report_plus.rank:
            coeff = report_plus.adjoint_frames[0].T @ psi0
            for n in range(0, n_hi):
                coeff = linalg.solve_triangular(report_plus.adjoint_r_factors[n], coeff)
                sequences[j, n + 1 - n_lo] = report_plus.adjoint_frames[n + 1] @ coeff
    if vectors.shape[1]:
        logger.info("Found %d bounded adjoint solution(s)", vectors.shape[1])
    return AdjointBasis(vectors, sequences, n_lo, n_hi, tuple(float(s) for s in sigma))


# continuous-time adjoints and Melnikov pairings ----------------------------------


@dataclass(frozen=True, eq=False)
class AdjointSolution:
    """psi(t) sampled at increasing times."""

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        states = np.array(self.states, dtype=float)
        if times.ndim != 1 or states.shape[0] != times.size:
            raise InputError("adjoint solution needs one state per time")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    def at(self, t: float) -> np.ndarray:
        i = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 2))
        t0, t1 = self.times[i], self.times[i + 1]
        w = min(max((t - t0) / (t1 - t0), 0.0), 1.0)
        return (1.0 - w) * self.states[i] + w * self.states[i + 1]

    @property
    def is_zero(self) -> bool:
        return not np.any(self.states)


def materialize_adjoint(
    fam: EvolutionFamily, sequence: np.ndarray, n_lo: Optional[int] = None
) -> AdjointSolution:
    """Continuous psi(t) from a bounded adjoint sequence of a PDE family.

    Between t_n and t_{n+1}, psi(t) = T_u(t_{n+1}, t)^T psi(n+1) with the
    band coordinates lifted to fields.
    """
    if fam.trajectory is None or fam.basis is None or fam.tau is None:
        raise PreconditionError("continuous adjoints need a PDE-mode family")
    n_lo = fam.n_lo if n_lo is None else n_lo
    seq = np.asarray(sequence, dtype=float)
    times: List[np.ndarray] = []
    states: List[np.ndarray] = []
    for i in range(seq.shape[0] - 1):
        n = n_lo + i
        t0 = fam.origin + n * fam.tau
        t1 = t0 + fam.tau
        nodes, path = propagate_adjoint(
            fam.trajectory, fam.basis @ seq[i + 1], t1, t0, keep_path=True
        )
        start = 0 if not times else 1
        times.append(nodes[start:])
        states.append(path[start:])
    return AdjointSolution(np.concatenate(times), np.vstack(states))


@dataclass(frozen=True)
class MelnikovValue:
    value: float
    quadrature_error: float
    tail_bound: float

    @property
    def error(self) -> float:
        return self.quadrature_error + self.tail_bound

    @property
    def certain(self) -> bool:
        return abs(self.value) > 3.0 * self.error


def _pairing_samples(
    traj: Trajectory, psi: AdjointSolution, g: Union[NonlinearitySpec, BumpTerm]
) -> Tuple[np.ndarray, np.ndarray]:
    keep = (psi.times >= traj.t_start - 1e-12) & (psi.times <= traj.t_end + 1e-12)
    times = psi.times[keep]
    values = []
    for t, p in zip(times, psi.states[keep]):
        u = traj.state_at(float(t))
        ux = derivative_values(traj.grid, u, 1)
        values.append(float(np.dot(p, g.value(traj.grid.x, u, ux))) * traj.grid.spacing)
    return times, np.array(values)


def _end_decay(psi: AdjointSolution, at_end: bool) -> float:
    norms = np.linalg.norm(psi.states, axis=1)
    m = max(2, psi.times.size // 4)
    sel = slice(-m, None) if at_end else slice(0, m)
    t, y = psi.times[sel], norms[sel]
    if np.any(y <= 0):
        return math.inf
    slope = float(np.polyfit(t, np.log(y), 1)[0])
    return -slope if at_end else slope


def melnikov_integral(
    conn: Union[ConnectionRecord, Trajectory],
    psi: AdjointSolution,
    g: Union[NonlinearitySpec, BumpTerm],
) -> MelnikovValue:
    """Integral of <psi(t), g(x, u(t), u_x(t))> over the trajectory window.

    The quadrature error is |I_h - I_2h| / 3 from trapezoid sums on all and
    on every other node; the tail bound extrapolates the end values of the
    integrand with the decay rate of psi there.
    """
    traj = conn.trajectory if isinstance(conn, ConnectionRecord) else conn
    times, values = _pairing_samples(traj, psi, g)
    if times.size < 3:
        raise WindowTooShortError("adjoint solution overlaps the trajectory in < 3 nodes")
    fine = float(trapezoid(values, times))
    coarse = float(trapezoid(values[::2], times[::2]))
    if (times.size - 1) % 2:
        coarse += float(trapezoid(values[-2:], times[-2:]))
    tail = 0.0
    for at_end, end_value in ((False, values[0]), (True, values[-1])):
        if end_value == 0.0:
            continue
        rate = _end_decay(psi, at_end)
        tail += abs(end_value) / rate if rate > 0 else math.inf
    return MelnikovValue(fine, abs(fine - coarse) / 3.0, tail)


@dataclass(frozen=True, eq=False)
class BumpResult:
    term: BumpTerm
    melnikov: MelnikovValue
    center: Tuple[float, float, float, float]
    halvings: int


def construct_breaking_bump(
    conn: ConnectionRecord,
    psi: Optional[AdjointSolution],
    injectivity: Optional[InjectivityVerdict] = None,
    max_halvings: int = 12,
) -> BumpResult:
    """A bump g centered at (x0, u(x0, t0), u_x(x0, t0)), |psi(x0, t0)| maximal,
    whose Melnikov pairing with psi is certainly nonzero.

    Widths are halved until the support meets the trajectory in one time
    interval on which psi keeps its sign and |I| exceeds three times its
    error estimate.

    Raises:
        PreconditionError: If psi is empty or the injectivity check fails
        BumpConstructionError: If no width within ``max_halvings`` works
    """
    if psi is None or psi.is_zero:
        raise PreconditionError("no bounded adjoint solution to pair with")
    verdict = injectivity if injectivity is not None else injectivity_check(conn)
    if not verdict.passed:
        raise PreconditionError(
            f"injectivity fails on {conn.label}: {len(verdict.collisions)} collisions"
        )
    traj = conn.trajectory
    grid = traj.grid
    keep = (psi.times >= traj.t_start) & (psi.times <= traj.t_end)
    times, states = psi.times[keep], psi.states[keep]
    if times.size < 3:
        raise PreconditionError("adjoint solution does not overlap the connection")
    i0, j0 = np.unravel_index(int(np.argmax(np.abs(states))), states.shape)
    t0, x0 = float(times[i0]), float(grid.x[j0])
    u_path = np.array([traj.state_at(float(t)) for t in times])
    ux_path = derivative_values(grid, u_path, 1)
    u0, p0 = float(u_path[i0, j0]), float(ux_path[i0, j0])
    sign = np.sign(states[i0, j0])

    width_x = math.pi / 2
    width_u = 0.25 * max(float(np.ptp(u_path)), 1e-6)
    width_p = 0.25 * max(float(np.ptp(ux_path)), 1e-6)
    last_reason: Any = None
    for halving in range(max_halvings + 1):
        term = BumpTerm(1.0, x0, u0, p0, width_x, width_u, width_p)
        support = term.value(grid.x[None, :], u_path, ux_path) != 0.0
        rows = np.where(support.any(axis=1))[0]
        contiguous = rows.size > 0 and rows[-1] - rows[0] + 1 == rows.size
        one_sign = bool(np.all(np.sign(states[support]) == sign))
        if contiguous and one_sign:
            value = melnikov_integral(traj, psi, term)
            if value.certain:
                logger.info(
                    "Breaking bump at x=%.4f, t=%.4f after %d halvings: M = %.4g (+/- %.2g)",
                    x0,
                    t0,
                    halving,
                    value.value,
                    value.error,
                )
                return BumpResult(term, value, (x0, t0, u0, p0), halving)
            last_reason = value
        elif not contiguous and rows.size:
            gaps = np.where(np.diff(rows) > 1)[0]
            last_reason = (float(times[rows[gaps[0]]]), float(times[rows[gaps[0] + 1]]))
        width_x, width_u, width_p = width_x / 2, width_u / 2, width_p / 2
    raise BumpConstructionError(
        f"no bump width gave a certain Melnikov sign on {conn.label}", last_reason
    )


# diagnostics -------------------------------------------------------------------


@dataclass(frozen=True)
class RoughnessReport:
    deltas: Tuple[float, ...]
    displacements: Tuple[float, ...]
    ranks: Tuple[int, ...]
    slope: float
    passed: bool


def roughness_check(
    fam: EvolutionFamily,
    deltas: Sequence[float] = (1e-4, 3e-4, 1e-3, 3e-3, 1e-2),
    rng: Optional[np.random.Generator] = None,
    directions: Optional[Sequence[np.ndarray]] = None,
) -> RoughnessReport:
    """Perturb every step by delta (spectral norm) and track the projections.

    Passes when the rank never changes and max ||dP|| / delta, fitted through
    the origin, lies in [0.5, 20].

    Args:
        fam: Family with a dichotomy on its window
        deltas: Perturbation sizes
        rng: Source of random directions when ``directions`` is omitted
        directions: One matrix per step (or a single matrix for all steps),
            scaled to unit spectral norm
    """
    base = detect_dichotomy(fam)
    if directions is None:
        rng = rng if rng is not None else np.random.Generator(np.random.Philox(0))
        directions = [rng.standard_normal((fam.dim, fam.dim)) for _ in fam.steps]
    elif np.ndim(directions) == 2:
        directions = [directions] * fam.length
    if len(directions) != fam.length:
        raise InputError(f"need {fam.length} perturbation directions, got {len(directions)}")
    directions = [np.asarray(e, dtype=float) / np.linalg.norm(e, 2) for e in directions]
    displacements, ranks = [], []
    for delta in deltas:
        perturbed = replace(
            fam, steps=tuple(s + delta * e for s, e in zip(fam.steps, directions))
        )
        report = detect_dichotomy(perturbed)
        ranks.append(report.rank)
        displacements.append(
            max(
                float(np.linalg.norm(p - q, 2))
                for p, q in zip(report.projections, base.projections)
            )
        )
    d = np.asarray(deltas, dtype=float)
    slope = float(np.dot(d, displacements) / np.dot(d, d))
    passed = all(r == base.rank for r in ranks) and 0.5 <= slope <= 20.0
    return RoughnessReport(tuple(d), tuple(displacements), tuple(ranks), slope, passed)


@dataclass(frozen=True)
class DefectReport:
    times: np.ndarray
    defects: np.ndarray

    @property
    def max_defect(self) -> float:
        return float(self.defects.max(initial=0.0))


def discrete_defect(
    trajectory: Trajectory, tau: float, origin: Optional[float] = None
) -> DefectReport:
    """sup|w((n+1) tau) - G_f(w(n tau))| along a sampled trajectory."""
    origin = trajectory.t_start if origin is None else origin
    first = math.ceil((trajectory.t_start - origin) / tau - 1e-9)
    last = math.floor((trajectory.t_end - origin) / tau + 1e-9)
    times, defects = [], []
    for n in range(first, last):
        t = origin + n * tau
        start = Field(trajectory.grid, trajectory.state_at(t))
        mapped = time_tau_map(start, trajectory.spec, tau, trajectory.cfg)
        defects.append(float(np.max(np.abs(trajectory.state_at(t + tau) - mapped.values))))
        times.append(t)
    return DefectReport(np.array(times), np.array(defects))


def connection_midpoint(conn: ConnectionRecord) -> float:
    """Sample time farthest (in sup-norm) from both endpoints."""
    traj = conn.trajectory
    near = np.minimum(
        _distances(traj, conn.source, conn.source_phase),
        _distances(traj, conn.target, conn.target_phase),
    )
    return float(traj.times[int(np.argmax(near))])


@dataclass(frozen=True)
class WindowSensitivity:
    origin: float
    half_windows: Tuple[int, ...]
    dimensions: Tuple[Optional[int], ...]
    smallest_singular_values: Tuple[float, ...]

    @property
    def stable(self) -> bool:
        return None not in self.dimensions and len(set(self.dimensions)) == 1


def window_sensitivity(
    conn: ConnectionRecord,
    tau: float = 1.0,
    half_window: int = MIN_WINDOW,
    origin: Optional[float] = None,
    sigma_low: float = SIGMA_LOW,
    sigma_high: float = SIGMA_HIGH,
) -> WindowSensitivity:
    """Bounded-adjoint dimension at a window and at its doubling."""
    origin = connection_midpoint(conn) if origin is None else origin
    windows = (half_window, 2 * half_window)
    dims: List[Optional[int]] = []
    sigmas: List[float] = []
    for n in windows:
        fam = EvolutionFamily.from_trajectory(conn.trajectory, tau, origin, -n, n)
        try:
            minus, plus = split_dichotomies(fam)
            basis = bounded_adjoint_solutions(fam, minus, plus, sigma_low, sigma_high)
        except IndeterminateError as e:
            logger.warning("Window %d: %s", n, e)
            dims.append(None)
            sigmas.append(min(e.singular_values, default=math.nan))
            continue
        dims.append(basis.dimension)
        sigmas.append(basis.smallest_singular_value)
    return WindowSensitivity(origin, windows, tuple(dims), tuple(sigmas))


# family files ------------------------------------------------------------------

_LINE = re.compile(r"^(T|repeat)\s+(-?\d+)(?:\s+(-?\d+))?\s*:\s*(.*)$")


def parse_family(text: str) -> Tuple[EvolutionFamily, Dict[str, Any]]:
    """Parse the structured-text family format.

    Lines: ``dim <d>``, ``window <n_lo> <n_hi>``, optional
    ``expect_index <i>``, then ``T <n>: <d*d row-major values>`` and
    ``repeat <n_from> <n_to>: <values>`` (inclusive). ``#`` starts a comment.
    """
    dim = window = None
    meta: Dict[str, Any] = {}
    steps: Dict[int, np.ndarray] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            if line.startswith("dim "):
                dim = int(line.split()[1])
            elif line.startswith("window "):
                parts = line.split()
                window = (int(parts[1]), int(parts[2]))
            elif line.startswith("expect_index "):
                meta["expect_index"] = int(line.split()[1])
            else:
                match = _LINE.match(line)
                if not match or dim is None:
                    raise InputError(f"unrecognized line: {line!r}")
                kind, first, second, values = match.groups()
                matrix = np.array([float(v) for v in values.split()], dtype=float)
                if matrix.size != dim * dim:
                    raise InputError(f"expected {dim * dim} values, got {matrix.size}")
                matrix = matrix.reshape(dim, dim)
                lo = int(first)
                hi = lo if kind == "T" else int(second)
                for n in range(lo, hi + 1):
                    steps[n] = matrix
        except (IndexError, ValueError) as e:
            raise InputError(f"family file line {lineno}: {e}") from e
    if dim is None or window is None:
        raise InputError("family file needs 'dim' and 'window' lines")
    missing = [n for n in range(window[0], window[1]) if n not in steps]
    if missing:
        raise InputError(f"family file misses steps {missing[:5]}")
    fam = EvolutionFamily(window[0], window[1], tuple(steps[n] for n in range(*window)))
    return fam, meta


def load_family(path: Union[str, Path]) -> Tuple[EvolutionFamily, Dict[str, Any]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise InputError(f"cannot read family file {path}: {e}") from e
    return parse_family(text)


def dump_family(
    fam: EvolutionFamily, path: Union[str, Path], expect_index: Optional[int] = None
) -> None:
    """Write ``fam`` in the structured-text format, folding equal runs into repeats."""
    lines = [f"dim {fam.dim}", f"window {fam.n_lo} {fam.n_hi}"]
    if expect_index is not None:
        lines.append(f"expect_index {expect_index}")
    n = fam.n_lo
    while n < fam.n_hi:
        end = n
        while end + 1 < fam.n_hi and np.array_equal(fam.step(end + 1), fam.step(n)):
            end += 1
        values = " ".join(repr(float(v)) for v in fam.step(n).ravel())
        lines.append(f"T {n}: {values}" if end == n else f"repeat {n} {end}: {values}")
        n = end + 1
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
        logger.info(f"Successfully exported family to {path}")
    except Exception as e:
        logger.error(f"Error exporting family to {path}: {e}")
        raise
