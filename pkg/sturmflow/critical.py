"""
Critical elements of the semiflow: equilibria with the spectrum of their
linearization, periodic orbits with their period map and Floquet spectrum,
and the pairing structure both spectra share.
"""

import logging
import math
import warnings
from dataclasses import dataclass, replace
from functools import cached_property, reduce
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy import linalg
from scipy.interpolate import CubicSpline

from sturmflow.errors import (
    ConvergenceError,
    DegenerateFieldError,
    InputError,
    PreconditionError,
    SingularJacobianError,
)
from sturmflow.grid import (
    Field,
    Grid,
    LinearizedTerm,
    NonlinearitySpec,
    derivative_values,
    filter_band,
)
from sturmflow.semiflow import FlowConfig, Trajectory, evolve, propagate_tangent, rhs
from sturmflow.sturm import count_zeros, multiple_zeros

logger = logging.getLogger(__name__)

NEWTON_TOL = 1e-10
ORBIT_TOL = 1e-6
SHOOT_TOL = 1e-9
PAIR_TOL = 1e-7
ANGLE_TOL = 1e-4
HYPERBOLIC_MARGIN = 1e-6
FLOQUET_TRUST = 1e-8
TRIVIAL_COSINE = 0.99
MINUS_ONE_TOL = 1e-3

PAIR_KINDS = ("simple-real", "double-real-semisimple", "double-real-jordan", "complex-pair")


# dense operators ---------------------------------------------------------------


def derivative_matrix(grid: Grid, order: int = 1) -> np.ndarray:
    """Dense Fourier-collocation differentiation matrix."""
    return derivative_values(grid, np.eye(grid.n_points), order).T


def filter_matrix(grid: Grid) -> np.ndarray:
    """Dense matrix of the 2/3-rule band projection."""
    return filter_band(grid, np.eye(grid.n_points)).T


def linearization_matrix(
    spec: NonlinearitySpec, grid: Grid, values: np.ndarray
) -> np.ndarray:
    """L_e = D2 + Pi (diag(f_u) + diag(f_p) D1) at the profile ``values``.

    With dealiasing the products are formed on the padded grid, so L_e is the
    exact Jacobian of the discrete right-hand side.
    """
    return derivative_matrix(grid, 2) + LinearizedTerm(spec, grid, values).matrix()


# spectra -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PairBlock:
    """One block of the pairing: position j, eigen-indices and a real basis."""

    position: int
    indices: Tuple[int, ...]
    kind: str
    basis: np.ndarray


def _real_span(vectors: List[np.ndarray], rank: int) -> np.ndarray:
    columns = []
    for v in vectors:
        columns.append(np.real(v))
        columns.append(np.imag(v))
    u, _, _ = linalg.svd(np.column_stack(columns), full_matrices=False)
    return u[:, :rank]


def _real_representative(v: np.ndarray) -> np.ndarray:
    """The real vector in span{v} (up to phase) with the largest real part."""
    phase = 0.5 * np.angle(np.sum(v * v))
    w = np.real(v * np.exp(-1j * phase))
    norm = np.linalg.norm(w)
    return w / norm if norm > 0 else w


def _is_real(value: complex) -> bool:
    return abs(value.imag) <= PAIR_TOL * max(1.0, abs(value))


def _pair_blocks(
    operator: np.ndarray, values: np.ndarray, vectors: np.ndarray, trusted: int
) -> Tuple[PairBlock, ...]:
    blocks = [
        PairBlock(
            0,
            (0,),
            "simple-real" if _is_real(values[0]) else "complex-pair",
            _real_representative(vectors[:, 0])[:, None],
        )
    ]
    for j in range(1, (trusted - 1) // 2 + 1):
        i, k = 2 * j - 1, 2 * j
        lam, mu = values[i], values[k]
        if not (_is_real(lam) and _is_real(mu)):
            kind = "complex-pair"
            basis = _real_span([vectors[:, i], vectors[:, k]], 2)
        elif abs(lam - mu) > PAIR_TOL * max(1.0, abs(lam)):
            kind = "simple-real"
            basis = _real_span([vectors[:, i], vectors[:, k]], 2)
        else:
            v = _real_representative(vectors[:, i])
            w = _real_representative(vectors[:, k])
            angle = math.acos(min(1.0, abs(float(np.dot(v, w)))))
            if angle < ANGLE_TOL:
                kind = "double-real-jordan"
                shifted = operator - lam.real * np.eye(operator.shape[0])
                g = linalg.lstsq(shifted, v)[0]
                g = g - np.dot(g, v) * v
                basis = np.column_stack([v, g / np.linalg.norm(g)])
            else:
                kind = "double-real-semisimple"
                basis = _real_span([vectors[:, i], vectors[:, k]], 2)
        blocks.append(PairBlock(j, (i, k), kind, basis))
    return tuple(blocks)


@dataclass(frozen=True, eq=False)
class SpectrumReport:
    """Ordered spectrum of a linearization (``kind="equilibrium"``) or of a
    period map (``kind="floquet"``) with its pairing blocks."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    morse_index: int
    hyperbolicity_margin: float
    pairing: Tuple[PairBlock, ...]
    kind: str
    trusted: int
    operator: np.ndarray
    grid: Optional[Grid] = None
    trivial_index: Optional[int] = None

    @property
    def hyperbolic(self) -> bool:
        return self.hyperbolicity_margin > HYPERBOLIC_MARGIN

    def key(self, i: int) -> float:
        """Ordering key: real part, or modulus for period maps."""
        value = self.eigenvalues[i]
        return float(abs(value)) if self.kind == "floquet" else float(value.real)

    def is_unstable(self, i: int) -> bool:
        if i == self.trivial_index:
            return False
        return self.key(i) > (1.0 if self.kind == "floquet" else 0.0)

    def eigenfunction(self, i: int) -> Tuple[Field, Field]:
        if self.grid is None:
            raise InputError("spectrum has no grid attached")
        v = self.eigenvectors[:, i]
        return Field(self.grid, np.real(v)), Field(self.grid, np.imag(v))

    def unstable_basis(self) -> np.ndarray:
        """Orthonormal real basis of the trusted unstable generalized eigenspace."""
        columns = []
        for i in range(self.trusted):
            if self.is_unstable(i):
                v = self.eigenvectors[:, i]
                columns.extend([np.real(v), np.imag(v)])
        for block in self.pairing:
            if block.kind == "double-real-jordan" and all(
                self.is_unstable(i) for i in block.indices
            ):
                columns.extend(block.basis.T)
        if not columns:
            return np.zeros((self.eigenvectors.shape[0], 0))
        return linalg.orth(np.column_stack(columns), rcond=1e-8)

    def left_unstable_basis(self) -> np.ndarray:
        """Real basis of the unstable left eigenvectors (the complement of the
        stable directions)."""
        values, vectors = linalg.eig(self.operator.T)
        if self.kind == "floquet":
            keys = np.abs(values)
            unstable = keys > 1.0
            if self.trivial_index is not None:
                trivial = self.eigenvalues[self.trivial_index]
                unstable[int(np.argmin(np.abs(values - trivial)))] = False
        else:
            unstable = values.real > 0.0
        columns = []
        for i in np.where(unstable)[0]:
            columns.extend([np.real(vectors[:, i]), np.imag(vectors[:, i])])
        if not columns:
            return np.zeros((self.operator.shape[0], 0))
        return linalg.orth(np.column_stack(columns), rcond=1e-8)

    def reordered(self, order) -> "SpectrumReport":
        """The same operator with eigenpairs permuted (pairing recomputed)."""
        order = np.asarray(order)
        values = self.eigenvalues[order]
        vectors = self.eigenvectors[:, order]
        return replace(
            self,
            eigenvalues=values,
            eigenvectors=vectors,
            pairing=_pair_blocks(self.operator, values, vectors, self.trusted),
        )


def equilibrium_spectrum(profile: Field, spec: NonlinearitySpec) -> SpectrumReport:
    """Dense eigendecomposition of L_e, ordered by non-increasing real part."""
    grid = profile.grid
    operator = linearization_matrix(spec, grid, profile.values)
    values, vectors = linalg.eig(operator)
    order = np.lexsort((-values.imag, -values.real))
    values, vectors = values[order], vectors[:, order]
    trusted = grid.trusted_count
    real = values.real[:trusted]
    return SpectrumReport(
        eigenvalues=values,
        eigenvectors=vectors,
        morse_index=int(np.count_nonzero(real > 0.0)),
        hyperbolicity_margin=float(np.min(np.abs(real))),
        pairing=_pair_blocks(operator, values, vectors, trusted),
        kind="equilibrium",
        trusted=trusted,
        operator=operator,
        grid=grid,
    )


def floquet_analysis(
    period_operator: np.ndarray,
    trivial_direction: Optional[np.ndarray] = None,
    grid: Optional[Grid] = None,
) -> SpectrumReport:
    """Floquet spectrum of a period map, ordered by non-increasing modulus.

    Args:
        period_operator: Dense matrix of Pi(p, 0)
        trivial_direction: gamma_t(0); the eigenvector best aligned with it
            (cosine >= 0.99) is the trivial multiplier and is excluded from
            the Morse index and the hyperbolicity margin
        grid: Grid of the fields; inferred from the matrix size when omitted

    Returns:
        SpectrumReport with ``kind="floquet"``
    """
    pi = np.asarray(period_operator, dtype=float)
    if pi.ndim != 2 or pi.shape[0] != pi.shape[1]:
        raise InputError(f"period map must be square, got shape {pi.shape}")
    n = pi.shape[0]
    if grid is None and n >= 8 and n % 2 == 0:
        grid = Grid(n)

    values, vectors = linalg.eig(pi)
    order = np.lexsort((-values.imag, -np.abs(values)))
    values, vectors = values[order], vectors[:, order]

    trusted = int(np.count_nonzero(np.abs(values) >= FLOQUET_TRUST))
    if grid is not None:
        trusted = min(trusted, grid.trusted_count)
    if trusted % 2 == 0:
        trusted = max(trusted - 1, 1)

    trivial_index = None
    if trivial_direction is not None:
        d = np.asarray(trivial_direction, dtype=float)
        d = d / np.linalg.norm(d)
        cosines = [
            float(np.linalg.norm(_real_span([vectors[:, i]], 1).T @ d))
            for i in range(trusted)
        ]
        best = int(np.argmax(cosines))
        if cosines[best] >= TRIVIAL_COSINE:
            trivial_index = best
        else:
            logger.warning(
                "No Floquet eigenvector aligned with the flow direction (best cosine %.4f)",
                cosines[best],
            )

    moduli = np.abs(values[:trusted])
    others = [i for i in range(trusted) if i != trivial_index]
    morse = int(sum(1 for i in others if moduli[i] > 1.0))
    margin = float(min((abs(moduli[i] - 1.0) for i in others), default=math.inf))
    return SpectrumReport(
        eigenvalues=values,
        eigenvectors=vectors,
        morse_index=morse,
        hyperbolicity_margin=margin,
        pairing=_pair_blocks(pi, values, vectors, trusted),
        kind="floquet",
        trusted=trusted,
        operator=pi,
        grid=grid,
        trivial_index=trivial_index,
    )


@dataclass(frozen=True)
class PairingVerdict:
    passed: bool
    lead_simple: bool
    separated: bool
    zero_counts_ok: bool
    zero_counts: Dict[int, Tuple[int, ...]]
    signs_ok: Optional[bool]
    no_minus_one: Optional[bool]
    failures: Tuple[str, ...]
    resolution_insufficient: bool


def verify_pairing(
    spectrum: SpectrumReport, samples: int = 8, max_pairs: Optional[int] = None
) -> PairingVerdict:
    """Check the pairing structure of a spectrum.

    Clause (a): the leading eigenvalue is real, simple and its eigenfunction
    has no zero. Clause (b): pairs are strictly separated in real part (or
    modulus). Clause (c): every sampled real member of pair j has exactly
    2j simple zeros. Period maps additionally check sign agreement of real
    pairs and that -1 is not an eigenvalue.

    Args:
        spectrum: Report to check
        samples: Members cos(t) b1 + sin(t) b2 sampled per pair
        max_pairs: Number of pairs to check; all trusted pairs by default

    Returns:
        PairingVerdict listing every failed clause
    """
    failures: List[str] = []
    values = spectrum.eigenvalues
    blocks = spectrum.pairing
    available = len(blocks) - 1
    wanted = available if max_pairs is None else max_pairs
    resolution_insufficient = wanted > available
    if resolution_insufficient:
        logger.warning(
            "Only %d trusted pairs available, %d requested", available, wanted
        )
    checked = blocks[: min(wanted, available) + 1]

    def tol(i):
        return PAIR_TOL * max(1.0, abs(spectrum.key(i)))

    lead = _real_representative(spectrum.eigenvectors[:, 0])
    lead_simple = (
        _is_real(values[0])
        and (values.size < 2 or spectrum.key(0) - spectrum.key(1) > tol(0))
        and bool(np.all(np.abs(lead) > 1e-6 * np.max(np.abs(lead))))
        and bool(np.all(np.sign(lead) == np.sign(lead[0])))
    )
    if not lead_simple:
        failures.append("(a) leading eigenvalue is not real, simple and of one sign")

    separated = True
    previous_min = spectrum.key(0)
    for block in checked[1:]:
        keys = [spectrum.key(i) for i in block.indices]
        if not max(keys) < previous_min - tol(block.indices[0]):
            separated = False
            failures.append(f"(b) pair {block.position} not separated from the previous block")
        previous_min = min(keys)

    zero_counts: Dict[int, Tuple[int, ...]] = {}
    zero_counts_ok = True
    if spectrum.grid is None:
        zero_counts_ok = False
        failures.append("(c) no grid to count zeros on")
    else:
        for block in checked[1:]:
            counts = []
            simple = True
            for theta in np.pi * np.arange(samples) / samples:
                member = math.cos(theta) * block.basis[:, 0] + math.sin(theta) * block.basis[:, 1]
                v = Field(spectrum.grid, member)
                try:
                    counts.append(count_zeros(v).count)
                    simple = simple and not multiple_zeros(v)
                except DegenerateFieldError:
                    counts.append(-1)
            zero_counts[block.position] = tuple(sorted(set(counts)))
            if set(counts) != {2 * block.position} or not simple:
                zero_counts_ok = False
                failures.append(
                    f"(c) pair {block.position}: zero counts {zero_counts[block.position]}"
                    f"{'' if simple else ' with a multiple zero'}, expected {2 * block.position}"
                )

    signs_ok = no_minus_one = None
    if spectrum.kind == "floquet":
        signs_ok = True
        for block in checked[1:]:
            if block.kind != "complex-pair":
                i, k = block.indices
                if np.sign(values[i].real) != np.sign(values[k].real):
                    signs_ok = False
                    failures.append(f"real Floquet pair {block.position} has mixed signs")
        no_minus_one = bool(np.min(np.abs(values + 1.0)) >= MINUS_ONE_TOL)
        if not no_minus_one:
            failures.append("-1 is a Floquet eigenvalue")

    return PairingVerdict(
        passed=not failures,
        lead_simple=lead_simple,
        separated=separated,
        zero_counts_ok=zero_counts_ok,
        zero_counts=zero_counts,
        signs_ok=signs_ok,
        no_minus_one=no_minus_one,
        failures=tuple(failures),
        resolution_insufficient=resolution_insufficient,
    )


# equilibria --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EquilibriumRecord:
    profile: Field
    residual: float
    spectrum: SpectrumReport
    label: str = ""

    kind = "equilibrium"

    @property
    def morse_index(self) -> int:
        return self.spectrum.morse_index

    @property
    def grid(self) -> Grid:
        return self.profile.grid


def _solve(matrix: np.ndarray, rhs_vector: np.ndarray, what: str) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("error", linalg.LinAlgWarning)
        try:
            return linalg.solve(matrix, rhs_vector)
        except (linalg.LinAlgError, linalg.LinAlgWarning) as e:
            raise SingularJacobianError(f"{what}: singular Jacobian ({e})") from e


def _bordered(matrix: np.ndarray, column: np.ndarray, row: np.ndarray) -> np.ndarray:
    n = matrix.shape[0]
    out = np.zeros((n + 1, n + 1))
    out[:n, :n] = matrix
    out[:n, n] = column
    out[n, :n] = row
    return out


def find_equilibrium(
    guess: Field,
    spec: NonlinearitySpec,
    newton_tol: float = NEWTON_TOL,
    max_iter: int = 50,
    label: str = "",
) -> EquilibriumRecord:
    """Newton iteration on u_xx + Pi f(x, u, u_x) = 0.

    For translation-invariant nonlinearities and a nonconstant guess the
    shift symmetry is removed by a bordered phase condition against
    ``guess_x``.

    Args:
        guess: Starting profile
        spec: Nonlinearity
        newton_tol: Sup-norm residual accepted as converged
        max_iter: Newton steps before giving up

    Returns:
        EquilibriumRecord with the dense spectrum of L_e

    Raises:
        InputError: If the guess is not finite
        ConvergenceError: If the residual stays above ``newton_tol``
        SingularJacobianError: If the Newton matrix is numerically singular
    """
    if not guess.is_finite():
        raise InputError("equilibrium guess has non-finite values")
    grid = guess.grid
    u = np.array(guess.values)
    scale = max(1.0, guess.sup_norm())
    pinned = spec.is_translation_invariant and float(np.ptp(u)) > 1e-8 * scale
    phase_row = derivative_values(grid, u, 1) if pinned else None

    residual = math.inf
    for iteration in range(max_iter + 1):
        f_val = rhs(spec, grid, u)
        residual = float(np.max(np.abs(f_val)))
        logger.debug("Newton %d: residual %.3e", iteration, residual)
        if residual <= newton_tol:
            break
        if iteration == max_iter or not math.isfinite(residual):
            raise ConvergenceError(
                f"Newton did not converge in {max_iter} iterations", residual
            )
        jac = linearization_matrix(spec, grid, u)
        if pinned:
            system = _bordered(jac, phase_row, phase_row)
            step = _solve(system, np.append(-f_val, 0.0), "equilibrium Newton")[:-1]
        else:
            step = _solve(jac, -f_val, "equilibrium Newton")

        damping = 1.0
        while damping >= 1.0 / 1024:
            trial = u + damping * step
            trial_res = float(np.max(np.abs(rhs(spec, grid, trial))))
            if math.isfinite(trial_res) and trial_res < residual:
                break
            damping /= 2.0
        else:
            trial = u + step
        u = trial

    profile = Field(grid, u)
    return EquilibriumRecord(profile, residual, equilibrium_spectrum(profile, spec), label)


# periodic orbits ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RotatingWaveSeed:
    """Ansatz u(x, t) = profile(x + speed * t)."""

    profile: Field
    speed: float


@dataclass(frozen=True, eq=False)
class PeriodicOrbitRecord:
    snapshots: Trajectory
    period: float
    closure_error: float
    spectrum: Optional[SpectrumReport] = None
    label: str = ""
    speed: Optional[float] = None

    kind = "orbit"

    @property
    def morse_index(self) -> int:
        if self.spectrum is None:
            raise PreconditionError("orbit has no Floquet spectrum yet")
        return self.spectrum.morse_index

    @property
    def grid(self) -> Grid:
        return self.snapshots.grid

    @property
    def start(self) -> Field:
        return self.snapshots.initial

    @cached_property
    def _spline(self) -> CubicSpline:
        snaps = self.snapshots
        states = np.array(snaps.states)
        states[-1] = states[0]
        return CubicSpline(snaps.times - snaps.t_start, states, axis=0, bc_type="periodic")

    def point(self, phase: float) -> np.ndarray:
        """gamma(phase), phase taken modulo the period."""
        return self._spline(float(phase) % self.period)

    def flow_direction(self, phase: Optional[float] = None) -> np.ndarray:
        """gamma_t(phase), gamma_t(0) by default."""
        state = self.snapshots.states[0] if phase is None else self.point(phase)
        return rhs(self.snapshots.spec, self.grid, state)


def _profile_wavenumber(profile: np.ndarray) -> int:
    """gcd of the wavenumbers carrying the profile; 1 for a generic profile."""
    coeffs = np.abs(np.fft.rfft(profile))[1:]
    significant = np.where(coeffs > 1e-8 * max(coeffs.max(initial=0.0), 1e-300))[0] + 1
    if significant.size == 0:
        return 1
    return int(reduce(math.gcd, (int(k) for k in significant)))


def _rotating_wave(
    seed: RotatingWaveSeed,
    spec: NonlinearitySpec,
    newton_tol: float,
    max_iter: int,
) -> Tuple[np.ndarray, float]:
    if not spec.is_translation_invariant:
        raise InputError("rotating waves need an x-independent nonlinearity")
    grid = seed.profile.grid
    phi = np.array(seed.profile.values)
    speed = float(seed.speed)
    phase_row = derivative_values(grid, phi, 1)
    if np.max(np.abs(phase_row)) <= 1e-8 * max(1.0, seed.profile.sup_norm()):
        raise ConvergenceError("degenerate phase condition: the seed profile is constant")
    d1 = derivative_matrix(grid, 1)

    residual = math.inf
    for iteration in range(max_iter + 1):
        dphi = derivative_values(grid, phi, 1)
        f_val = rhs(spec, grid, phi) - speed * dphi
        residual = float(np.max(np.abs(f_val)))
        logger.debug("Rotating-wave Newton %d: residual %.3e", iteration, residual)
        if residual <= newton_tol:
            break
        if iteration == max_iter or not math.isfinite(residual):
            raise ConvergenceError("rotating-wave Newton did not converge", residual)
        jac = linearization_matrix(spec, grid, phi) - speed * d1
        system = _bordered(jac, -dphi, phase_row)
        step = _solve(system, np.append(-f_val, 0.0), "rotating-wave Newton")
        phi = phi + step[:-1]
        speed += float(step[-1])

    if abs(speed) < 1e-8:
        raise ConvergenceError("rotating-wave speed vanished: the profile is an equilibrium")
    return phi, speed


def _shoot(
    seed: Trajectory,
    spec: NonlinearitySpec,
    cfg: FlowConfig,
    max_iter: int,
) -> Tuple[np.ndarray, float]:
    grid = seed.grid
    n = grid.n_points
    u0 = np.array(seed.states[0])
    period = seed.t_end - seed.t_start
    fine = replace(cfg, save_every=1)

    residual = math.inf
    for iteration in range(max_iter + 1):
        if not period > 0:
            raise ConvergenceError("shooting drove the period to a non-positive value")
        velocity0 = rhs(spec, grid, u0)
        if np.max(np.abs(velocity0)) < 1e-6:
            raise ConvergenceError("shooting converged to an equilibrium, not an orbit")
        traj = evolve(Field(grid, u0), spec, period, fine)
        gap = traj.states[-1] - u0
        residual = float(np.max(np.abs(gap)))
        logger.debug("Shooting %d: period %.10g, closure %.3e", iteration, period, residual)
        if residual <= SHOOT_TOL:
            break
        if iteration == max_iter:
            raise ConvergenceError("shooting Newton did not converge", residual)
        monodromy = propagate_tangent(traj, np.eye(n), traj.t_start, traj.t_end).T
        velocity1 = rhs(spec, grid, traj.states[-1])
        system = _bordered(monodromy - np.eye(n), velocity1, velocity0)
        step = _solve(system, np.append(-gap, 0.0), "shooting Newton")
        u0 = u0 + step[:-1]
        period += float(step[-1])
    return u0, period


def find_periodic_orbit(
    seed: Union[RotatingWaveSeed, Trajectory],
    spec: NonlinearitySpec,
    cfg: FlowConfig = FlowConfig(),
    orbit_tol: float = ORBIT_TOL,
    newton_tol: float = NEWTON_TOL,
    max_iter: int = 30,
    label: str = "",
    with_spectrum: bool = True,
) -> PeriodicOrbitRecord:
    """Locate a periodic orbit from a rotating-wave ansatz or a near-closed loop.

    Rotating waves solve the co-moving problem phi'' + f(phi, phi') - s phi' = 0
    for (phi, s) and have minimal period 2*pi / (m |s|), m the gcd of the
    profile's wavenumbers. Loops are refined by single shooting on (u0, p)
    with the phase condition <u_t(0), du0> = 0.

    Raises:
        ConvergenceError: On non-convergence, a degenerate phase condition or
            a closure error above ``orbit_tol``
    """
    speed: Optional[float] = None
    if isinstance(seed, RotatingWaveSeed):
        phi, speed = _rotating_wave(seed, spec, newton_tol, max_iter)
        m = _profile_wavenumber(phi)
        period = 2.0 * math.pi / (m * abs(speed))
        start = Field(seed.profile.grid, phi)
        logger.debug("Rotating wave: speed %.6g, wavenumber %d, period %.6g", speed, m, period)
    else:
        u0, period = _shoot(seed, spec, cfg, max_iter)
        start = Field(seed.grid, u0)

    snapshots = evolve(start, spec, period, replace(cfg, save_every=1))
    closure = float(np.max(np.abs(snapshots.states[-1] - snapshots.states[0])))
    if closure > orbit_tol:
        raise ConvergenceError(f"orbit does not close within {orbit_tol:.1e}", closure)
    record = PeriodicOrbitRecord(snapshots, period, closure, None, label, speed)
    if with_spectrum:
        record = replace(
            record,
            spectrum=floquet_analysis(
                period_map(record, orbit_tol), record.flow_direction(), record.grid
            ),
        )
    return record


def period_map(orbit: PeriodicOrbitRecord, orbit_tol: float = ORBIT_TOL) -> np.ndarray:
    """Dense Pi(p, 0): the tangent flow of every basis field over one period.

    Raises:
        PreconditionError: If the orbit's closure error exceeds ``orbit_tol``
        BlowupError: If the tangent flow exceeds its bound
    """
    if orbit.closure_error > orbit_tol:
        raise PreconditionError(
            f"closure error {orbit.closure_error:.3e} exceeds orbit_tol {orbit_tol:.1e}"
        )
    snaps = orbit.snapshots
    basis = np.eye(orbit.grid.n_points)
    return propagate_tangent(snaps, basis, snaps.t_start, snaps.t_end).T


CriticalElement = Union[EquilibriumRecord, PeriodicOrbitRecord]
