"""
Periodic grids on the circle, Fourier-collocation derivatives and the
nonlinearities f(x, u, p) of u_t = u_xx + f(x, u, u_x).
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from sturmflow.errors import InputError

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

# integral of exp(-1/(1-s^2)) over (-1, 1)
BUMP_MASS = 0.4439938161680794

MAX_POWER = 5

# bump terms are not polynomial; padding resolves them like a cubic
BUMP_DEALIAS_DEGREE = 3


def _readonly(values: np.ndarray) -> np.ndarray:
    values.flags.writeable = False
    return values


@dataclass(frozen=True)
class Grid:
    """Uniform grid x_j = 2*pi*j/n on S^1 (no duplicated endpoint)."""

    n_points: int
    domain_length: float = TWO_PI

    def __post_init__(self):
        if (
            not isinstance(self.n_points, (int, np.integer))
            or self.n_points < 8
            or self.n_points % 2
        ):
            raise InputError(
                f"n_points must be an even integer >= 8, got {self.n_points!r}"
            )
        if self.domain_length != TWO_PI:
            raise InputError("domain_length is fixed to 2*pi")

    @cached_property
    def x(self) -> np.ndarray:
        return _readonly(TWO_PI * np.arange(self.n_points) / self.n_points)

    @property
    def spacing(self) -> float:
        return TWO_PI / self.n_points

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Nonnegative wavenumbers of the real FFT (0..n/2)."""
        return _readonly(np.arange(self.n_points // 2 + 1, dtype=float))

    @property
    def band(self) -> int:
        """Largest trusted (dealiased) wavenumber."""
        return self.n_points // 3

    @property
    def trusted_count(self) -> int:
        return min(2 * self.band + 1, self.n_points)

    @cached_property
    def first_derivative_symbol(self) -> np.ndarray:
        symbol = 1j * self.wavenumbers
        # the Nyquist mode has no real derivative
        symbol[-1] = 0.0
        return _readonly(symbol)

    @cached_property
    def second_derivative_symbol(self) -> np.ndarray:
        return _readonly(-(self.wavenumbers**2))

    @cached_property
    def band_mask(self) -> np.ndarray:
        return _readonly((self.wavenumbers <= self.band).astype(float))

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.n_points * factor)


def fourier_apply(grid: Grid, symbol: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Apply a Fourier multiplier along the last axis of ``values``."""
    coeffs = np.fft.rfft(values, axis=-1)
    return np.fft.irfft(coeffs * symbol, n=grid.n_points, axis=-1)


def derivative_values(grid: Grid, values: np.ndarray, order: int = 1) -> np.ndarray:
    if order == 1:
        return fourier_apply(grid, grid.first_derivative_symbol, values)
    if order == 2:
        return fourier_apply(grid, grid.second_derivative_symbol, values)
    raise InputError(f"derivative order must be 1 or 2, got {order}")


def filter_band(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Project onto wavenumbers |k| <= n//3 (the 2/3 rule)."""
    return fourier_apply(grid, grid.band_mask, values)


@dataclass(frozen=True, eq=False)
class Field:
    """Real samples of a periodic function on a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.n_points,):
            raise InputError(
                f"field needs {self.grid.n_points} samples, got shape {values.shape}"
            )
        object.__setattr__(self, "values", _readonly(values))

    @classmethod
    def from_function(cls, grid: Grid, func: Callable[[np.ndarray], Any]) -> "Field":
        values = np.broadcast_to(np.asarray(func(grid.x), dtype=float), grid.x.shape)
        return cls(grid, values)

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "Field":
        return cls(grid, np.full(grid.n_points, float(value)))

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls.constant(grid, 0.0)

    def _coerce(self, other: Union["Field", float]) -> Union[np.ndarray, float]:
        if isinstance(other, Field):
            if other.grid != self.grid:
                raise InputError("fields live on different grids")
            return other.values
        return float(other)

    def __add__(self, other: Union["Field", float]) -> "Field":
        return Field(self.grid, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other: Union["Field", float]) -> "Field":
        return Field(self.grid, self.values - self._coerce(other))

    def __rsub__(self, other: float) -> "Field":
        return Field(self.grid, float(other) - self.values)

    def __mul__(self, scalar: float) -> "Field":
        return Field(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "Field":
        return Field(self.grid, -self.values)

    def __len__(self) -> int:
        return self.grid.n_points

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def inner(self, other: "Field") -> float:
        """Grid-weighted L2 inner product (2*pi/n times the dot product)."""
        return float(np.dot(self.values, self._coerce(other))) * self.grid.spacing

    def l2_norm(self) -> float:
        return math.sqrt(max(self.inner(self), 0.0))


def spectral_derivative(field: Field, order: int = 1) -> Field:
    """Fourier-collocation derivative of a field.

    Args:
        field: Field to differentiate
        order: 1 or 2

    Returns:
        The derivative, exact on resolved trigonometric polynomials

    Raises:
        InputError: If the field holds non-finite values or the order is invalid
    """
    if not field.is_finite():
        raise InputError("cannot differentiate a field with non-finite values")
    return Field(field.grid, derivative_values(field.grid, field.values, order))


@dataclass(frozen=True)
class TrigCoefficient:
    """c(x) = constant + sum_m cos[m-1] cos(m x) + sin[m-1] sin(m x)."""

    constant: float = 0.0
    cos: Tuple[float, ...] = ()
    sin: Tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "constant", float(self.constant))
        object.__setattr__(self, "cos", tuple(float(c) for c in self.cos))
        object.__setattr__(self, "sin", tuple(float(s) for s in self.sin))

    @property
    def is_constant(self) -> bool:
        return not any(self.cos) and not any(self.sin)

    def evaluate(self, x: np.ndarray) -> Union[np.ndarray, float]:
        if self.is_constant:
            return self.constant
        result = np.full(np.shape(x), self.constant)
        for m, c in enumerate(self.cos, start=1):
            result = result + c * np.cos(m * x)
        for m, s in enumerate(self.sin, start=1):
            result = result + s * np.sin(m * x)
        return result

    def to_dict(self) -> Dict[str, Any]:
        return {"constant": self.constant, "cos": list(self.cos), "sin": list(self.sin)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrigCoefficient":
        return cls(
            data.get("constant", 0.0),
            tuple(data.get("cos", ())),
            tuple(data.get("sin", ())),
        )


@dataclass(frozen=True)
class PolynomialTerm:
    """c(x) * u**power."""

    power: int
    coefficient: TrigCoefficient = TrigCoefficient()

    kind = "polynomial"

    def __post_init__(self):
        if not 0 <= int(self.power) <= MAX_POWER:
            raise InputError(f"polynomial power must be in 0..{MAX_POWER}")

    @property
    def depends_on_x(self) -> bool:
        return not self.coefficient.is_constant

    def value(self, x, u, p):
        return self.coefficient.evaluate(x) * u**self.power

    def partials(self, x, u, p):
        c = self.coefficient.evaluate(x)
        if self.power == 0:
            return np.zeros_like(u), np.zeros_like(u)
        return c * self.power * u ** (self.power - 1), np.zeros_like(u)

    def second_partials(self, x, u, p):
        zero = np.zeros_like(u)
        if self.power < 2:
            return zero, zero, zero
        c = self.coefficient.evaluate(x)
        return c * self.power * (self.power - 1) * u ** (self.power - 2), zero, zero

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "power": int(self.power), **self.coefficient.to_dict()}


@dataclass(frozen=True)
class AdvectionTerm:
    """c * p."""

    c: float

    kind = "advection"
    depends_on_x = False

    def value(self, x, u, p):
        return self.c * p

    def partials(self, x, u, p):
        return np.zeros_like(u), np.full_like(p, self.c)

    def second_partials(self, x, u, p):
        zero = np.zeros_like(u)
        return zero, zero, zero

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "c": float(self.c)}


def bump_profile(s) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unit-mass bump exp(-1/(1-s^2)) and its first two derivatives."""
    s = np.asarray(s, dtype=float)
    q = 1.0 - s * s
    # exp(-1/q) underflows to exactly zero long before q reaches 1e-6
    inside = q > 1e-6
    q = np.where(inside, q, 1.0)
    b = np.where(inside, np.exp(-1.0 / q) / BUMP_MASS, 0.0)
    g = -2.0 * s / q**2
    dg = -(2.0 + 6.0 * s * s) / q**3
    return b, b * g, b * (g * g + dg)


def wrap_angle(d):
    """Map angular differences into [-pi, pi)."""
    return np.mod(np.asarray(d, dtype=float) + math.pi, TWO_PI) - math.pi


@dataclass(frozen=True)
class BumpTerm:
    """A * b((x-x0)/wx) * b((u-u0)/wu) * b((p-p0)/wp), x taken on the circle."""

    amplitude: float
    x0: float
    u0: float
    p0: float
    width_x: float
    width_u: float
    width_p: float

    kind = "bump"
    depends_on_x = True

    def __post_init__(self):
        if min(self.width_x, self.width_u, self.width_p) <= 0:
            raise InputError("bump widths must be positive")

    def _factors(self, x, u, p):
        bx = bump_profile(wrap_angle(x - self.x0) / self.width_x)[0]
        bu = bump_profile((u - self.u0) / self.width_u)
        bp = bump_profile((p - self.p0) / self.width_p)
        return bx, bu, bp

    def value(self, x, u, p):
        bx, bu, bp = self._factors(x, u, p)
        return self.amplitude * bx * bu[0] * bp[0]

    def partials(self, x, u, p):
        bx, bu, bp = self._factors(x, u, p)
        scale = self.amplitude * bx
        return (
            scale * bu[1] * bp[0] / self.width_u,
            scale * bu[0] * bp[1] / self.width_p,
        )

    def second_partials(self, x, u, p):
        bx, bu, bp = self._factors(x, u, p)
        scale = self.amplitude * bx
        return (
            scale * bu[2] * bp[0] / self.width_u**2,
            scale * bu[1] * bp[1] / (self.width_u * self.width_p),
            scale * bu[0] * bp[2] / self.width_p**2,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "amplitude": float(self.amplitude),
            "x0": float(self.x0),
            "u0": float(self.u0),
            "p0": float(self.p0),
            "width_x": float(self.width_x),
            "width_u": float(self.width_u),
            "width_p": float(self.width_p),
        }


Term = Union[PolynomialTerm, AdvectionTerm, BumpTerm]


def term_from_dict(data: Dict[str, Any]) -> Term:
    kind = data.get("kind")
    try:
        if kind == "polynomial":
            return PolynomialTerm(int(data["power"]), TrigCoefficient.from_dict(data))
        if kind == "advection":
            return AdvectionTerm(float(data["c"]))
        if kind == "bump":
            return BumpTerm(
                **{k: float(v) for k, v in data.items() if k != "kind"}
            )
    except (KeyError, TypeError) as e:
        raise InputError(f"malformed {kind} term: {e}") from e
    raise InputError(f"unknown term kind: {kind!r}")


@dataclass(frozen=True)
class NonlinearitySpec:
    """A sum of primitive terms making up f(x, u, p)."""

    terms: Tuple[Term, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))

    def value(self, x, u, p) -> np.ndarray:
        total = np.zeros(np.broadcast(x, u, p).shape)
        for term in self.terms:
            total = total + term.value(x, u, p)
        return total

    def partials(self, x, u, p) -> Tuple[np.ndarray, np.ndarray]:
        shape = np.broadcast(x, u, p).shape
        f_u, f_p = np.zeros(shape), np.zeros(shape)
        for term in self.terms:
            du, dp = term.partials(x, u, p)
            f_u = f_u + du
            f_p = f_p + dp
        return f_u, f_p

    def second_partials(self, x, u, p) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        shape = np.broadcast(x, u, p).shape
        acc = [np.zeros(shape), np.zeros(shape), np.zeros(shape)]
        for term in self.terms:
            for i, part in enumerate(term.second_partials(x, u, p)):
                acc[i] = acc[i] + part
        return acc[0], acc[1], acc[2]

    @property
    def needs_dealiasing(self) -> bool:
        """True when f creates wavenumbers the grid cannot represent."""
        return any(
            isinstance(t, BumpTerm)
            or (
                isinstance(t, PolynomialTerm)
                and (t.power >= 2 or (t.power == 1 and t.depends_on_x))
            )
            for t in self.terms
        )

    @property
    def dealias_degree(self) -> int:
        degree = 1
        for t in self.terms:
            if isinstance(t, PolynomialTerm):
                degree = max(degree, t.power)
            elif isinstance(t, BumpTerm):
                degree = max(degree, BUMP_DEALIAS_DEGREE)
        return degree

    @property
    def coefficient_modes(self) -> int:
        """Highest wavenumber among the x-dependent coefficients."""
        return max(
            (
                max(len(t.coefficient.cos), len(t.coefficient.sin))
                for t in self.terms
                if isinstance(t, PolynomialTerm) and t.power >= 1
            ),
            default=0,
        )

    @property
    def is_translation_invariant(self) -> bool:
        return not any(t.depends_on_x for t in self.terms)

    @property
    def depends_on_gradient(self) -> bool:
        return any(isinstance(t, (AdvectionTerm, BumpTerm)) for t in self.terms)

    def with_term(self, term: Term) -> "NonlinearitySpec":
        return NonlinearitySpec(self.terms + (term,))

    def to_dict(self) -> Dict[str, Any]:
        return {"terms": [t.to_dict() for t in self.terms]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NonlinearitySpec":
        if not isinstance(data, dict) or not isinstance(data.get("terms", []), list):
            raise InputError("nonlinearity must be an object with a 'terms' list")
        return cls(tuple(term_from_dict(t) for t in data.get("terms", [])))


def chafee_infante(
    lam: float, drift: float = 0.0, cos_u: float = 0.0, cubic: float = -1.0
) -> NonlinearitySpec:
    """f = lam*u + cos_u*cos(x)*u + cubic*u^3 + drift*p."""
    terms: List[Term] = [
        PolynomialTerm(1, TrigCoefficient(lam, (cos_u,) if cos_u else ())),
    ]
    if cubic:
        terms.append(PolynomialTerm(3, TrigCoefficient(cubic)))
    if drift:
        terms.append(AdvectionTerm(drift))
    return NonlinearitySpec(tuple(terms))


def eval_nonlinearity(spec: NonlinearitySpec, u: Field) -> Field:
    """Pointwise f(x_j, u(x_j), u_x(x_j)) with the spectral u_x (no filtering)."""
    p = spectral_derivative(u, 1).values
    return Field(u.grid, spec.value(u.grid.x, u.values, p))


# dealiasing ------------------------------------------------------------------


def padded_size(spec: NonlinearitySpec, grid: Grid) -> int:
    """Smallest even m for which f sampled on m points aliases only above the band.

    Products of degree d of the n-point modes reach wavenumber d*n/2 plus the
    coefficient modes; sampling on m points folds K onto m - K, which stays
    above the band once m > K_max + band.
    """
    top = spec.dealias_degree * (grid.n_points // 2) + spec.coefficient_modes
    m = top + grid.band + 1
    return max(grid.n_points, m + m % 2)


def evaluation_grid(spec: NonlinearitySpec, grid: Grid) -> Grid:
    """The grid f is sampled on: padded when its products alias into the band."""
    return Grid(padded_size(spec, grid)) if spec.needs_dealiasing else grid


def pad_values(grid: Grid, values: np.ndarray, fine: Grid) -> np.ndarray:
    """Trigonometric interpolant of ``values`` sampled on the finer grid."""
    if fine == grid:
        return np.asarray(values, dtype=float)
    coeffs = np.fft.rfft(values, axis=-1)
    # the Nyquist coefficient carries both +-n/2 on the coarse grid
    coeffs[..., -1] *= 0.5
    scale = fine.n_points / grid.n_points
    return np.fft.irfft(coeffs, n=fine.n_points, axis=-1) * scale


def truncate_values(grid: Grid, values: np.ndarray, fine: Grid) -> np.ndarray:
    """Band projection of samples on ``fine`` back onto ``grid``."""
    coeffs = np.fft.rfft(values, axis=-1)[..., : grid.n_points // 2 + 1]
    coeffs = coeffs * (grid.n_points / fine.n_points) * grid.band_mask
    return np.fft.irfft(coeffs, n=grid.n_points, axis=-1)


@lru_cache(maxsize=16)
def transfer_matrices(grid: Grid, fine: Grid) -> Tuple[np.ndarray, np.ndarray]:
    """Dense padding (m x n) and truncation (n x m) matrices."""
    up = pad_values(grid, np.eye(grid.n_points), fine).T
    down = truncate_values(grid, np.eye(fine.n_points), fine).T
    return _readonly(up), _readonly(down)


def _sample(
    spec: NonlinearitySpec, grid: Grid, values: np.ndarray
) -> Tuple[Grid, np.ndarray, np.ndarray]:
    fine = evaluation_grid(spec, grid)
    p = derivative_values(grid, values, 1)
    return fine, pad_values(grid, values, fine), pad_values(grid, p, fine)


def nonlinear_term(spec: NonlinearitySpec, grid: Grid, values: np.ndarray) -> np.ndarray:
    """The nonlinear part of the flow.

    Nonlinearities that create unrepresentable wavenumbers are evaluated on the
    zero-padded grid of :func:`padded_size` and projected back onto the band.
    """
    fine, u, p = _sample(spec, grid, values)
    f = spec.value(fine.x, u, p)
    return f if fine == grid else truncate_values(grid, f, fine)


def linearization_coefficients(
    spec: NonlinearitySpec, grid: Grid, values: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """a = f_u and b = f_p along a profile, on the grid f is evaluated on."""
    fine, u, p = _sample(spec, grid, values)
    return spec.partials(fine.x, u, p)


class LinearizedTerm:
    """Derivative of :func:`nonlinear_term` at a profile, and its transpose.

    Acts on the last axis, so rows of a 2-D array are separate vectors.
    """

    def __init__(self, spec: NonlinearitySpec, grid: Grid, values: np.ndarray):
        self.grid = grid
        self.fine = evaluation_grid(spec, grid)
        self.a, self.b = linearization_coefficients(spec, grid, values)
        self.padded = self.fine != grid
        if self.padded:
            self.up, self.down = transfer_matrices(grid, self.fine)

    def apply(self, v: np.ndarray) -> np.ndarray:
        dv = derivative_values(self.grid, v, 1)
        if not self.padded:
            return self.a * v + self.b * dv
        return (self.a * (v @ self.up.T) + self.b * (dv @ self.up.T)) @ self.down.T

    def apply_transpose(self, w: np.ndarray) -> np.ndarray:
        if not self.padded:
            return self.a * w - derivative_values(self.grid, self.b * w, 1)
        lifted = w @ self.down
        return (self.a * lifted) @ self.up - derivative_values(
            self.grid, (self.b * lifted) @ self.up, 1
        )

    def matrix(self) -> np.ndarray:
        return self.apply(np.eye(self.grid.n_points)).T


@dataclass(frozen=True)
class DissipativityVerdict:
    dissipative: bool
    max_value: float
    worst_sample: Tuple[float, float]
    first_violation: Optional[Tuple[float, float, float]]
    growth_constant: float
    growth_ok: Optional[bool]
    epsilon: float


def check_dissipativity(
    spec: NonlinearitySpec,
    kappa: float,
    radius: float,
    epsilon: float = 0.5,
    growth_bound: Optional[float] = None,
    n_x: int = 64,
    n_u: int = 401,
    n_xi: int = 101,
) -> DissipativityVerdict:
    """Sample u*f(x,u,0) for kappa <= |u| <= radius and the gradient growth.

    Args:
        spec: Nonlinearity to check
        kappa: Inner radius of the sampled range
        radius: Outer radius R
        epsilon: Exponent slack in |f| <= k(R)(1 + |xi|^(2-epsilon))
        growth_bound: User-supplied k(R); growth_ok is None when omitted

    Returns:
        DissipativityVerdict with the worst and the first violating sample
    """
    if kappa <= 0 or radius <= kappa:
        raise InputError("need 0 < kappa < R")
    x = TWO_PI * np.arange(n_x) / n_x
    mags = np.linspace(kappa, radius, n_u)
    u = np.concatenate([-mags[::-1], mags])
    X, U = np.meshgrid(x, u, indexing="ij")
    w = U * spec.value(X, U, np.zeros_like(U))
    worst = np.unravel_index(int(np.argmax(w)), w.shape)
    max_value = float(w[worst])

    first_violation = None
    violating = w > 0.0
    if violating.any():
        cols = np.where(violating.any(axis=0))[0]
        col = min(cols, key=lambda j: (abs(u[j]), -u[j]))
        row = int(np.argmax(w[:, col]))
        first_violation = (float(x[row]), float(u[col]), float(w[row, col]))

    xi = np.linspace(-10.0 * radius, 10.0 * radius, n_xi)
    ub = np.linspace(-radius, radius, 41)
    Xg, Ug, XIg = np.meshgrid(x, ub, xi, indexing="ij")
    ratio = np.abs(spec.value(Xg, Ug, XIg)) / (1.0 + np.abs(XIg) ** (2.0 - epsilon))
    growth_constant = float(ratio.max())
    growth_ok = None if growth_bound is None else growth_constant <= growth_bound

    verdict = DissipativityVerdict(
        dissipative=max_value <= 0.0,
        max_value=max_value,
        worst_sample=(float(x[worst[0]]), float(u[worst[1]])),
        first_violation=first_violation,
        growth_constant=growth_constant,
        growth_ok=growth_ok,
        epsilon=epsilon,
    )
    if not verdict.dissipative:
        logger.warning(
            "Dissipativity violated: u*f = %.3g at x=%.3f, u=%.3f",
            max_value,
            *verdict.worst_sample,
        )
    return verdict
