"""Tests for equilibria, periodic orbits and their spectra."""

import math

import numpy as np
import pytest

from sturmflow.critical import (
    PeriodicOrbitRecord,
    RotatingWaveSeed,
    equilibrium_spectrum,
    filter_matrix,
    find_equilibrium,
    find_periodic_orbit,
    floquet_analysis,
    period_map,
    verify_pairing,
)
from sturmflow.errors import ConvergenceError, InputError, PreconditionError
from sturmflow.grid import Field, Grid, NonlinearitySpec, chafee_infante, filter_band
from sturmflow.semiflow import FlowConfig, evolve


@pytest.mark.parametrize("lam", [0.5, 2.5, 6.5])
def test_linear_spectrum_matches_lambda_minus_k_squared(lam):
    """Test the eigenvalues of d^2/dx^2 + lam on n = 128."""
    grid = Grid(128)
    spectrum = equilibrium_spectrum(Field.zeros(grid), chafee_infante(lam, cubic=0.0))
    expected = np.sort(
        np.concatenate([[lam], np.repeat(lam - np.arange(1, grid.band + 1) ** 2.0, 2)])
    )[::-1]
    assert spectrum.trusted == expected.size
    errors = np.abs(spectrum.eigenvalues[: spectrum.trusted] - expected)
    assert np.all(errors <= 1e-8 * np.maximum(1.0, np.abs(expected)))
    assert spectrum.morse_index == int(np.count_nonzero(expected > 0))


def test_linear_spectrum_pairing_passes():
    """Test that pair j of the linear problem carries 2j zeros."""
    spectrum = equilibrium_spectrum(Field.zeros(Grid(64)), chafee_infante(2.5, cubic=0.0))
    verdict = verify_pairing(spectrum, max_pairs=8)
    assert verdict.passed, verdict.failures
    assert verdict.zero_counts[3] == (6,)
    assert spectrum.pairing[1].kind == "double-real-semisimple"


def test_reordered_spectrum_fails_pairing():
    """Test that swapping eigenpairs across pairs is detected."""
    spectrum = equilibrium_spectrum(Field.zeros(Grid(32)), chafee_infante(2.5, cubic=0.0))
    order = list(range(spectrum.eigenvalues.size))
    order[1], order[3] = order[3], order[1]
    verdict = verify_pairing(spectrum.reordered(order), max_pairs=3)
    assert not verdict.passed
    assert not verdict.separated
    assert any(f.startswith("(b)") for f in verdict.failures)


def test_pairing_requests_beyond_resolution(caplog):
    """Test that asking for more pairs than are trusted is flagged."""
    spectrum = equilibrium_spectrum(Field.zeros(Grid(16)), chafee_infante(0.5, cubic=0.0))
    verdict = verify_pairing(spectrum, max_pairs=50)
    assert verdict.resolution_insufficient
    assert any("trusted pairs" in r.message for r in caplog.records)


@pytest.mark.parametrize(
    "lam,value,index",
    [
        (0.5, 0.0, 1),
        (0.5, math.sqrt(0.5), 0),
        (2.5, 0.0, 3),
        (2.5, -math.sqrt(2.5), 0),
    ],
)
def test_chafee_infante_morse_indices(grid, lam, value, index):
    """Test the Morse indices of the constant equilibria."""
    record = find_equilibrium(Field.constant(grid, value), chafee_infante(lam))
    assert record.residual <= 1e-10
    assert record.morse_index == index
    assert record.spectrum.hyperbolic


def test_newton_converges_from_a_perturbed_guess(grid):
    """Test convergence of the damped Newton iteration."""
    guess = Field.from_function(grid, lambda x: 0.6 + 0.05 * np.cos(x))
    record = find_equilibrium(guess, chafee_infante(0.5), label="e1")
    assert np.allclose(record.profile.values, math.sqrt(0.5), atol=1e-9)
    assert record.label == "e1"


def test_newton_failure_is_reported(grid):
    """Test that exhausted iterations raise with the residual."""
    with pytest.raises(ConvergenceError) as excinfo:
        find_equilibrium(Field.constant(grid, 0.3), chafee_infante(0.5), max_iter=0)
    assert excinfo.value.residual > 0


def test_newton_rejects_non_finite_guess(grid):
    """Test that NaN guesses are input errors."""
    values = np.zeros(grid.n_points)
    values[0] = np.inf
    with pytest.raises(InputError):
        find_equilibrium(Field(grid, values), chafee_infante(0.5))


def test_floquet_analysis_excludes_trivial_multiplier():
    """Test ordering, trivial multiplier and Morse index of a period map."""
    matrix = np.diag([3.0, 1.0, 0.5])
    report = floquet_analysis(matrix, trivial_direction=np.array([0.0, 1.0, 0.0]))
    assert report.kind == "floquet"
    assert report.trivial_index == 1
    assert report.morse_index == 1
    assert report.hyperbolicity_margin == pytest.approx(0.5)


def test_floquet_analysis_rejects_non_square():
    """Test the shape check of the period map."""
    with pytest.raises(InputError):
        floquet_analysis(np.zeros((3, 4)))


def test_floquet_analysis_warns_without_aligned_vector(caplog):
    """Test the warning when no eigenvector follows the flow."""
    report = floquet_analysis(np.diag([3.0, 0.5, 0.2]), trivial_direction=np.array([1.0, 1.0, 1.0]))
    assert report.trivial_index is None
    assert any("aligned with the flow" in r.message for r in caplog.records)


def test_period_map_needs_a_closed_orbit(grid):
    """Test that an orbit with a large closure error is refused."""
    snaps = evolve(Field.from_function(grid, np.cos), NonlinearitySpec(()), 0.1, FlowConfig())
    orbit = PeriodicOrbitRecord(snaps, 0.1, closure_error=1.0)
    with pytest.raises(PreconditionError):
        period_map(orbit)
    with pytest.raises(PreconditionError):
        orbit.morse_index


@pytest.fixture(scope="module")
def rotating_wave():
    """The wave u = phi(x + t) of u_t = u_xx + 2.5u - u^3 + u_x."""
    grid = Grid(32)
    seed = RotatingWaveSeed(Field.from_function(grid, lambda x: 1.4 * np.cos(x)), 1.0)
    return find_periodic_orbit(seed, chafee_infante(2.5, drift=1.0), FlowConfig(dt=1e-3))


def test_rotating_wave_speed_and_period(rotating_wave):
    """Test that the drift sets speed one and period 2*pi."""
    assert rotating_wave.speed == pytest.approx(1.0, abs=1e-8)
    assert rotating_wave.period == pytest.approx(2 * math.pi, abs=1e-6)
    assert rotating_wave.closure_error <= 1e-6


def test_rotating_wave_floquet_spectrum(rotating_wave):
    """Test the trivial multiplier and the pairing of the period map."""
    spectrum = rotating_wave.spectrum
    assert spectrum.trivial_index is not None
    assert abs(spectrum.eigenvalues[spectrum.trivial_index] - 1.0) <= 1e-5
    assert rotating_wave.morse_index in (1, 2)
    assert verify_pairing(spectrum, max_pairs=3).no_minus_one


def test_rotating_wave_needs_translation_invariance(grid):
    """Test that x-dependent nonlinearities cannot carry rotating waves."""
    seed = RotatingWaveSeed(Field.from_function(grid, np.cos), 1.0)
    with pytest.raises(InputError):
        find_periodic_orbit(seed, chafee_infante(2.5, cos_u=0.3))


def test_filter_matrix_is_the_band_projection(grid):
    """Test that the dense filter is idempotent and matches filter_band."""
    matrix = filter_matrix(grid)
    values = np.cos(3 * grid.x) + 0.5 * np.sin((grid.n_points // 2 - 1) * grid.x)
    assert np.allclose(matrix @ matrix, matrix, atol=1e-12)
    assert np.allclose(matrix @ values, filter_band(grid, values), atol=1e-12)
    assert np.allclose(matrix @ values, np.cos(3 * grid.x), atol=1e-12)
