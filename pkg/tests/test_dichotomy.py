"""Tests for discrete dichotomies, Fredholm indices and bounded adjoints."""

import math
import os
from dataclasses import replace

import numpy as np
import pytest

from sturmflow.connections import InjectivityVerdict
from sturmflow.dichotomy import (
    AdjointSolution,
    EvolutionFamily,
    band_basis,
    bounded_adjoint_solutions,
    connection_midpoint,
    construct_breaking_bump,
    detect_dichotomy,
    discrete_defect,
    dump_family,
    fredholm_index,
    green_solve,
    load_family,
    materialize_adjoint,
    melnikov_integral,
    parse_family,
    roughness_check,
    split_dichotomies,
    window_operator,
    window_sensitivity,
)
from sturmflow.errors import (
    InputError,
    NoGapError,
    PreconditionError,
    WindowTooShortError,
)
from sturmflow.grid import BumpTerm, Field, NonlinearitySpec
from sturmflow.scenario import random_stream
from sturmflow.semiflow import FlowConfig, Trajectory, evolve
from sturmflow.suites import random_gapped_family, scalar_index_family


@pytest.mark.parametrize("index", [1, -1])
def test_scalar_families_have_index_plus_minus_one(index):
    """Test a(n) = 2 -> 1/2 (index +1) and 1/2 -> 2 (index -1)."""
    fam = scalar_index_family(index)
    minus, plus = split_dichotomies(fam)
    result = fredholm_index(fam, minus, plus)
    assert result.index == index
    assert result.consistent
    if index == 1:
        assert (result.kernel_dim, result.cokernel_dim) == (1, 0)
    else:
        assert (result.kernel_dim, result.cokernel_dim) == (0, 1)
    assert (result.section_kernel_dim, result.section_cokernel_dim) == (
        result.kernel_dim,
        result.cokernel_dim,
    )


def test_window_operator_annihilates_the_kernel_solution():
    """Test that 2^-|n| solves the index +1 family with its end conditions."""
    fam = scalar_index_family(1)
    minus, plus = split_dichotomies(fam)
    operator = window_operator(fam, minus, plus)
    n = np.arange(fam.n_lo, fam.n_hi + 1)
    assert operator.shape == (fam.length, fam.length + 1)
    assert np.allclose(operator @ 2.0 ** -np.abs(n), 0.0, atol=1e-14)


def test_window_operator_end_rows_of_the_cokernel_family():
    """Test that index -1 pins both ends and leaves a one-dimensional cokernel."""
    fam = scalar_index_family(-1)
    minus, plus = split_dichotomies(fam)
    operator = window_operator(fam, minus, plus)
    assert operator.shape == (fam.length + 2, fam.length + 1)
    assert np.linalg.matrix_rank(operator) == fam.length + 1


def test_fredholm_result_flags_a_rank_mismatch():
    """Test that disagreeing window-operator counts make the result inconsistent."""
    fam = scalar_index_family(1)
    minus, plus = split_dichotomies(fam)
    result = fredholm_index(fam, minus, plus)
    assert result.consistent
    assert not replace(result, section_kernel_dim=2, section_cokernel_dim=1).consistent


def test_scalar_family_with_cokernel_has_a_bounded_adjoint():
    """Test that index -1 leaves one bounded adjoint solution."""
    fam = scalar_index_family(-1)
    minus, plus = split_dichotomies(fam)
    basis = bounded_adjoint_solutions(fam, minus, plus)
    assert basis.dimension == 1
    sequence = np.abs(basis.sequences[0, :, 0])
    # psi decays away from n = 0 on both sides
    assert sequence[0] < 1e-5 * sequence[20]
    assert sequence[-1] < 1e-5 * sequence[20]


def test_scalar_family_with_kernel_has_no_bounded_adjoint():
    """Test the empty adjoint basis of the index +1 family."""
    fam = scalar_index_family(1)
    minus, plus = split_dichotomies(fam)
    assert bounded_adjoint_solutions(fam, minus, plus).empty


@pytest.mark.parametrize("i", range(12))
def test_random_gapped_family_rank(i):
    """Test the detected rank and the dichotomy clauses on random families."""
    rng = random_stream(20240517, i)
    fam, rank = random_gapped_family(rng, 1 + i % 4)
    report = detect_dichotomy(fam)
    assert report.rank == rank
    assert report.passed, report.clauses
    assert report.exponent > 0
    assert report.bound >= 1.0 - 1e-12


def test_green_solution_residual():
    """Test that the bounded solution solves the inhomogeneous equation."""
    rng = random_stream(7, 0)
    fam, _ = random_gapped_family(rng, 3)
    report = detect_dichotomy(fam)
    forcing = rng.standard_normal((fam.length, fam.dim))
    solution = green_solve(fam, report, forcing)
    assert solution.residual <= 1e-10
    assert np.all(np.isfinite(solution.values))


def test_green_solve_rejects_mismatched_windows():
    """Test that report and family must share a window."""
    fam = EvolutionFamily.constant([[2.0]], 0, 20)
    report = detect_dichotomy(fam)
    with pytest.raises(PreconditionError):
        green_solve(fam.restrict(0, 15), report, np.zeros((15, 1)))
    with pytest.raises(InputError):
        green_solve(fam, report, np.zeros((3, 1)))


def test_window_too_short():
    """Test that dichotomies need ten steps."""
    with pytest.raises(WindowTooShortError):
        detect_dichotomy(EvolutionFamily.constant([[2.0]], 0, 5))


def test_no_gap_on_the_unit_circle():
    """Test that a rotation has no dichotomy."""
    rotation = [[0.0, -1.0], [1.0, 0.0]]
    with pytest.raises(NoGapError):
        detect_dichotomy(EvolutionFamily.constant(rotation, 0, 20))


def test_shifted_dichotomy_reports_the_gap():
    """Test the shift rho and the reported annulus."""
    fam = EvolutionFamily.constant(np.diag([0.9, 0.5]), 0, 20)
    report = detect_dichotomy(fam, shift=0.7)
    assert report.rank == 1
    low, high = report.gap
    assert low < 0.7 < high
    with pytest.raises(InputError):
        fam.scaled(0.0)


def test_split_requires_a_window_around_zero():
    """Test the half-window split precondition."""
    with pytest.raises(InputError):
        split_dichotomies(EvolutionFamily.constant([[2.0]], 0, 20))


def test_family_validation():
    """Test step counts and shapes."""
    with pytest.raises(InputError):
        EvolutionFamily(0, 3, (np.eye(2), np.eye(2)))
    with pytest.raises(InputError):
        EvolutionFamily(0, 2, (np.eye(2), np.eye(3)))
    fam = EvolutionFamily.constant([[2.0]], 0, 4)
    assert fam.propagator(3, 1)[0, 0] == pytest.approx(4.0)
    with pytest.raises(InputError):
        fam.step(4)


def test_adjoint_family_is_reversed_transpose():
    """Test S_m = T_{-m-1}^T."""
    steps = [np.array([[1.0, float(k)], [0.0, 1.0]]) for k in range(3)]
    fam = EvolutionFamily.from_matrices(steps, 0)
    adj = fam.adjoint()
    assert (adj.n_lo, adj.n_hi) == (-3, 0)
    assert np.array_equal(adj.step(-3), steps[2].T)
    assert np.array_equal(adj.step(-1), steps[0].T)


def test_parse_family_with_repeats():
    """Test the structured-text family format."""
    text = "\n".join(
        [
            "# scalar family",
            "dim 1",
            "window -12 12",
            "expect_index 1",
            "repeat -12 -1: 2.0",
            "T 0: 0.5",
            "repeat 1 11: 0.5",
        ]
    )
    fam, meta = parse_family(text)
    assert meta == {"expect_index": 1}
    assert fam.length == 24
    assert fam.step(-1)[0, 0] == 2.0
    assert fam.step(0)[0, 0] == 0.5


@pytest.mark.parametrize(
    "text",
    [
        "window 0 12\nrepeat 0 11: 2.0",
        "dim 1\nwindow 0 12\nrepeat 0 10: 2.0",
        "dim 2\nwindow 0 12\nrepeat 0 11: 2.0",
        "dim 1\nwindow 0 12\nmatrix 0: 2.0",
    ],
)
def test_parse_family_rejects_bad_files(text):
    """Test missing headers, missing steps, wrong sizes and unknown lines."""
    with pytest.raises(InputError):
        parse_family(text)


def test_dump_and_load_family(temp_dir):
    """Test writing a family and reading it back."""
    fam = scalar_index_family(-1, half=12)
    path = os.path.join(temp_dir, "minus.fam")
    dump_family(fam, path, expect_index=-1)
    with open(path, encoding="utf-8") as f:
        content = f.read()
    assert "repeat -12 -1:" in content
    again, meta = load_family(path)
    assert meta["expect_index"] == -1
    assert all(np.array_equal(again.step(n), fam.step(n)) for n in range(-12, 12))


def test_load_family_missing_file(temp_dir):
    """Test that unreadable family files are input errors."""
    with pytest.raises(InputError):
        load_family(os.path.join(temp_dir, "missing.fam"))


def test_dump_family_error(mocker, temp_dir):
    """Test that write errors are logged and re-raised."""
    mocker.patch("builtins.open", side_effect=PermissionError("Permission denied"))
    with pytest.raises(PermissionError):
        dump_family(scalar_index_family(1), os.path.join(temp_dir, "x.fam"))


def test_roughness_of_the_diagonal_family():
    """Test that coupling perturbations move the projections by O(delta)."""
    fam = EvolutionFamily.constant(np.diag([2.0, 0.5]), 0, 20)
    report = roughness_check(fam, directions=np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert set(report.ranks) == {1}
    assert report.slope == pytest.approx(2 / 3, rel=0.05)
    assert report.passed


def test_roughness_with_random_directions_keeps_rank():
    """Test that random perturbations of a gapped family keep its rank."""
    fam, rank = random_gapped_family(random_stream(11, 3), 2)
    report = roughness_check(fam, rng=random_stream(11, 4))
    assert set(report.ranks) == {rank}
    with pytest.raises(InputError):
        roughness_check(fam, directions=[np.eye(2)])


def test_pde_family_of_the_heat_equation(grid):
    """Test the band-reduced tangent flow along a heat trajectory."""
    traj = evolve(Field.zeros(grid), NonlinearitySpec(()), 6.0, FlowConfig(save_every=10))
    fam = EvolutionFamily.from_trajectory(traj, 0.5, 3.0, -5, 5, modes=2)
    assert fam.dim == 5
    expected = np.exp(-0.5 * np.array([0.0, 1.0, 1.0, 4.0, 4.0]))
    assert np.allclose(np.diag(fam.step(0)), expected, atol=1e-10)
    with pytest.raises(WindowTooShortError):
        EvolutionFamily.from_trajectory(traj, 0.5, 3.0, -10, 10)


def test_band_basis_is_orthonormal(grid):
    """Test the Fourier band basis."""
    basis = band_basis(grid, 3)
    assert basis.shape == (grid.n_points, 7)
    assert np.allclose(basis.T @ basis, np.eye(7), atol=1e-12)


def test_materialize_needs_a_pde_family():
    """Test that synthetic families have no continuous adjoint."""
    fam = scalar_index_family(-1)
    with pytest.raises(PreconditionError):
        materialize_adjoint(fam, np.zeros((fam.length + 1, 1)))


def test_discrete_defect_is_small(grid):
    """Test that a computed trajectory is a pseudo-orbit of the time-tau map."""
    u0 = Field.from_function(grid, np.cos)
    traj = evolve(u0, NonlinearitySpec(()), 2.0, FlowConfig())
    report = discrete_defect(traj, 0.5)
    assert report.times.size == 4
    assert report.max_defect <= 1e-10


@pytest.fixture
def positive_adjoint(ci_half_connection):
    """A positive psi(t, x) peaked at the middle of the connection."""
    traj = ci_half_connection.trajectory
    middle = connection_midpoint(ci_half_connection)
    times = traj.times[(traj.times >= middle - 8.0) & (traj.times <= middle + 8.0)]
    x = traj.grid.x
    states = np.exp(-0.5 * (times[:, None] - middle) ** 2) * (1.0 + 0.5 * np.cos(x[None, :]))
    return AdjointSolution(times, states)


def test_melnikov_integral_of_a_positive_pairing(ci_half_connection, positive_adjoint):
    """Test that a bump where psi > 0 gives a positive, certain pairing."""
    traj = ci_half_connection.trajectory
    middle = connection_midpoint(ci_half_connection)
    u_mid = float(traj.state_at(middle)[0])
    bump = BumpTerm(1.0, 0.0, u_mid, 0.0, 1.0, 0.1, 1.0)
    value = melnikov_integral(ci_half_connection, positive_adjoint, bump)
    assert value.value > 0
    assert value.tail_bound == 0.0
    assert value.certain


def test_melnikov_integral_needs_overlap(ci_half_connection):
    """Test that an adjoint outside the trajectory window is refused."""
    grid = ci_half_connection.trajectory.grid
    psi = AdjointSolution([1e4, 1e4 + 1.0], np.ones((2, grid.n_points)))
    bump = BumpTerm(1.0, 0.0, 0.3, 0.0, 1.0, 0.1, 1.0)
    with pytest.raises(WindowTooShortError):
        melnikov_integral(ci_half_connection, psi, bump)


def test_construct_breaking_bump(ci_half_connection, positive_adjoint):
    """Test the bump centered where |psi| is largest."""
    result = construct_breaking_bump(ci_half_connection, positive_adjoint)
    assert result.melnikov.certain
    assert result.melnikov.value > 0
    x0, t0, u0, p0 = result.center
    assert x0 == pytest.approx(0.0)
    assert t0 == pytest.approx(connection_midpoint(ci_half_connection), abs=0.02)
    assert result.term.u0 == pytest.approx(u0)


def test_breaking_bump_needs_an_adjoint(ci_half_connection):
    """Test that an empty or zero psi is a precondition failure."""
    grid = ci_half_connection.trajectory.grid
    with pytest.raises(PreconditionError):
        construct_breaking_bump(ci_half_connection, None)
    with pytest.raises(PreconditionError):
        construct_breaking_bump(
            ci_half_connection, AdjointSolution([0.0, 1.0], np.zeros((2, grid.n_points)))
        )


def test_window_sensitivity_of_a_transverse_connection(ci_half_connection):
    """Test that the empty adjoint basis survives window doubling."""
    sensitivity = window_sensitivity(ci_half_connection, tau=0.5, half_window=10)
    assert sensitivity.half_windows == (10, 20)
    assert sensitivity.dimensions == (0, 0)
    assert sensitivity.stable
    assert min(sensitivity.smallest_singular_values) >= 1e-4


def test_engineered_cokernel_is_broken_by_a_bump(ci_half, ci_half_connection):
    """Test adjoint, Melnikov pairing and bump on a path whose constant mode turns unstable.

    u(t) slides from sqrt(0.5) (f_u = -1) down to 0 (f_u = 0.5), so the
    tangent family has index -1 and one bounded adjoint solution.
    """
    grid = ci_half_connection.trajectory.grid
    times = np.linspace(0.0, 24.0, 2401)
    level = math.sqrt(0.5) * 0.5 * (1.0 - np.tanh(times - 12.0))
    states = np.repeat(level[:, None], grid.n_points, axis=1)
    traj = Trajectory(grid, ci_half, times, states, FlowConfig(save_every=10))
    fam = EvolutionFamily.from_trajectory(traj, 0.5, 12.0, -10, 10, modes=2)
    minus, plus = split_dichotomies(fam)
    assert (minus.rank, plus.rank) == (0, 1)
    basis = bounded_adjoint_solutions(fam, minus, plus)
    assert basis.dimension == 1
    psi = materialize_adjoint(fam, basis.sequences[0], basis.n_lo)
    assert not psi.is_zero

    conn = replace(ci_half_connection, trajectory=traj, label="engineered")
    verdict = InjectivityVerdict(True, False, (), 1.0, (7.0, 17.0))
    result = construct_breaking_bump(conn, psi, verdict)
    assert result.melnikov.certain
    assert abs(result.melnikov.value) > 3.0 * result.melnikov.error
    assert 7.0 <= result.center[1] <= 17.0
