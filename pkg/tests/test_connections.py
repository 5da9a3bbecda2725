"""Tests for shooting, capture, asymptotics and connection verdicts."""

import math
from dataclasses import replace

import numpy as np
import pytest

from sturmflow.connections import (
    ConnectSettings,
    asymptotic_fit,
    connection_graph,
    detect_capture,
    injectivity_check,
    intersection_dimension,
    morse_index_clause,
    shoot_unstable,
    transversality_dimension_check,
    verify_connection_inequalities,
)
from sturmflow.critical import PeriodicOrbitRecord
from sturmflow.errors import (
    EscapeError,
    InputError,
    NoCaptureError,
    PreconditionError,
    WindowTooShortError,
)
from sturmflow.grid import Field
from sturmflow.semiflow import FlowConfig, evolve, rhs


def _with_index(equilibrium, index):
    return replace(equilibrium, spectrum=replace(equilibrium.spectrum, morse_index=index))


def _orbit(spec, equilibrium, index, label="g"):
    """A stand-in orbit record: one unit of flow from a small cosine, read as periodic."""
    u0 = Field.from_function(equilibrium.grid, lambda x: 0.1 * np.cos(x))
    snapshots = evolve(u0, spec, 1.0, FlowConfig(dt=1e-3, save_every=50))
    spectrum = replace(equilibrium.spectrum, morse_index=index)
    return PeriodicOrbitRecord(snapshots, 1.0, 0.0, spectrum, label=label)


def test_connection_targets_the_positive_constant(ci_half_connection, ci_half_equilibria):
    """Test that the shot from 0 along +1 lands on +sqrt(0.5)."""
    assert ci_half_connection.source is ci_half_equilibria[0]
    assert ci_half_connection.target is ci_half_equilibria[1]
    assert ci_half_connection.label == "e0->e1"
    assert ci_half_connection.heteroindexed


def test_asymptotic_rates_match_eigenvalues(ci_half_connection):
    """Test the fitted rates 0.5 (source) and -1 (target)."""
    source, target = ci_half_connection.source_fit, ci_half_connection.target_fit
    assert source.rate == pytest.approx(0.5, rel=1e-3)
    assert target.rate == pytest.approx(-1.0, rel=1e-3)
    assert source.matched_eigenvalue_index == 0
    assert source.case == "simple-real"
    assert source.samples >= 20


def test_connection_inequalities_hold(ci_half_connection):
    """Test every zero-number and index clause of the connection."""
    verdict = verify_connection_inequalities(ci_half_connection)
    assert verdict.passed, verdict.failures
    assert not verdict.inconsistent
    names = {c.name for c in verdict.clauses}
    assert {"source-zero-bound", "target-zero-bound", "sandwich", "morse-index"} <= names


def test_lap_histories_are_monotone(ci_half_connection):
    """Test z(u - e) along both ends of the connection."""
    for history in ci_half_connection.lap_history:
        assert history.monotone
        assert set(history.z_values.tolist()) == {0}


def test_transversality_of_the_connection(ci_half_connection):
    """Test that the one-dimensional unstable manifold is transverse."""
    verdict = ci_half_connection.transversality
    assert verdict.passed
    assert verdict.status == "transverse"
    assert verdict.dimension == 1
    assert verdict.bound == 1


def test_injectivity_is_report_only_for_heteroindexed(ci_half_connection):
    """Test that index-decreasing connections only report collisions."""
    verdict = injectivity_check(ci_half_connection, x_stride=8)
    assert verdict.report_only
    assert verdict.endpoint_distance > 0


def test_connection_graph_of_the_homogeneous_connection(ci_half_connection, ci_half_equilibria):
    """Test nodes, edges and chain bound of a one-edge graph."""
    report = connection_graph(ci_half_equilibria, [ci_half_connection])
    assert report.nodes == {"e0": 1, "e1": 0, "e2": 0}
    assert report.acyclic
    assert report.chain_length == 1
    assert report.chain_bound == 2
    assert report.passed
    assert report.edges[0].rule == "strict"


def test_connection_graph_finds_cycles(ci_half_equilibria):
    """Test that a back edge makes the graph cyclic and breaks the rule."""
    e0, e1, _ = ci_half_equilibria
    report = connection_graph(ci_half_equilibria, [(e0, e1), (e1, e0)])
    assert not report.acyclic
    assert report.cycles
    assert len(report.rule_violations) == 1
    assert not report.passed


def test_detect_capture_requires_dwell(ci_half_connection, ci_half_equilibria):
    """Test that a trajectory cut before it settles is not captured."""
    traj = ci_half_connection.trajectory.window(0.0, 5.0)
    with pytest.raises(NoCaptureError):
        detect_capture(traj, ci_half_equilibria[1:])


def test_source_window_too_short(ci_half_connection):
    """Test the minimum sample count of an asymptotic fit."""
    traj = ci_half_connection.trajectory.window(0.0, 0.1)
    with pytest.raises(WindowTooShortError):
        asymptotic_fit(traj, ci_half_connection.source, "source")
    with pytest.raises(InputError):
        asymptotic_fit(traj, ci_half_connection.source, "middle")


def test_shooting_direction_must_be_unstable(ci_half, ci_half_equilibria):
    """Test that stable directions and stable sources are refused."""
    origin, stable, _ = ci_half_equilibria
    cos_direction = np.cos(origin.grid.x)
    with pytest.raises(PreconditionError):
        shoot_unstable(origin, cos_direction, 1e-4, ci_half, 1.0)
    with pytest.raises(PreconditionError):
        shoot_unstable(stable, np.ones(stable.grid.n_points), 1e-4, ci_half, 1.0)


def test_shooting_eps_is_bounded(ci_half, ci_half_equilibria):
    """Test that eps must stay small relative to the profile."""
    origin = ci_half_equilibria[0]
    with pytest.raises(InputError):
        shoot_unstable(origin, np.ones(origin.grid.n_points), 0.1, ci_half, 1.0)


def test_shooting_escape_ball(ci_half, ci_half_equilibria):
    """Test that leaving the escape ball aborts the shot."""
    origin = ci_half_equilibria[0]
    with pytest.raises(EscapeError):
        shoot_unstable(
            origin,
            np.ones(origin.grid.n_points),
            1e-4,
            ci_half,
            t_max=30.0,
            cfg=FlowConfig(save_every=10),
            escape_radius=0.1,
            chunk=5.0,
        )


def test_shooting_stops_on_capture(ci_half, ci_half_equilibria):
    """Test early stopping once a target holds the tail."""
    origin = ci_half_equilibria[0]
    traj = shoot_unstable(
        origin,
        np.ones(origin.grid.n_points),
        1e-4,
        ci_half,
        t_max=200.0,
        cfg=FlowConfig(save_every=10),
        elements=ci_half_equilibria,
        stop_on_capture=True,
    )
    assert traj.t_end < 200.0
    assert np.allclose(traj.final.values, math.sqrt(0.5), atol=1e-3)


def test_intersection_dimension_rank_test():
    """Test the singular-value rank test on coordinate subspaces."""
    frame = np.eye(4)[:, :2]
    complement = np.eye(4)[:, 1:3]
    result = intersection_dimension(frame, complement, bound=1)
    assert result.dimension == 1
    assert result.status == "transverse"
    assert intersection_dimension(frame, complement, bound=0).status == "not-transverse"
    assert intersection_dimension(frame, complement).status == "not-applicable"


def test_intersection_dimension_indeterminate():
    """Test that singular values in the ambiguity band are reported."""
    frame = np.array([[1.0], [1e-6], [0.0]])
    complement = np.array([[0.0], [1.0], [0.0]])
    assert intersection_dimension(frame, complement, bound=1).status == "indeterminate"


def test_connect_settings_validation():
    """Test that inconsistent thresholds are rejected."""
    with pytest.raises(InputError):
        ConnectSettings(sigma_low=1e-3, sigma_high=1e-4)
    with pytest.raises(InputError):
        ConnectSettings(lap_stride=0)
    with pytest.raises(InputError):
        ConnectSettings(t_max=0.0)


def test_source_fit_of_a_plain_trajectory(ci_half, ci_half_equilibria):
    """Test a source fit straight from a trajectory near the origin."""
    origin = ci_half_equilibria[0]
    u0 = Field.constant(origin.grid, 1e-6)
    traj = evolve(u0, ci_half, 12.0, FlowConfig(save_every=10))
    fit = asymptotic_fit(traj, origin, "source")
    assert fit.rate == pytest.approx(0.5, rel=1e-3)
    assert fit.window[0] == pytest.approx(0.0)


@pytest.mark.parametrize(
    "source_kind, i_source, target_kind, i_target, passed, bound",
    [
        ("equilibrium", 1, "equilibrium", 0, True, 1),
        ("equilibrium", 1, "equilibrium", 1, False, 1),
        ("equilibrium", 2, "equilibrium", 2, True, 2),
        ("equilibrium", 2, "orbit", 1, True, 1),
        ("equilibrium", 1, "orbit", 1, False, 0),
        ("equilibrium", 3, "orbit", 2, False, 1),
        ("equilibrium", 4, "orbit", 2, True, 2),
        ("equilibrium", 1, "orbit", 0, True, 0),
        ("orbit", 1, "equilibrium", 1, False, 0),
        ("orbit", 1, "equilibrium", 0, True, 0),
        ("orbit", 3, "equilibrium", 3, False, 2),
        ("orbit", 2, "equilibrium", 2, True, 2),
        ("orbit", 2, "orbit", 1, True, 1),
        ("orbit", 1, "orbit", 1, False, 0),
    ],
)
def test_morse_index_clause_for_every_endpoint_type(
    ci_half, ci_half_equilibria, source_kind, i_source, target_kind, i_target, passed, bound
):
    """Test the index rule and its bound for each source and target type."""
    e = ci_half_equilibria[0]

    def endpoint(kind, index):
        return _orbit(ci_half, e, index) if kind == "orbit" else _with_index(e, index)

    clause = morse_index_clause(endpoint(source_kind, i_source), endpoint(target_kind, i_target))
    assert clause.name == "morse-index"
    assert clause.passed is passed
    assert clause.measured == i_target
    assert clause.bound == bound


def test_orbit_source_with_odd_index_cannot_reach_the_same_index(
    ci_half, ci_half_connection, ci_half_equilibria
):
    """Test that an odd-index orbit source bounds i(target) by i(orbit) - 1."""
    conn = replace(
        ci_half_connection,
        source=_orbit(ci_half, ci_half_equilibria[0], 1),
        target=_with_index(ci_half_equilibria[1], 1),
        source_phase=0.25,
    )
    verdict = verify_connection_inequalities(conn)
    assert not verdict.passed
    clause = next(c for c in verdict.clauses if c.name == "morse-index")
    assert not clause.passed
    assert clause.bound == 0


def test_equilibrium_source_has_no_phase(ci_half_connection):
    """Test that only orbit sources record a source phase."""
    assert ci_half_connection.source_phase is None


def test_orbit_flow_direction_at_a_phase(ci_half, ci_half_equilibria):
    """Test gamma_t at a phase against the vector field at gamma(phase)."""
    orbit = _orbit(ci_half, ci_half_equilibria[0], 1)
    expected = rhs(ci_half, orbit.grid, orbit.point(0.4))
    assert np.allclose(orbit.flow_direction(0.4), expected)
    assert np.allclose(orbit.flow_direction(), rhs(ci_half, orbit.grid, orbit.snapshots.states[0]))


def test_orbit_source_frame_carries_the_flow_direction(
    ci_half, ci_half_connection, ci_half_equilibria, mocker
):
    """Test that the frame shot from an orbit also spans gamma_t at the source phase."""
    orbit = _orbit(ci_half, ci_half_equilibria[0], 1)
    conn = replace(ci_half_connection, source=orbit, source_phase=0.3)
    frames = []

    def keep(traj, frame, t0, t1):
        frames.append(np.array(frame))
        return frame

    mocker.patch("sturmflow.connections.propagate_tangent", side_effect=keep)
    verdict = transversality_dimension_check(conn)
    assert verdict.bound == 2
    first = frames[0]
    assert first.shape[0] == 2
    velocity = orbit.flow_direction(0.3)
    coords, *_ = np.linalg.lstsq(first.T, velocity, rcond=None)
    assert np.allclose(first.T @ coords, velocity, atol=1e-8 * np.max(np.abs(velocity)))
