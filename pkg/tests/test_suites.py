"""Tests for the verification suites."""

import os
from dataclasses import replace

import pytest

from sturmflow.dichotomy import dump_family
from sturmflow.errors import InputError
from sturmflow.scenario import BUILTIN
from sturmflow.suites import (
    SUITES,
    random_gapped_family,
    run_suites,
    scalar_index_family,
    summarize,
)
from sturmflow.scenario import random_stream


@pytest.fixture
def small_dichotomy():
    """A scenario running only a short synthetic dichotomy battery."""
    return replace(
        BUILTIN["heat"],
        name="dichotomy-small",
        suites=("dichotomy",),
        options={"random_families": 8},
    )


def test_registered_suites():
    """Test that every named suite is registered."""
    assert {
        "pairing",
        "lap-monotone",
        "floquet",
        "asymptotics",
        "inequalities",
        "transversality",
        "graph",
        "dichotomy",
        "resolution",
    } <= set(SUITES)


def test_unknown_suite_is_an_input_error(small_dichotomy):
    """Test that unknown names list the available suites."""
    with pytest.raises(InputError) as excinfo:
        run_suites(small_dichotomy, ["nonsense"])
    assert "dichotomy" in str(excinfo.value)


def test_dichotomy_suite_passes(small_dichotomy):
    """Test the synthetic battery on a few random families."""
    results = run_suites(small_dichotomy)
    assert [r.name for r in results] == ["dichotomy"]
    result = results[0]
    assert result.passed, result.failures
    assert result.details["indices"] == {"1": 1, "-1": -1}
    assert result.details["worst_green_residual"] <= 1e-10


def test_corrupted_family_fixture_fails(small_dichotomy, temp_dir):
    """Test that a family file with a wrong expected index fails the suite."""
    path = os.path.join(temp_dir, "corrupt.fam")
    dump_family(scalar_index_family(1), path, expect_index=-1)
    scenario = replace(small_dichotomy, options={"random_families": 0, "families": [path]})
    result = run_suites(scenario)[0]
    assert not result.passed
    assert any("expected -1" in f for f in result.failures)
    assert result.details["indices"][path] == 1


def test_suite_results_do_not_depend_on_threads(small_dichotomy):
    """Test that thread count does not change the outcome."""
    one = run_suites(small_dichotomy, ["dichotomy", "pairing"], threads=1)
    two = run_suites(small_dichotomy, ["dichotomy", "pairing"], threads=2)
    assert [(r.name, r.passed, r.failures) for r in one] == [
        (r.name, r.passed, r.failures) for r in two
    ]


def test_rng_seed_override(small_dichotomy):
    """Test that the seed option reaches the random families."""
    result = run_suites(small_dichotomy, rng_seed=99)[0]
    assert result.passed


def test_random_gapped_family_reproducible():
    """Test that family i depends only on the seed and its index."""
    a, rank_a = random_gapped_family(random_stream(5, 2), 3)
    b, rank_b = random_gapped_family(random_stream(5, 2), 3)
    assert rank_a == rank_b
    assert all((x == y).all() for x, y in zip(a.steps, b.steps))


def test_scalar_index_family_rejects_other_indices():
    """Test that only +1 and -1 scalar families exist."""
    with pytest.raises(InputError):
        scalar_index_family(2)


def test_pairing_suite_on_the_census():
    """Test the pairing suite with the linear oracle."""
    scenario = replace(
        BUILTIN["chafee-infante-2.5"],
        options={"pairing_lambdas": [2.5], "pairing_points": 64},
    )
    result = run_suites(scenario, ["pairing"])[0]
    assert result.passed, result.failures
    assert result.details["oracle_errors"]["2.5"] <= 1e-8
    assert set(result.details["equilibria"].values()) == {True}


def test_summarize():
    """Test the aggregate verdict."""
    results = run_suites(
        replace(BUILTIN["heat"], options={"random_families": 2}), ["dichotomy"]
    )
    summary = summarize(results)
    assert summary["passed"] is True
    assert summary["suites"] == {"dichotomy": True}
    assert summary["failures"] == 0
