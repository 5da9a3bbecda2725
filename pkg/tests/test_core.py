"""Tests for the core functionality of the sturmflow package."""

import math
from dataclasses import replace

import numpy as np
import pytest

from sturmflow.core import (
    build_census_tree,
    element_summary,
    is_duplicate,
    run_census,
    run_connections,
)
from sturmflow.grid import TrigCoefficient
from sturmflow.scenario import BUILTIN, Seed


@pytest.fixture(scope="module")
def census():
    """Census of the lambda = 0.5 scenario."""
    return run_census(BUILTIN["chafee-infante-0.5"])


def test_run_census(census):
    """Test labels and indices of the three constant equilibria."""
    assert census.scenario == "chafee-infante-0.5"
    assert [e.label for e in census.equilibria] == ["e0", "e1", "e2"]
    assert [e.morse_index for e in census.equilibria] == [1, 0, 0]
    assert census.orbits == []
    assert census.failures == []
    assert census.find("e1").profile.values[0] == pytest.approx(math.sqrt(0.5))
    with pytest.raises(KeyError):
        census.find("e9")


def test_run_census_removes_duplicates():
    """Test that seeds converging to a known equilibrium add nothing."""
    scenario = replace(
        BUILTIN["chafee-infante-0.5"],
        seeds=(
            Seed("equilibrium", TrigCoefficient(0.0)),
            Seed("equilibrium", TrigCoefficient(0.01)),
            Seed("equilibrium", TrigCoefficient(0.7)),
        ),
    )
    result = run_census(scenario)
    assert [e.label for e in result.equilibria] == ["e0", "e1"]


def test_is_duplicate_modulo_shifts(grid, ci_half_equilibria):
    """Test that shifted profiles match only for translation-invariant flows."""
    e0 = ci_half_equilibria[0]
    shifted = replace(e0, profile=replace(e0.profile, values=np.cos(grid.x)))
    assert is_duplicate(np.cos(grid.x + 1.0), [shifted], True) is shifted
    assert is_duplicate(np.cos(grid.x + 1.0), [shifted], False) is None
    assert is_duplicate(np.full(grid.n_points, 0.3), ci_half_equilibria, True) is None


def test_element_summary(census):
    """Test the one-line description of an equilibrium."""
    summary = element_summary(census.equilibria[0])
    assert summary.startswith("index 1, sup 0")
    assert "residual" in summary


def test_build_census_tree(census):
    """Test the branches of the census tree."""
    tree = build_census_tree(census, [])
    assert "chafee-infante-0.5" in str(tree.label)
    branches = [str(child.label) for child in tree.children]
    assert branches == ["[cyan]Equilibria[/cyan]", "[cyan]Connections[/cyan]"]
    assert len(tree.children[0].children) == 3


def test_run_connections_with_stable_sources(census):
    """Test that sources without unstable directions are not shot from."""
    search = run_connections(BUILTIN["chafee-infante-0.5"], census, sources=["e1", "e2"])
    assert search.connections == []
    assert search.skipped == []
