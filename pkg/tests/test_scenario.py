"""Tests for scenario files and the builtin scenarios."""

import json
import os

import numpy as np
import pytest

from sturmflow.errors import InputError
from sturmflow.scenario import (
    BUILTIN,
    Scenario,
    Seed,
    dump_scenario,
    dumps_scenario,
    load_scenario,
    random_stream,
)
from sturmflow.grid import TrigCoefficient


def test_builtin_scenarios_are_listed():
    """Test the names of the shipped scenarios."""
    assert {
        "heat",
        "blowup",
        "chafee-infante-0.5",
        "chafee-infante-2.5",
        "gradient-2.5",
        "rotating-wave",
        "lap-random",
    } <= set(BUILTIN)


def test_load_builtin():
    """Test the builtin: prefix."""
    scenario = load_scenario("builtin:chafee-infante-0.5")
    assert scenario.grid.n_points == 32
    assert len(scenario.seeds_of("equilibrium")) == 3
    assert "graph" in scenario.suites


def test_unknown_builtin_is_an_input_error():
    """Test that unknown builtin names list the available ones."""
    with pytest.raises(InputError) as excinfo:
        load_scenario("builtin:nope")
    assert "heat" in str(excinfo.value)


@pytest.mark.parametrize("name", sorted(BUILTIN))
def test_scenario_json_round_trip(name, temp_dir):
    """Test that every builtin survives dump and load."""
    path = os.path.join(temp_dir, f"{name}.json")
    dump_scenario(BUILTIN[name], path)
    again = load_scenario(path)
    assert dumps_scenario(again) == dumps_scenario(BUILTIN[name])


def test_scenario_dump_is_deterministic():
    """Test that the JSON text has sorted keys and a trailing newline."""
    text = dumps_scenario(BUILTIN["heat"])
    assert text.endswith("\n")
    data = json.loads(text)
    assert data["schema"] == 1
    assert list(data) == sorted(data)


@pytest.mark.parametrize(
    "patch",
    [
        {"flow": {"dt": 1e-3, "stepsize": 2}},
        {"connect": {"radius": 1.0}},
        {"grid": {"n_points": 7}},
        {"seeds": [{"kind": "guess", "profile": {"constant": 0.0}}]},
        {"nonlinearity": {"terms": [{"kind": "exponential"}]}},
        {"flow": {"scheme": "rk4"}},
    ],
)
def test_invalid_scenarios_are_input_errors(patch):
    """Test unknown keys and invalid values in every section."""
    data = BUILTIN["heat"].to_dict()
    data.update(patch)
    with pytest.raises(InputError):
        Scenario.from_dict(data)


def test_missing_grid_is_an_input_error():
    """Test that the grid section is required."""
    data = BUILTIN["heat"].to_dict()
    del data["grid"]
    with pytest.raises(InputError):
        Scenario.from_dict(data)


def test_unreadable_and_malformed_files(temp_dir):
    """Test missing files and invalid JSON."""
    with pytest.raises(InputError):
        load_scenario(os.path.join(temp_dir, "missing.json"))
    path = os.path.join(temp_dir, "broken.json")
    with open(path, "w", encoding="utf-8") as f:
        f.write("{not json")
    with pytest.raises(InputError):
        load_scenario(path)


def test_dump_scenario_error(mocker, temp_dir):
    """Test that write errors are logged and re-raised."""
    mocker.patch("builtins.open", side_effect=PermissionError("Permission denied"))
    with pytest.raises(PermissionError):
        dump_scenario(BUILTIN["heat"], os.path.join(temp_dir, "heat.json"))


def test_seed_field_and_validation(grid):
    """Test seed profiles on a grid and unknown seed kinds."""
    seed = Seed("initial", TrigCoefficient(0.5, (1.0,)))
    values = seed.field(grid).values
    assert np.allclose(values, 0.5 + np.cos(grid.x))
    assert np.allclose(Seed("equilibrium", TrigCoefficient(2.0)).field(grid).values, 2.0)
    with pytest.raises(InputError):
        Seed("guess", TrigCoefficient(0.0))


def test_with_resolution():
    """Test the refined copy used by resolution checks."""
    scenario = BUILTIN["chafee-infante-0.5"].with_resolution(64, dt=5e-4)
    assert scenario.grid.n_points == 64
    assert scenario.flow.dt == 5e-4
    assert scenario.seeds == BUILTIN["chafee-infante-0.5"].seeds


def test_random_stream_is_counter_based():
    """Test that streams depend only on (seed, index)."""
    a = random_stream(42, 3).standard_normal(5)
    b = random_stream(42, 3).standard_normal(5)
    c = random_stream(42, 4).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
