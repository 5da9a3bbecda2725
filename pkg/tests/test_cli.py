"""Tests for the command-line interface of the sturmflow package."""

import json
import math
import os
from dataclasses import replace

import numpy as np
import pytest
from typer.testing import CliRunner

from sturmflow.cli import app, exit_code_for, parse_list_option
from sturmflow.dichotomy import dump_family
from sturmflow.errors import BlowupError, InputError, NoCaptureError
from sturmflow.scenario import BUILTIN, dump_scenario, dumps_scenario
from sturmflow.suites import scalar_index_family


@pytest.fixture
def runner():
    """Create a CLI test runner."""
    return CliRunner()


@pytest.fixture
def family_files(temp_dir):
    """An index +1 family with the right expectation and one with a wrong one."""
    good = os.path.join(temp_dir, "plus.fam")
    bad = os.path.join(temp_dir, "corrupt.fam")
    dump_family(scalar_index_family(1), good, expect_index=1)
    dump_family(scalar_index_family(1), bad, expect_index=-1)
    return good, bad


def test_parse_list_option():
    """Test parsing of space-separated list options."""
    result = parse_list_option(["value1"])
    assert result == ["value1"]

    result = parse_list_option(["value1 value2 value3"])
    assert result == ["value1", "value2", "value3"]

    result = parse_list_option(["value1", "value2", "value3"])
    assert result == ["value1", "value2", "value3"]

    result = parse_list_option(["value1 value2", "value3 value4"])
    assert result == ["value1", "value2", "value3", "value4"]

    result = parse_list_option([])
    assert result == []

    result = parse_list_option(None)
    assert result == []


def test_exit_codes():
    """Test the mapping from errors to exit codes."""
    assert exit_code_for(InputError("bad")) == 2
    assert exit_code_for(BlowupError(0.4, 2e6, 1e6)) == 3
    assert exit_code_for(NoCaptureError("none")) == 1


def test_version_command(runner):
    """Test the version command."""
    result = runner.invoke(app, ["version"])
    assert result.exit_code == 0
    assert "Sturmflow version" in result.stdout


def test_simulate_heat(runner, output_dir):
    """Test that the heat scenario reproduces exp(-t) cos x."""
    result = runner.invoke(app, ["simulate", "-s", "builtin:heat", "-o", output_dir])
    assert result.exit_code == 0

    with open(os.path.join(output_dir, "trajectory.ndjson"), "r", encoding="utf-8") as f:
        lines = [json.loads(line) for line in f]
    assert lines[0]["type"] == "trajectory"
    assert lines[-1]["t"] == pytest.approx(1.0)
    x = 2 * math.pi * np.arange(64) / 64
    assert np.max(np.abs(np.array(lines[-1]["values"]) - math.exp(-1.0) * np.cos(x))) <= 1e-6
    assert os.path.exists(os.path.join(output_dir, "trajectory.csv"))


def test_simulate_is_reproducible(runner, temp_dir):
    """Test that two runs write byte-identical files."""
    first = os.path.join(temp_dir, "first")
    second = os.path.join(temp_dir, "second")
    for out in (first, second):
        result = runner.invoke(app, ["simulate", "-s", "builtin:heat", "-o", out])
        assert result.exit_code == 0

    for name in ("trajectory.ndjson", "trajectory.csv"):
        with open(os.path.join(first, name), "rb") as a, open(os.path.join(second, name), "rb") as b:
            assert a.read() == b.read()


def test_simulate_blowup_exits_with_three(runner, output_dir, caplog):
    """Test that blowup is a numerical abort."""
    result = runner.invoke(app, ["simulate", "-s", "builtin:blowup", "-o", output_dir])
    assert result.exit_code == 3
    assert any("blowup" in record.message for record in caplog.records)


def test_simulate_unknown_seed(runner, output_dir, caplog):
    """Test that an unknown seed label is an input error."""
    result = runner.invoke(
        app, ["simulate", "-s", "builtin:heat", "-i", "nope", "-o", output_dir]
    )
    assert result.exit_code == 2
    assert any("no seed labelled 'nope'" in record.message for record in caplog.records)


def test_invalid_scenario(runner, temp_dir, caplog):
    """Test unknown builtins and malformed scenario files."""
    result = runner.invoke(app, ["simulate", "-s", "builtin:nope"])
    assert result.exit_code == 2
    assert any("unknown builtin scenario" in record.message for record in caplog.records)

    path = os.path.join(temp_dir, "broken.json")
    with open(path, "w", encoding="utf-8") as f:
        f.write('{"grid": {"n_points": 32}, "flow": {"dt": -1}}')
    result = runner.invoke(app, ["simulate", "-s", path])
    assert result.exit_code == 2


def test_analyze_invalid_export_format(runner, output_dir, caplog):
    """Test analyze with an invalid export format."""
    result = runner.invoke(
        app, ["analyze", "-s", "builtin:chafee-infante-0.5", "-f", "invalid", "-o", output_dir]
    )
    assert result.exit_code == 2
    assert any("Unsupported export format" in record.message for record in caplog.records)


def test_analyze_census(runner, output_dir):
    """Test the census of the lambda = 0.5 scenario."""
    result = runner.invoke(
        app,
        ["analyze", "-s", "builtin:chafee-infante-0.5", "-f", "ndjson csv", "-o", output_dir],
    )
    assert result.exit_code == 0
    assert "e0" in result.stdout

    with open(os.path.join(output_dir, "census.ndjson"), "r", encoding="utf-8") as f:
        records = [json.loads(line) for line in f]
    assert [(r["label"], r["morse_index"]) for r in records] == [("e0", 1), ("e1", 0), ("e2", 0)]
    assert os.path.exists(os.path.join(output_dir, "census.csv"))


def test_dichotomy_command(runner, family_files, output_dir):
    """Test that a family with the expected index passes."""
    good, _ = family_files
    result = runner.invoke(app, ["dichotomy", "--family", good, "-o", output_dir])
    assert result.exit_code == 0

    with open(os.path.join(output_dir, "dichotomy.ndjson"), "r", encoding="utf-8") as f:
        records = [json.loads(line) for line in f]
    fredholm = [r for r in records if r["type"] == "fredholm"]
    assert fredholm[0]["index"] == 1
    assert fredholm[0]["consistent"]
    assert fredholm[0]["section_kernel_dim"] == fredholm[0]["kernel_dim"]


def test_dichotomy_command_with_wrong_expectation(runner, family_files, output_dir, caplog):
    """Test that a wrong expect_index fails with exit code 1."""
    good, bad = family_files
    result = runner.invoke(app, ["dichotomy", "--family", f"{good} {bad}", "-o", output_dir])
    assert result.exit_code == 1
    assert any("expected -1" in record.message for record in caplog.records)


def test_dichotomy_command_needs_families(runner, caplog):
    """Test that the dichotomy command refuses to run without input."""
    result = runner.invoke(app, ["dichotomy"])
    assert result.exit_code == 2
    assert any("no family files" in record.message for record in caplog.records)


def test_verify_with_corrupted_family(runner, family_files, temp_dir, output_dir):
    """Test that verify exits with 1 when a suite fails."""
    good, bad = family_files
    for families, code in (([good], 0), ([bad], 1)):
        scenario = replace(
            BUILTIN["heat"],
            name="families",
            suites=("dichotomy",),
            options={"random_families": 2, "families": families},
        )
        path = os.path.join(temp_dir, "families.json")
        dump_scenario(scenario, path)
        result = runner.invoke(app, ["verify", "-s", path, "-o", output_dir])
        assert result.exit_code == code

    with open(os.path.join(output_dir, "verify.ndjson"), "r", encoding="utf-8") as f:
        record = json.loads(f.readline())
    assert record["type"] == "suite"
    assert record["name"] == "dichotomy"
    assert record["passed"] is False


def test_verify_unknown_suite(runner, output_dir):
    """Test that an unknown suite name is an input error."""
    result = runner.invoke(
        app, ["verify", "-s", "builtin:heat", "--suite", "nonsense", "-o", output_dir]
    )
    assert result.exit_code == 2


def test_export_json(runner, output_dir):
    """Test that the json format writes the canonical scenario document."""
    result = runner.invoke(app, ["export", "-s", "builtin:heat", "-f", "json", "-o", output_dir])
    assert result.exit_code == 0

    with open(os.path.join(output_dir, "heat.json"), "r", encoding="utf-8") as f:
        assert f.read() == dumps_scenario(BUILTIN["heat"])


def test_export_multiple_formats(runner, output_dir):
    """Test exporting a census to several formats at once."""
    result = runner.invoke(
        app,
        [
            "export",
            "-s",
            "builtin:chafee-infante-0.5",
            "-f",
            "ndjson dot npz",
            "-n",
            "census",
            "-o",
            output_dir,
        ],
    )
    assert result.exit_code == 0
    for fmt in ("ndjson", "dot", "npz"):
        assert os.path.exists(os.path.join(output_dir, f"census.{fmt}"))

    with open(os.path.join(output_dir, "census.dot"), "r", encoding="utf-8") as f:
        content = f.read()
    assert '"e0" [label="e0 (i=1)"];' in content
    assert "->" not in content


def test_connect_command(runner, output_dir):
    """Test the connection search and the graph exports."""
    result = runner.invoke(
        app, ["connect", "-s", "builtin:chafee-infante-0.5", "-o", output_dir]
    )
    assert result.exit_code == 0
    for name in ("connections.ndjson", "graph.dot", "graph.csv"):
        assert os.path.exists(os.path.join(output_dir, name))

    with open(os.path.join(output_dir, "connections.ndjson"), "r", encoding="utf-8") as f:
        records = [json.loads(line) for line in f]
    assert {(r["source"], r["target"]) for r in records} == {("e0", "e1"), ("e0", "e2")}


def test_verbose_mode(runner, output_dir, caplog):
    """Test the verbose mode."""
    result = runner.invoke(app, ["simulate", "-s", "builtin:heat", "-o", output_dir, "--verbose"])
    assert result.exit_code == 0
    assert any("Verbose mode enabled" in record.message for record in caplog.records)
