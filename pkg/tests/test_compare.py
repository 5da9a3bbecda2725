"""Tests for the resolution comparison functionality."""

import json
import os

import pytest
from typer.testing import CliRunner

from sturmflow.compare import (
    ElementRow,
    ResolutionComparison,
    compare_resolutions,
    display_comparison,
    export_comparison,
)
from sturmflow.core import Census
from sturmflow.scenario import BUILTIN


@pytest.fixture
def runner():
    """Create a CLI test runner."""
    return CliRunner()


@pytest.fixture(scope="module")
def comparison():
    """The lambda = 0.5 census at 32 and 64 points."""
    return compare_resolutions(BUILTIN["chafee-infante-0.5"], 2)


@pytest.fixture
def changed():
    """A comparison in which one Morse index changes with resolution."""
    return ResolutionComparison(
        "changed",
        16,
        32,
        Census("changed"),
        Census("changed"),
        [ElementRow("e0", 1, 1, True, True), ElementRow("e1", 3, 5, True, False)],
    )


def test_compare_resolutions(comparison):
    """Test that constant equilibria keep their indices under refinement."""
    assert (comparison.coarse_points, comparison.fine_points) == (32, 64)
    assert [row.label for row in comparison.rows] == ["e0", "e1", "e2"]
    assert [row.coarse_index for row in comparison.rows] == [1, 0, 0]
    assert comparison.passed
    assert comparison.mismatches == []


def test_mismatches(changed):
    """Test that differing rows are reported."""
    assert not changed.passed
    assert [row.label for row in changed.mismatches] == ["e1"]


def test_display_comparison(comparison, capsys):
    """Test that comparison display works without errors."""
    display_comparison(comparison)

    captured = capsys.readouterr()
    assert "n = 32" in captured.out
    assert "n = 64" in captured.out
    assert "Legend" in captured.out


def test_export_comparison_txt(changed, output_dir):
    """Test text export of a resolution comparison."""
    output_path = os.path.join(output_dir, "comparison.txt")

    export_comparison(changed, "txt", output_path)

    with open(output_path, "r", encoding="utf-8") as f:
        content = f.read()

    assert "Resolution Comparison: changed" in content
    assert "Verdict: changed" in content
    assert "n = 16" in content
    assert "e1: index 5, pairing False  <- differs" in content


def test_export_comparison_json(comparison, output_dir):
    """Test JSON export of a resolution comparison."""
    output_path = os.path.join(output_dir, "comparison.json")

    export_comparison(comparison, "json", output_path)

    with open(output_path, "r", encoding="utf-8") as f:
        data = json.load(f)

    assert data["passed"] is True
    assert data["fine_points"] == 64
    assert all(row["matches"] for row in data["rows"])


def test_export_comparison_unsupported_format(changed, output_dir):
    """Test error handling for unsupported export format."""
    output_path = os.path.join(output_dir, "comparison.unsupported")

    with pytest.raises(ValueError) as excinfo:
        export_comparison(changed, "unsupported", output_path)

    assert "Unsupported format" in str(excinfo.value)


def test_export_comparison_error(changed, output_dir, mocker):
    """Test that write errors are re-raised."""
    mocker.patch("builtins.open", side_effect=PermissionError("Permission denied"))

    with pytest.raises(PermissionError):
        export_comparison(changed, "json", os.path.join(output_dir, "comparison.json"))


def test_cli_command(runner):
    """Test the compare CLI command."""
    from sturmflow.cli import app

    result = runner.invoke(app, ["compare", "-s", "builtin:chafee-infante-0.5"])

    assert result.exit_code == 0
    assert "Legend" in result.stdout
    assert "chafee-infante-0.5" in result.stdout


def test_cli_command_with_export(runner, output_dir):
    """Test the compare CLI command with export option."""
    from sturmflow.cli import app

    result = runner.invoke(
        app,
        [
            "compare",
            "-s",
            "builtin:chafee-infante-0.5",
            "--export",
            "txt json",
            "--out",
            output_dir,
            "--prefix",
            "test_compare",
        ],
    )

    assert result.exit_code == 0
    assert os.path.exists(os.path.join(output_dir, "test_compare.txt"))
    assert os.path.exists(os.path.join(output_dir, "test_compare.json"))
