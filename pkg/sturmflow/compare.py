"""
Resolution comparison: the census of a scenario at n grid points and at a
refined grid with a smaller time step, displayed side by side with the
differences highlighted.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from rich.columns import Columns
from rich.console import Console
from rich.panel import Panel
from rich.text import Text
from rich.tree import Tree

from sturmflow.core import Census, element_summary, run_census
from sturmflow.critical import verify_pairing
from sturmflow.scenario import Scenario

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ElementRow:
    label: str
    coarse_index: Optional[int]
    fine_index: Optional[int]
    coarse_pairing: Optional[bool]
    fine_pairing: Optional[bool]

    @property
    def matches(self) -> bool:
        return (
            self.coarse_index == self.fine_index
            and self.coarse_pairing == self.fine_pairing
        )


@dataclass
class ResolutionComparison:
    scenario: str
    coarse_points: int
    fine_points: int
    coarse: Census
    fine: Census
    rows: List[ElementRow] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(row.matches for row in self.rows)

    @property
    def mismatches(self) -> List[ElementRow]:
        return [row for row in self.rows if not row.matches]


def _index_and_pairing(census: Census, label: str):
    try:
        element = census.find(label)
    except KeyError:
        return None, None
    if element.spectrum is None:
        return None, None
    return element.morse_index, verify_pairing(element.spectrum).passed


def compare_resolutions(scenario: Scenario, factor: int = 2) -> ResolutionComparison:
    """Census at n and at factor * n points with dt / factor.

    Elements are matched by label, which follows seed order at both
    resolutions.
    """
    fine_scenario = scenario.with_resolution(
        scenario.grid.n_points * factor, scenario.flow.dt / factor
    )
    coarse = run_census(scenario)
    fine = run_census(fine_scenario)
    labels = sorted({e.label for e in coarse.elements} | {e.label for e in fine.elements})
    rows = []
    for label in labels:
        ci, cp = _index_and_pairing(coarse, label)
        fi, fp = _index_and_pairing(fine, label)
        rows.append(ElementRow(label, ci, fi, cp, fp))
    comparison = ResolutionComparison(
        scenario.name,
        scenario.grid.n_points,
        fine_scenario.grid.n_points,
        coarse,
        fine,
        rows,
    )
    for row in comparison.mismatches:
        logger.warning(
            "Resolution changes %s: index %s -> %s, pairing %s -> %s",
            row.label,
            row.coarse_index,
            row.fine_index,
            row.coarse_pairing,
            row.fine_pairing,
        )
    return comparison


def build_comparison_tree(
    census: Census, other: Census, points: int
) -> Tree:
    """Tree of ``census`` with elements missing from, or indexed differently
    in, ``other`` highlighted."""
    tree = Tree(Text(f"n = {points}", style="bold"))
    other_index = {e.label: e.morse_index for e in other.elements if e.spectrum is not None}
    for element in census.elements:
        label = f"{element.label}: {element_summary(element)}"
        if element.label not in other_index:
            tree.add(Text(label, style="on green"))
        elif element.spectrum is None or other_index[element.label] != element.morse_index:
            tree.add(Text(label, style="on red"))
        else:
            tree.add(Text(label))
    return tree


def display_comparison(comparison: ResolutionComparison) -> None:
    """Display the two censuses side by side with a legend."""
    console = Console()
    tree1 = build_comparison_tree(comparison.coarse, comparison.fine, comparison.coarse_points)
    tree2 = build_comparison_tree(comparison.fine, comparison.coarse, comparison.fine_points)

    legend_text = Text()
    legend_text.append("Legend: ", style="bold")
    legend_text.append("Green background ", style="on green")
    legend_text.append("= Only at this resolution, ")
    legend_text.append("Red background ", style="on red")
    legend_text.append("= Morse index differs")

    console.print(Panel(legend_text, border_style="dim"))
    console.print(
        Columns(
            [
                Panel(tree1, title=f"{comparison.scenario} (coarse)", border_style="blue"),
                Panel(tree2, title=f"{comparison.scenario} (fine)", border_style="green"),
            ],
            equal=True,
            expand=True,
        )
    )


def comparison_data(comparison: ResolutionComparison) -> Dict[str, Any]:
    return {
        "scenario": comparison.scenario,
        "coarse_points": comparison.coarse_points,
        "fine_points": comparison.fine_points,
        "passed": comparison.passed,
        "rows": [
            {
                "label": row.label,
                "coarse_index": row.coarse_index,
                "fine_index": row.fine_index,
                "coarse_pairing": row.coarse_pairing,
                "fine_pairing": row.fine_pairing,
                "matches": row.matches,
            }
            for row in comparison.rows
        ],
    }


def export_comparison(
    comparison: ResolutionComparison, format_type: str, output_path: str
) -> None:
    """Export a resolution comparison.

    Args:
        comparison: Result of ``compare_resolutions``
        format_type: Export format ('txt' or 'json')
        output_path: Path where the export file will be saved

    Raises:
        ValueError: If the format_type is not supported
    """
    data = comparison_data(comparison)
    if format_type == "txt":
        _export_comparison_to_txt(data, output_path)
    elif format_type == "json":
        _export_comparison_to_json(data, output_path)
    else:
        raise ValueError(f"Unsupported format: {format_type}")


def _export_comparison_to_txt(data: Dict[str, Any], output_path: str) -> None:
    left_title = f"n = {data['coarse_points']}"
    right_title = f"n = {data['fine_points']}"
    left = [left_title]
    right = [right_title]
    for row in data["rows"]:
        marker = "" if row["matches"] else "  <- differs"
        left.append(f"{row['label']}: index {row['coarse_index']}, pairing {row['coarse_pairing']}")
        right.append(
            f"{row['label']}: index {row['fine_index']}, pairing {row['fine_pairing']}{marker}"
        )

    max_width = max(len(line) for line in left) + 4
    lines = [f"Resolution Comparison: {data['scenario']}", "=" * 80]
    lines.append(f"Verdict: {'stable' if data['passed'] else 'changed'}")
    lines.append("=" * 80)
    for a, b in zip(left, right):
        lines.append(f"{a:<{max_width}} | {b}")

    try:
        with open(output_path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines))
        logger.info(f"Successfully exported TXT to {output_path}")
    except Exception as e:
        logger.error(f"Error exporting to TXT: {e}")
        raise


def _export_comparison_to_json(data: Dict[str, Any], output_path: str) -> None:
    try:
        with open(output_path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, sort_keys=True)
        logger.info(f"Successfully exported JSON to {output_path}")
    except Exception as e:
        logger.error(f"Error exporting to JSON: {e}")
        raise
