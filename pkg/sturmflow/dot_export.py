"""
Graphviz export of the connection graph: one node per critical element,
ranked by Morse index, one edge per connection found.
"""

import logging

from sturmflow.connections import GraphReport

logger = logging.getLogger(__name__)


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def generate_dot_graph(report: GraphReport, name: str, output_path: str) -> None:
    """
    Write the connection graph as a DOT digraph.

    Nodes of equal Morse index share a rank, highest index on top. Edges
    that break the index rule are drawn red and dashed, non-hyperbolic
    nodes are drawn with a dashed outline.

    Args:
        report: Graph report from ``connection_graph``
        name: Graph name (usually the scenario name)
        output_path: Path where the DOT file will be saved
    """
    lines = [f"digraph {_quote(name)} {{", "  rankdir=TB;", '  node [shape=ellipse, fontname="Helvetica"];']

    by_index = {}
    for label, index in sorted(report.nodes.items()):
        by_index.setdefault(index, []).append(label)

    for index in sorted(by_index, reverse=True):
        lines.append(f"  subgraph {_quote(f'index_{index}')} {{")
        lines.append("    rank=same;")
        for label in by_index[index]:
            style = ', style=dashed' if label in report.non_hyperbolic else ""
            lines.append(
                f"    {_quote(label)} [label={_quote(f'{label} (i={index})')}{style}];"
            )
        lines.append("  }")

    for edge in sorted(report.edges, key=lambda e: (e.source, e.target)):
        attributes = f"label={_quote(edge.rule)}"
        if not edge.passed:
            attributes += ", color=red, style=dashed"
        lines.append(f"  {_quote(edge.source)} -> {_quote(edge.target)} [{attributes}];")

    lines.append("}")

    with open(output_path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
