import csv
import json
import logging
from functools import singledispatch
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from sturmflow.connections import ConnectionRecord, GraphReport, connection_graph
from sturmflow.critical import (
    EquilibriumRecord,
    PeriodicOrbitRecord,
    SpectrumReport,
    verify_pairing,
)
from sturmflow.dichotomy import DichotomyReport, FredholmResult
from sturmflow.dot_export import generate_dot_graph
from sturmflow.semiflow import Trajectory
from sturmflow.sturm import DropEvent, LapHistory
from sturmflow.suites import SuiteResult

logger = logging.getLogger(__name__)

FORMATS = ("ndjson", "csv", "txt", "npz", "dot")


def plain(value: Any) -> Any:
    """JSON-ready copy of ``value`` (numpy scalars and arrays unwrapped)."""
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return plain(value.tolist())
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, np.generic):
        return plain(value.item())
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def _eigenvalues(spectrum: SpectrumReport) -> List[List[float]]:
    return [[float(v.real), float(v.imag)] for v in spectrum.eigenvalues[: spectrum.trusted]]


def _pairing(spectrum: SpectrumReport) -> Dict[str, Any]:
    verdict = verify_pairing(spectrum)
    return {"passed": verdict.passed, "failures": verdict.failures}


@singledispatch
def record_to_dict(record: Any) -> Dict[str, Any]:
    """One NDJSON object per record; the ``type`` key names the schema."""
    raise ValueError(f"Unsupported record type: {type(record).__name__}")


@record_to_dict.register
def _(record: Trajectory) -> Dict[str, Any]:
    return {
        "type": "trajectory",
        "n_points": record.grid.n_points,
        "scheme": record.cfg.scheme,
        "dt": record.cfg.dt,
        "t_start": record.t_start,
        "t_end": record.t_end,
        "samples": len(record),
    }


@record_to_dict.register
def _(record: EquilibriumRecord) -> Dict[str, Any]:
    return {
        "type": "equilibrium",
        "label": record.label,
        "morse_index": record.morse_index,
        "residual": record.residual,
        "hyperbolicity_margin": record.spectrum.hyperbolicity_margin,
        "sup_norm": record.profile.sup_norm(),
        "eigenvalues": _eigenvalues(record.spectrum),
        "pairing": _pairing(record.spectrum),
        "profile": record.profile.values,
    }


@record_to_dict.register
def _(record: PeriodicOrbitRecord) -> Dict[str, Any]:
    data = {
        "type": "orbit",
        "label": record.label,
        "period": record.period,
        "closure_error": record.closure_error,
        "speed": record.speed,
        "start": record.start.values,
    }
    if record.spectrum is not None:
        data["morse_index"] = record.morse_index
        data["hyperbolicity_margin"] = record.spectrum.hyperbolicity_margin
        data["multipliers"] = _eigenvalues(record.spectrum)
        data["pairing"] = _pairing(record.spectrum)
    return data


@record_to_dict.register
def _(record: ConnectionRecord) -> Dict[str, Any]:
    data = {
        "type": "connection",
        "label": record.label,
        "source": record.source.label,
        "target": record.target.label,
        "source_index": record.source.morse_index,
        "target_index": record.target.morse_index,
        "source_rate": record.source_fit.rate,
        "source_case": record.source_fit.case,
        "target_rate": record.target_fit.rate,
        "target_case": record.target_fit.case,
        "target_phase": record.target_phase,
        "source_phase": record.source_phase,
        "heteroindexed": record.heteroindexed,
        "z_source": record.lap_source.z_values[[0, -1]] if record.lap_source.z_values.size else [],
        "z_target": record.lap_target.z_values[[0, -1]] if record.lap_target.z_values.size else [],
        "t_end": record.trajectory.t_end,
    }
    if record.transversality is not None:
        data["transversality"] = record.transversality.status
        data["intersection_dimension"] = record.transversality.dimension
        data["dimension_bound"] = record.transversality.bound
    return data


@record_to_dict.register
def _(record: DichotomyReport) -> Dict[str, Any]:
    return {
        "type": "dichotomy",
        "n_lo": record.n_lo,
        "n_hi": record.n_hi,
        "rank": record.rank,
        "exponent": record.exponent,
        "bound": record.bound,
        "gap": record.gap,
        "shift": record.shift,
        "growth_exponents": record.exponents,
        "clauses": record.clauses,
    }


@record_to_dict.register
def _(record: FredholmResult) -> Dict[str, Any]:
    return {
        "type": "fredholm",
        "index": record.index,
        "kernel_dim": record.kernel_dim,
        "cokernel_dim": record.cokernel_dim,
        "rank_minus": record.rank_minus,
        "rank_plus": record.rank_plus,
        "singular_values": record.singular_values,
        "section_kernel_dim": record.section_kernel_dim,
        "section_cokernel_dim": record.section_cokernel_dim,
        "consistent": record.consistent,
    }


@record_to_dict.register
def _(record: SuiteResult) -> Dict[str, Any]:
    return {
        "type": "suite",
        "name": record.name,
        "passed": record.passed,
        "details": record.details,
        "failures": record.failures,
    }


@record_to_dict.register
def _(record: LapHistory) -> Dict[str, Any]:
    return {
        "type": "lap_history",
        "samples": int(record.times.size),
        "monotone": record.monotone,
        "all_drops_bracketed": record.all_drops_bracketed,
        "inconsistent": record.inconsistent,
        "drops": len(record.drop_events),
        "violations": record.violations,
        "low_confidence_times": record.low_confidence_times,
    }


@record_to_dict.register
def _(record: DropEvent) -> Dict[str, Any]:
    return {
        "type": "drop",
        "t_lo": record.t_lo,
        "t_hi": record.t_hi,
        "time": record.time,
        "locations": record.locations,
        "z_before": record.z_before,
        "z_after": record.z_after,
    }


@record_to_dict.register
def _(record: GraphReport) -> Dict[str, Any]:
    return {
        "type": "graph",
        "nodes": record.nodes,
        "edges": [[e.source, e.target, e.rule, e.passed] for e in record.edges],
        "cycles": record.cycles,
        "longest_chain": record.longest_chain,
        "chain_bound": record.chain_bound,
        "passed": record.passed,
    }


class RecordExporter:
    """Handles exporting computed records to various formats."""

    def __init__(self, records: Sequence[Any], name: str):
        """Initialize the exporter with records and a run name.

        Args:
            records: Trajectories, critical elements, connections, reports or suite results
            name: Name of the run (usually the scenario name)
        """
        self.records = list(records)
        self.name = name

    def _rows(self) -> List[Dict[str, Any]]:
        return [plain(record_to_dict(r)) for r in self.records]

    def to_ndjson(self, output_path: str) -> None:
        """Export one JSON object per line; trajectories add one line per sample.

        Args:
            output_path: Path where the NDJSON file will be saved
        """
        lines = []
        for record, row in zip(self.records, self._rows()):
            lines.append(json.dumps(row, sort_keys=True))
            if isinstance(record, Trajectory):
                for t, u in zip(record.times, record.states):
                    lines.append(json.dumps({"t": float(t), "values": u.tolist()}))
            elif isinstance(record, LapHistory):
                for event in record.drop_events:
                    lines.append(json.dumps(plain(record_to_dict(event)), sort_keys=True))
        try:
            with open(output_path, "w", encoding="utf-8") as f:
                f.write("".join(line + "\n" for line in lines))
            logger.info(f"Successfully exported NDJSON to {output_path}")
        except Exception as e:
            logger.error(f"Error exporting to NDJSON: {e}")
            raise

    def _table(self) -> Tuple[List[str], List[List[Any]]]:
        single = self.records[0] if len(self.records) == 1 else None
        if isinstance(single, Trajectory):
            header = ["t", "sup_norm", "l2_norm", "mean"]
            table = [
                [
                    repr(float(t)),
                    repr(float(np.max(np.abs(u)))),
                    repr(float(np.sqrt(np.dot(u, u) * single.grid.spacing))),
                    repr(float(np.mean(u))),
                ]
                for t, u in zip(single.times, single.states)
            ]
            return header, table
        if isinstance(single, LapHistory):
            z = single.z_values
            table = [
                [repr(float(t)), int(z[i]), int(i > 0 and z[i] < z[i - 1])]
                for i, t in enumerate(single.times)
            ]
            return ["t", "z", "drop_flag"], table
        if isinstance(single, GraphReport):
            table = [
                [e.source, e.target, e.i_source, e.i_target, e.rule, "pass" if e.passed else "fail"]
                for e in sorted(single.edges, key=lambda e: (e.source, e.target))
            ]
            return ["source", "target", "i_source", "i_target", "rule", "verdict"], table
        rows = [
            {k: v for k, v in row.items() if not isinstance(v, (list, dict))}
            for row in self._rows()
        ]
        header = sorted({k for row in rows for k in row})
        table = [["" if row.get(k) is None else row.get(k) for k in header] for row in rows]
        return header, table

    def to_csv(self, output_path: str) -> None:
        """Export a table. A lone trajectory gives (t, sup_norm, l2_norm, mean)
        per sample, a lone lap history (t, z, drop_flag), a lone graph report
        its edge table; anything else one row of scalar fields per record.

        Args:
            output_path: Path where the CSV file will be saved
        """
        header, table = self._table()
        try:
            with open(output_path, "w", encoding="utf-8", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(header)
                writer.writerows(table)
            logger.info(f"Successfully exported CSV to {output_path}")
        except Exception as e:
            logger.error(f"Error exporting to CSV: {e}")
            raise

    def to_txt(self, output_path: str) -> None:
        """Export a plain-text listing, one record per line.

        Args:
            output_path: Path where the txt file will be saved
        """
        lines = [f"sturmflow: {self.name}"]
        for row in self._rows():
            kind = row.pop("type")
            label = row.pop("label", row.pop("name", ""))
            fields = ", ".join(
                f"{k}={v}" for k, v in sorted(row.items()) if not isinstance(v, (list, dict))
            )
            lines.append(f"├── {kind} {label}: {fields}")
        try:
            with open(output_path, "w", encoding="utf-8") as f:
                f.write("\n".join(lines))
            logger.info(f"Successfully exported TXT to {output_path}")
        except Exception as e:
            logger.error(f"Error exporting to TXT: {e}")
            raise

    def to_npz(self, output_path: str) -> None:
        """Export raw arrays: times and states of trajectories, profiles of
        equilibria, snapshots of orbits.

        Args:
            output_path: Path where the npz archive will be saved
        """
        arrays: Dict[str, np.ndarray] = {}
        for i, record in enumerate(self.records):
            key = getattr(record, "label", "") or f"record{i}"
            if isinstance(record, Trajectory):
                arrays[f"{key}_times"] = record.times
                arrays[f"{key}_states"] = record.states
            elif isinstance(record, EquilibriumRecord):
                arrays[f"{key}_profile"] = record.profile.values
            elif isinstance(record, PeriodicOrbitRecord):
                arrays[f"{key}_times"] = record.snapshots.times
                arrays[f"{key}_states"] = record.snapshots.states
            elif isinstance(record, ConnectionRecord):
                arrays[f"{key}_times"] = record.trajectory.times
                arrays[f"{key}_states"] = record.trajectory.states
            elif isinstance(record, DichotomyReport):
                arrays[f"{key}_projections"] = record.projections
        try:
            with open(output_path, "wb") as f:
                np.savez(f, **arrays)
            logger.info(f"Successfully exported NPZ to {output_path}")
        except Exception as e:
            logger.error(f"Error exporting to NPZ: {e}")
            raise

    def to_dot(self, output_path: str) -> None:
        """Export the connection graph as Graphviz DOT.

        Args:
            output_path: Path where the DOT file will be saved
        """
        reports = [r for r in self.records if isinstance(r, GraphReport)]
        if reports:
            report = reports[0]
        else:
            elements = [
                r for r in self.records if isinstance(r, (EquilibriumRecord, PeriodicOrbitRecord))
            ]
            connections = [r for r in self.records if isinstance(r, ConnectionRecord)]
            report = connection_graph(elements, connections)
        try:
            generate_dot_graph(report, self.name, output_path)
            logger.info(f"Successfully exported DOT graph to {output_path}")
        except Exception as e:
            logger.error(f"Error exporting to DOT: {e}")
            raise


def export_records(
    records: Sequence[Any], name: str, format_type: str, output_path: str
) -> None:
    """Export records to one of the supported formats.

    Args:
        records: Records to export
        name: Run name
        format_type: Export format ('ndjson', 'csv', 'txt', 'npz', 'dot')
        output_path: Path where the export file will be saved

    Raises:
        ValueError: If the format_type is not supported
    """
    exporter = RecordExporter(records, name)

    format_map = {
        "ndjson": exporter.to_ndjson,
        "csv": exporter.to_csv,
        "txt": exporter.to_txt,
        "npz": exporter.to_npz,
        "dot": exporter.to_dot,
    }

    if format_type.lower() not in format_map:
        raise ValueError(f"Unsupported format: {format_type}")

    export_func = format_map[format_type.lower()]
    export_func(output_path)
