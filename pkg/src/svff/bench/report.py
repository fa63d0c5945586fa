"""Overhead report rendering: table, CSV, and JSON (lossless)."""

from __future__ import annotations

import io
import json

from ..errors import UnknownFormat
from .runner import OverheadReport, ReportRow

FORMATS = ("table", "csv", "json")

_CSV_COLUMNS = ("n_vfs", "avg_da_ms", "sigma_da_ms", "avg_pu_ms", "sigma_pu_ms",
                "overhead_pct", "ms_per_vf", "cpu_fraction_da", "cpu_fraction_pu")


def render_report(report: OverheadReport, fmt: str = "table") -> str:
    if fmt == "table":
        return _render_table(report)
    if fmt == "csv":
        return _render_csv(report)
    if fmt == "json":
        return to_json(report)
    raise UnknownFormat(f"format must be one of {FORMATS}, got {fmt!r}")


def _sigma(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.1f}"


def _render_table(report: OverheadReport) -> str:
    out = io.StringIO()
    out.write(f"VF detach-attach vs pause-unpause overhead "
              f"(avg of {report.n_runs} runs, seed {report.master_seed})\n")
    out.write(f"noise model: {report.sigma_note}\n")
    header = (f"{'#VF':>4} | {'D/A avg ms':>11} {'sigma':>8} | "
              f"{'P/U avg ms':>11} {'sigma':>8} | {'overhead %':>10} {'ms/VF':>8}")
    out.write(header + "\n")
    out.write("-" * len(header) + "\n")
    for row in report.rows:
        out.write(f"{row.n_vfs:>4} | {row.avg_da_ms:>11.1f} "
                  f"{_sigma(row.sigma_da_ms):>8} | {row.avg_pu_ms:>11.1f} "
                  f"{_sigma(row.sigma_pu_ms):>8} | {row.overhead_pct:>10.2f} "
                  f"{row.ms_per_vf:>8.1f}\n")
    first = report.rows[0] if report.rows else None
    if first is not None:
        out.write(f"cpu budget {report.cpu_ms:.0f} ms => "
                  f"{first.cpu_fraction_pu * 100:.1f}% of the "
                  f"{first.n_vfs}-VF pause-unpause total\n")
    return out.getvalue()


def _render_csv(report: OverheadReport) -> str:
    lines = [",".join(_CSV_COLUMNS)]
    for row in report.rows:
        values = []
        for column in _CSV_COLUMNS:
            value = getattr(row, column)
            values.append("" if value is None else repr(value))
        lines.append(",".join(values))
    return "\n".join(lines) + "\n"


def to_json(report: OverheadReport) -> str:
    payload = {
        "n_runs": report.n_runs,
        "master_seed": report.master_seed,
        "cpu_ms": report.cpu_ms,
        "sigma_note": report.sigma_note,
        "rows": [
            {column: getattr(row, column) for column in _CSV_COLUMNS}
            for row in report.rows
        ],
    }
    return json.dumps(payload, indent=2) + "\n"


def from_json(text: str) -> OverheadReport:
    payload = json.loads(text)
    rows = tuple(ReportRow(**{column: row[column] for column in _CSV_COLUMNS})
                 for row in payload["rows"])
    return OverheadReport(
        rows=rows,
        n_runs=payload["n_runs"],
        master_seed=payload["master_seed"],
        cpu_ms=payload["cpu_ms"],
        sigma_note=payload["sigma_note"],
    )
