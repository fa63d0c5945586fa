"""Figure rendering for overhead reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .runner import OverheadReport


def render_figures(report: OverheadReport, base_path: str | Path) -> list[Path]:
    """Write the totals and overhead figures next to `base_path`.

    Returns the written paths: <stem>_totals.png and <stem>_overhead.png.
    """
    base = Path(base_path)
    totals_path = base.with_name(base.stem + "_totals.png")
    overhead_path = base.with_name(base.stem + "_overhead.png")
    _totals_figure(report, totals_path)
    _overhead_figure(report, overhead_path)
    return [totals_path, overhead_path]


def _totals_figure(report: OverheadReport, path: Path) -> None:
    counts = [row.n_vfs for row in report.rows]
    da = [row.avg_da_ms for row in report.rows]
    pu = [row.avg_pu_ms for row in report.rows]
    da_err = [row.sigma_da_ms or 0.0 for row in report.rows]
    pu_err = [row.sigma_pu_ms or 0.0 for row in report.rows]

    x = np.arange(len(counts))
    width = 0.38
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.bar(x - width / 2, da, width, yerr=da_err, capsize=4,
           label="detach/attach", color="#4878a8")
    ax.bar(x + width / 2, pu, width, yerr=pu_err, capsize=4,
           label="pause/unpause", color="#e49444")
    ax.set_xticks(x, [str(c) for c in counts])
    ax.set_xlabel("VFs (one per VM)")
    ax.set_ylabel("cycle time [ms]")
    ax.set_title(f"Reconfiguration cycle time (avg of {report.n_runs} runs)")
    ax.legend()
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _overhead_figure(report: OverheadReport, path: Path) -> None:
    counts = [str(row.n_vfs) for row in report.rows]
    overhead = [row.overhead_pct for row in report.rows]
    per_vf = [row.ms_per_vf for row in report.rows]

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.0, 3.6))
    ax1.bar(counts, overhead, color="#6a9f58")
    ax1.set_xlabel("VFs")
    ax1.set_ylabel("overhead [%]")
    ax1.set_title("pause-unpause vs detach-attach")
    ax1.axhline(0.0, color="black", linewidth=0.8)
    ax1.grid(axis="y", alpha=0.3)
    ax2.bar(counts, per_vf, color="#d1615d")
    ax2.set_xlabel("VFs")
    ax2.set_ylabel("ms per VF")
    ax2.set_title("time saved per VF")
    ax2.axhline(0.0, color="black", linewidth=0.8)
    ax2.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
