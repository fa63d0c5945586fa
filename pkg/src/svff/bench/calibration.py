"""Per-step timing model calibrated from reference hardware timings.

Each of the four cycle steps gets a fixed-plus-per-VF linear fit; the
decomposition encodes the observation that some steps (the bus rescan) do
not depend on the VF count while others grow with it.

The per-step samples come from a single instrumented run, so a raw fit of
them does not reproduce the reference 100-run averages (its residuals put
the two modes dead even at one VF). Calibration therefore anchors each
mode's expected total to the least-squares line through the reference
averages, redistributing the correction over the steps in proportion to
their magnitude, and derives the noise term from the reference total
sigmas: sigma grows linearly with the VF count and is split evenly across
the four steps (total sigma / sqrt(4) each).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from random import Random

from ..errors import DegenerateFit, InvalidArguments

MODE_DETACH_ATTACH = "detach_attach"
MODE_PAUSE_UNPAUSE = "pause_unpause"
MODES = (MODE_DETACH_ATTACH, MODE_PAUSE_UNPAUSE)

STEP_RESCAN = "rescan"
STEP_REMOVE_VF = "remove_vf"
STEP_CHANGE_NUMVF = "change_numvf"
STEP_ADD_VF = "add_vf"
STEPS = (STEP_RESCAN, STEP_REMOVE_VF, STEP_CHANGE_NUMVF, STEP_ADD_VF)

# reference timings measured on the original FPGA host (milliseconds);
# steps are single-run samples at 1/4/10 VFs, totals are 100-run
# averages and standard deviations, cpu_ms is the measured CPU share of
# a one-VF cycle
DEFAULT_CALIBRATION: dict = {
    "notes": "reference timings from the original Alveo U55C host",
    "steps": {
        STEP_RESCAN: {
            MODE_DETACH_ATTACH: {"1": 138, "4": 144, "10": 139},
            MODE_PAUSE_UNPAUSE: {"1": 138, "4": 141, "10": 139},
        },
        STEP_REMOVE_VF: {
            MODE_DETACH_ATTACH: {"1": 1265, "4": 5417, "10": 14360},
            MODE_PAUSE_UNPAUSE: {"1": 1273, "4": 5505, "10": 13878},
        },
        STEP_CHANGE_NUMVF: {
            MODE_DETACH_ATTACH: {"1": 1256, "4": 1460, "10": 1817},
            MODE_PAUSE_UNPAUSE: {"1": 1295, "4": 1412, "10": 1730},
        },
        STEP_ADD_VF: {
            MODE_DETACH_ATTACH: {"1": 1472, "4": 5946, "10": 15042},
            MODE_PAUSE_UNPAUSE: {"1": 1346, "4": 5653, "10": 14448},
        },
    },
    "totals": {
        MODE_DETACH_ATTACH: {
            "avg": {"1": 4151, "4": 12988, "10": 31129},
            "sigma": {"1": 40, "4": 183, "10": 497},
        },
        MODE_PAUSE_UNPAUSE: {
            "avg": {"1": 4068, "4": 12665, "10": 30285},
            "sigma": {"1": 56, "4": 171, "10": 505},
        },
    },
    "cpu_ms": 350,
}


def linear_fit(points: list[tuple[float, float]]) -> tuple[float, float]:
    """Ordinary least squares y = fixed + per_vf * n over (n, y) points."""
    if len(points) < 2 or len({n for n, _ in points}) < 2:
        raise DegenerateFit(f"need at least two distinct VF counts, got {points}")
    n_mean = sum(n for n, _ in points) / len(points)
    y_mean = sum(y for _, y in points) / len(points)
    var = sum((n - n_mean) ** 2 for n, _ in points)
    cov = sum((n - n_mean) * (y - y_mean) for n, y in points)
    slope = cov / var
    return y_mean - slope * n_mean, slope


@dataclass(frozen=True)
class StepTiming:
    """One step's duration model: mean fixed + per_vf * n, gaussian noise
    with a VF-count dependent sigma, truncated at zero."""

    fixed_ms: float
    per_vf_ms: float
    sigma_ms: float = 0.0
    sigma_per_vf_ms: float = 0.0

    def mean(self, n_vfs: int) -> float:
        return self.fixed_ms + self.per_vf_ms * n_vfs

    def sigma(self, n_vfs: int) -> float:
        return max(0.0, self.sigma_ms + self.sigma_per_vf_ms * n_vfs)

    def sample(self, n_vfs: int, rng: Random) -> float:
        return max(0.0, rng.gauss(self.mean(n_vfs), self.sigma(n_vfs)))


class StepTimingModel:
    """Calibrated (step, mode) -> StepTiming table."""

    def __init__(self, table: dict[tuple[str, str], StepTiming], notes: str = ""):
        for mode in MODES:
            for step in STEPS:
                if (step, mode) not in table:
                    raise InvalidArguments(f"model is missing ({step}, {mode})")
                if table[(step, mode)].mean(1) < 0:
                    raise InvalidArguments(
                        f"({step}, {mode}) has a negative mean at one VF")
        self.table = table
        self.notes = notes

    def timing(self, step: str, mode: str) -> StepTiming:
        return self.table[(step, mode)]

    def expected_total(self, mode: str, n_vfs: int) -> float:
        return sum(self.table[(step, mode)].mean(n_vfs) for step in STEPS)

    def total_sigma(self, mode: str, n_vfs: int) -> float:
        return math.sqrt(sum(self.table[(step, mode)].sigma(n_vfs) ** 2
                             for step in STEPS))


def _points(samples: dict) -> list[tuple[float, float]]:
    return sorted((float(n), float(y)) for n, y in samples.items())


def calibrate(data: dict | None = None) -> StepTimingModel:
    """Fit the model from a calibration document (default: embedded data).

    Steps are fit individually; when the document carries reference total
    averages/sigmas, the per-step means are anchored to the totals line
    and the noise term is derived from the sigma line.
    """
    if data is None:
        data = DEFAULT_CALIBRATION
    try:
        step_samples = data["steps"]
    except (KeyError, TypeError) as exc:
        raise InvalidArguments(f"calibration document lacks 'steps': {exc}") from exc
    totals = data.get("totals")

    table: dict[tuple[str, str], StepTiming] = {}
    for mode in MODES:
        fits = {}
        means = {}
        for step in STEPS:
            try:
                samples = step_samples[step][mode]
            except (KeyError, TypeError) as exc:
                raise InvalidArguments(
                    f"calibration document lacks samples for ({step}, {mode})"
                ) from exc
            points = _points(samples)
            fits[step] = linear_fit(points)
            means[step] = sum(y for _, y in points) / len(points)

        fixed_shift = per_vf_shift = 0.0
        sigma_fixed = sigma_per_vf = 0.0
        if totals is not None:
            target_fixed, target_per_vf = linear_fit(_points(totals[mode]["avg"]))
            fixed_shift = target_fixed - sum(f for f, _ in fits.values())
            per_vf_shift = target_per_vf - sum(p for _, p in fits.values())
            sf, sp = linear_fit(_points(totals[mode]["sigma"]))
            # split the total sigma evenly over the four independent steps
            sigma_fixed, sigma_per_vf = sf / 2.0, sp / 2.0

        mean_sum = sum(means.values())
        for step in STEPS:
            weight = means[step] / mean_sum if mean_sum else 1.0 / len(STEPS)
            fixed, per_vf = fits[step]
            table[(step, mode)] = StepTiming(
                fixed_ms=fixed + weight * fixed_shift,
                per_vf_ms=per_vf + weight * per_vf_shift,
                sigma_ms=sigma_fixed,
                sigma_per_vf_ms=sigma_per_vf,
            )
    return StepTimingModel(table, notes=str(data.get("notes", "")))


def load_calibration(path: str | Path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
