"""Reconfiguration-overhead benchmark: calibration, runner, rendering."""

from .calibration import (
    DEFAULT_CALIBRATION,
    MODE_DETACH_ATTACH,
    MODE_PAUSE_UNPAUSE,
    MODES,
    STEPS,
    StepTiming,
    StepTimingModel,
    calibrate,
    linear_fit,
    load_calibration,
)
from .report import FORMATS, from_json, render_report, to_json
from .runner import (
    BenchHarness,
    CycleMeasurement,
    OverheadReport,
    ReportRow,
    SimClock,
)

__all__ = [
    "DEFAULT_CALIBRATION",
    "MODE_DETACH_ATTACH",
    "MODE_PAUSE_UNPAUSE",
    "MODES",
    "STEPS",
    "StepTiming",
    "StepTimingModel",
    "calibrate",
    "linear_fit",
    "load_calibration",
    "FORMATS",
    "from_json",
    "render_report",
    "to_json",
    "BenchHarness",
    "CycleMeasurement",
    "OverheadReport",
    "ReportRow",
    "SimClock",
]
