import json

import numpy as np
import pytest

from svff.bench import (
    DEFAULT_CALIBRATION,
    MODE_DETACH_ATTACH,
    MODE_PAUSE_UNPAUSE,
    MODES,
    STEPS,
    BenchHarness,
    calibrate,
    from_json,
    linear_fit,
    render_report,
)
from svff.bench.calibration import StepTiming, StepTimingModel
from svff.errors import DegenerateFit, UnknownFormat


def lstsq_oracle(points):
    """Independent least-squares fit used to verify the closed form."""
    n = np.array([p[0] for p in points], dtype=float)
    y = np.array([p[1] for p in points], dtype=float)
    design = np.vstack([np.ones_like(n), n]).T
    (fixed, per_vf), *_ = np.linalg.lstsq(design, y, rcond=None)
    return fixed, per_vf


def reference_points(step, mode):
    samples = DEFAULT_CALIBRATION["steps"][step][mode]
    return sorted((float(n), float(y)) for n, y in samples.items())


class TestLinearFit:
    @pytest.mark.parametrize("step", STEPS)
    @pytest.mark.parametrize("mode", MODES)
    def test_matches_lstsq_oracle(self, step, mode):
        points = reference_points(step, mode)
        fixed, per_vf = linear_fit(points)
        oracle_fixed, oracle_per_vf = lstsq_oracle(points)
        assert fixed == pytest.approx(oracle_fixed, rel=1e-9)
        assert per_vf == pytest.approx(oracle_per_vf, rel=1e-9)

    def test_frozen_reference_fits(self):
        # values computed independently with numpy.linalg.lstsq
        fixed, per_vf = linear_fit(reference_points("rescan", MODE_DETACH_ATTACH))
        assert fixed == pytest.approx(140.45238095238096, rel=1e-9)
        assert per_vf == pytest.approx(-0.023809523809523808, rel=1e-9)
        fixed, per_vf = linear_fit(reference_points("remove_vf", MODE_DETACH_ATTACH))
        assert fixed == pytest.approx(-286.35714285714283, rel=1e-9)
        assert per_vf == pytest.approx(1460.0714285714287, rel=1e-9)

    def test_constant_points(self):
        fixed, per_vf = linear_fit([(1, 42.0), (4, 42.0), (10, 42.0)])
        assert fixed == pytest.approx(42.0)
        assert per_vf == pytest.approx(0.0)

    def test_degenerate(self):
        with pytest.raises(DegenerateFit):
            linear_fit([(4, 1.0), (4, 2.0), (4, 3.0)])
        with pytest.raises(DegenerateFit):
            linear_fit([(1, 5.0)])


class TestCalibrate:
    def test_rescan_is_flat_around_140(self):
        model = calibrate()
        for mode in MODES:
            timing = model.timing("rescan", mode)
            assert abs(timing.per_vf_ms) < 1.0
            assert 130 < timing.fixed_ms < 150

    def test_remove_slope_positive_and_large(self):
        model = calibrate()
        timing = model.timing("remove_vf", MODE_DETACH_ATTACH)
        assert timing.per_vf_ms == pytest.approx(1450, abs=60)

    def test_totals_anchored_to_reference_averages(self):
        # expected values are the least-squares line through the reference
        # 100-run averages, computed independently
        model = calibrate()
        da = DEFAULT_CALIBRATION["totals"][MODE_DETACH_ATTACH]["avg"]
        pu = DEFAULT_CALIBRATION["totals"][MODE_PAUSE_UNPAUSE]["avg"]
        da_line = lstsq_oracle(sorted((float(n), float(y)) for n, y in da.items()))
        pu_line = lstsq_oracle(sorted((float(n), float(y)) for n, y in pu.items()))
        for n in (1, 4, 10):
            assert model.expected_total(MODE_DETACH_ATTACH, n) == \
                pytest.approx(da_line[0] + da_line[1] * n, rel=1e-9)
            assert model.expected_total(MODE_PAUSE_UNPAUSE, n) == \
                pytest.approx(pu_line[0] + pu_line[1] * n, rel=1e-9)

    def test_pause_mode_never_slower_in_expectation(self):
        model = calibrate()
        for n in (1, 4, 10):
            assert model.expected_total(MODE_PAUSE_UNPAUSE, n) < \
                model.expected_total(MODE_DETACH_ATTACH, n)

    def test_sigma_within_half_of_reference(self):
        model = calibrate()
        for mode in MODES:
            reference = DEFAULT_CALIBRATION["totals"][mode]["sigma"]
            for n_text, sigma in reference.items():
                simulated = model.total_sigma(mode, int(n_text))
                assert 0.5 * sigma <= simulated <= 1.5 * sigma

    def test_means_nonnegative_at_one_vf(self):
        model = calibrate()
        for mode in MODES:
            for step in STEPS:
                assert model.timing(step, mode).mean(1) >= 0

    def test_without_totals_fits_are_raw(self):
        data = {"steps": DEFAULT_CALIBRATION["steps"]}
        model = calibrate(data)
        timing = model.timing("rescan", MODE_DETACH_ATTACH)
        assert timing.fixed_ms == pytest.approx(140.45238095238096, rel=1e-9)
        assert timing.sigma_ms == 0.0

    def test_constant_calibration_document(self):
        data = {"steps": {step: {mode: {"1": 7, "4": 7, "10": 7}
                                 for mode in MODES} for step in STEPS}}
        model = calibrate(data)
        timing = model.timing("add_vf", MODE_PAUSE_UNPAUSE)
        assert timing.fixed_ms == pytest.approx(7.0)
        assert timing.per_vf_ms == pytest.approx(0.0)

    def test_model_rejects_negative_mean(self):
        table = {(step, mode): StepTiming(1.0, 1.0) for step in STEPS
                 for mode in MODES}
        table[("rescan", MODE_DETACH_ATTACH)] = StepTiming(-10.0, 1.0)
        from svff.errors import InvalidArguments

        with pytest.raises(InvalidArguments):
            StepTimingModel(table)


class TestRunCycle:
    def test_single_vf_detach_attach_near_reference_average(self):
        # reference: 4151 +- 40 over 100 runs; one simulated draw must land
        # within three sigma of it
        measurement = BenchHarness().run_cycle(1, MODE_DETACH_ATTACH, 0)
        assert set(measurement.steps) == set(STEPS)
        assert abs(measurement.total - 4151) <= 3 * 40
        assert measurement.total == pytest.approx(sum(measurement.steps.values()))

    def test_single_vf_pause_unpause_steps(self):
        measurement = BenchHarness().run_cycle(1, MODE_PAUSE_UNPAUSE, 0)
        assert list(measurement.steps) == list(STEPS)
        # rescan is flat around 140 ms; allow three per-step sigma
        assert measurement.steps["rescan"] == pytest.approx(140, abs=75)

    def test_zero_vfs_rejected(self):
        with pytest.raises(ValueError):
            BenchHarness().run_cycle(0, MODE_DETACH_ATTACH, 0)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            BenchHarness().run_cycle(1, "teleport", 0)

    def test_deterministic_per_seed(self):
        harness = BenchHarness()
        a = harness.run_cycle(4, MODE_PAUSE_UNPAUSE, "seed")
        b = harness.run_cycle(4, MODE_PAUSE_UNPAUSE, "seed")
        c = harness.run_cycle(4, MODE_PAUSE_UNPAUSE, "other")
        assert a == b
        assert a != c


@pytest.fixture(scope="module")
def experiment_report():
    return BenchHarness().run_experiment(n_runs=30, vf_counts=(1, 4),
                                         master_seed=123)


@pytest.fixture(scope="module")
def render_input():
    return BenchHarness().run_experiment(n_runs=5, vf_counts=(1, 4),
                                         master_seed=9)


class TestRunExperiment:
    @pytest.fixture
    def report(self, experiment_report):
        return experiment_report

    def test_row_arithmetic(self, report):
        for row in report.rows:
            expected_pct = (row.avg_pu_ms - row.avg_da_ms) / row.avg_da_ms * 100
            assert row.overhead_pct == pytest.approx(expected_pct)
            assert row.ms_per_vf == pytest.approx(
                (row.avg_pu_ms - row.avg_da_ms) / row.n_vfs)

    def test_single_run_has_no_sigma(self):
        report = BenchHarness().run_experiment(n_runs=1, vf_counts=(1,),
                                               master_seed=0)
        assert report.rows[0].sigma_da_ms is None
        assert report.rows[0].sigma_pu_ms is None
        assert render_report(report, "table")  # renders the n/a marker

    def test_byte_identical_reports_for_same_seed(self):
        first = BenchHarness().run_experiment(n_runs=10, vf_counts=(1, 4),
                                              master_seed="s")
        second = BenchHarness().run_experiment(n_runs=10, vf_counts=(1, 4),
                                               master_seed="s")
        for fmt in ("table", "csv", "json"):
            assert render_report(first, fmt).encode() == \
                render_report(second, fmt).encode()

    def test_cpu_fraction_below_ten_percent_at_one_vf(self, report):
        row = next(r for r in report.rows if r.n_vfs == 1)
        assert row.cpu_fraction_da < 0.10
        assert row.cpu_fraction_pu < 0.10


class TestRendering:
    @pytest.fixture
    def report(self, render_input):
        return render_input

    def test_unknown_format(self, report):
        with pytest.raises(UnknownFormat):
            render_report(report, "xml")

    def test_table_columns(self, report):
        table = render_report(report, "table")
        for fragment in ("#VF", "D/A avg ms", "P/U avg ms", "sigma",
                         "overhead %", "ms/VF"):
            assert fragment in table

    def test_json_roundtrip_to_csv_is_lossless(self, report):
        csv_direct = render_report(report, "csv")
        parsed = from_json(render_report(report, "json"))
        assert render_report(parsed, "csv") == csv_direct
        assert parsed == report

    def test_csv_parses_as_numbers(self, report):
        lines = render_report(report, "csv").strip().splitlines()
        header = lines[0].split(",")
        for line in lines[1:]:
            values = line.split(",")
            assert len(values) == len(header)
            float(values[1])  # avg_da_ms

    def test_custom_calibration_file(self, tmp_path):
        # a step-only document (no totals) is fit raw, without anchoring
        data = {"steps": json.loads(json.dumps(DEFAULT_CALIBRATION["steps"]))}
        for mode in MODES:
            for n in ("1", "4", "10"):
                data["steps"]["rescan"][mode][n] = 9000
        path = tmp_path / "cal.json"
        path.write_text(json.dumps(data))
        from svff.bench import load_calibration

        model = calibrate(load_calibration(path))
        assert model.timing("rescan", MODE_DETACH_ATTACH).mean(1) > 1000


class TestFigures:
    def test_written_alongside_report(self, tmp_path):
        from svff.bench.figures import render_figures

        report = BenchHarness().run_experiment(n_runs=3, vf_counts=(1, 4),
                                               master_seed=1)
        base = tmp_path / "overhead.csv"
        base.write_text(render_report(report, "csv"))
        paths = render_figures(report, base)
        assert [p.name for p in paths] == ["overhead_totals.png",
                                           "overhead_overhead.png"]
        for path in paths:
            payload = path.read_bytes()
            assert payload[:8] == b"\x89PNG\r\n\x1a\n"
            assert len(payload) > 1000
