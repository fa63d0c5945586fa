"""Simulated-clock measurement of full reconfiguration cycles.

Every timed cycle drives the real orchestrator against a fresh simulated
machine and checks the state invariants as it goes; the clock is a plain
counter advanced by durations sampled from the calibrated model, so a
31-second hardware cycle costs microseconds here.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from random import Random

from ..checks import check_invariants, check_records_match_attachments
from ..device_plane import DEFAULT_PROFILE
from ..orchestrator import Orchestrator
from ..world import FixedClock, World
from .calibration import (
    MODE_PAUSE_UNPAUSE,
    MODES,
    STEPS,
    StepTimingModel,
    calibrate,
)

DEFAULT_VF_COUNTS = (1, 4, 10)
DEFAULT_RUNS = 100


class SimClock:
    """Monotonic simulated time in milliseconds."""

    def __init__(self) -> None:
        self.now_ms = 0.0

    def advance(self, ms: float) -> None:
        self.now_ms += ms


@dataclass(frozen=True)
class CycleMeasurement:
    n_vfs: int
    mode: str
    steps: dict[str, float]
    total: float


@dataclass(frozen=True)
class ReportRow:
    n_vfs: int
    avg_da_ms: float
    sigma_da_ms: float | None
    avg_pu_ms: float
    sigma_pu_ms: float | None
    overhead_pct: float
    ms_per_vf: float
    cpu_fraction_da: float
    cpu_fraction_pu: float


@dataclass(frozen=True)
class OverheadReport:
    rows: tuple[ReportRow, ...]
    n_runs: int
    master_seed: str
    cpu_ms: float
    sigma_note: str = ("sigma grows linearly with the VF count and is split "
                       "evenly across the four steps")


class BenchHarness:
    def __init__(self, model: StepTimingModel | None = None, cpu_ms: float = 350.0):
        self.model = model if model is not None else calibrate()
        self.cpu_ms = cpu_ms

    # -- world preparation --

    def _build_world(self, n_vfs: int) -> tuple[World, Orchestrator]:
        world = World(DEFAULT_PROFILE, clock=FixedClock())
        orch = Orchestrator(world)
        pf = world.bus.pf_address(0)
        for i in range(n_vfs):
            world.vmm.define_vm(f"vm{i + 1}")
            world.vmm.start_vm(f"vm{i + 1}")
        world.drivers.register_vfio_id(world.bus.profile.vendor_id,
                                       world.bus.profile.device_id)
        world.bus.set_num_vfs(pf, n_vfs)
        for i, node in enumerate(world.bus.vf_children(pf)):
            world.drivers.bind_vfio(node.address)
            orch.attach_vf(node.address, f"vm{i + 1}")
        check_invariants(world)
        return world, orch

    # -- measurement --

    def _measure(self, orch: Orchestrator, n_vfs: int, mode: str,
                 rng: Random) -> CycleMeasurement:
        world = orch.world
        pf = world.bus.pf_address(0)
        assignments = tuple((f"vm{i + 1}", 1) for i in range(n_vfs))
        pause_mode = mode == MODE_PAUSE_UNPAUSE
        clock = SimClock()
        durations: dict[str, float] = {}
        expected_order = list(STEPS)

        def observer(phase: str) -> None:
            assert expected_order and phase == expected_order[0], \
                f"phase {phase!r} out of order"
            expected_order.pop(0)
            duration = self.model.timing(phase, mode).sample(n_vfs, rng)
            durations[phase] = duration
            clock.advance(duration)
            if pause_mode:
                for i in range(n_vfs):
                    views = world.vmm.guest_view(f"vm{i + 1}")
                    assert len(views) == 1, \
                        f"vm{i + 1} lost its device during phase {phase}"

        report = orch.reconf(pf, n_vfs, assignments, pause_mode,
                             observer=observer)
        if not report.ok:
            raise AssertionError(f"timed cycle failed: {report.error}")
        assert not expected_order, f"phases missing: {expected_order}"
        check_invariants(world)
        check_records_match_attachments(world)
        return CycleMeasurement(n_vfs=n_vfs, mode=mode, steps=dict(durations),
                                total=clock.now_ms)

    def run_cycle(self, n_vfs: int, mode: str, rng_seed) -> CycleMeasurement:
        """One measured reconfiguration cycle on a fresh world."""
        if n_vfs < 1:
            raise ValueError(f"n_vfs must be >= 1, got {n_vfs}")
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        _, orch = self._build_world(n_vfs)
        return self._measure(orch, n_vfs, mode, Random(str(rng_seed)))

    def run_experiment(self, n_runs: int = DEFAULT_RUNS,
                       vf_counts: tuple[int, ...] = DEFAULT_VF_COUNTS,
                       master_seed=0) -> OverheadReport:
        """The full overhead table: n_runs cycles per count and mode."""
        if n_runs < 1:
            raise ValueError(f"n_runs must be >= 1, got {n_runs}")
        rows = []
        for n_vfs in vf_counts:
            totals: dict[str, list[float]] = {}
            for mode in MODES:
                _, orch = self._build_world(n_vfs)
                samples = []
                for run in range(n_runs):
                    rng = Random(f"{master_seed}/{mode}/{n_vfs}/{run}")
                    samples.append(self._measure(orch, n_vfs, mode, rng).total)
                totals[mode] = samples
            avg_da = statistics.fmean(totals[MODES[0]])
            avg_pu = statistics.fmean(totals[MODES[1]])
            rows.append(ReportRow(
                n_vfs=n_vfs,
                avg_da_ms=avg_da,
                sigma_da_ms=statistics.stdev(totals[MODES[0]]) if n_runs > 1 else None,
                avg_pu_ms=avg_pu,
                sigma_pu_ms=statistics.stdev(totals[MODES[1]]) if n_runs > 1 else None,
                overhead_pct=(avg_pu - avg_da) / avg_da * 100.0,
                ms_per_vf=(avg_pu - avg_da) / n_vfs,
                cpu_fraction_da=self.cpu_ms / avg_da,
                cpu_fraction_pu=self.cpu_ms / avg_pu,
            ))
        return OverheadReport(rows=tuple(rows), n_runs=n_runs,
                              master_seed=str(master_seed), cpu_ms=self.cpu_ms)
