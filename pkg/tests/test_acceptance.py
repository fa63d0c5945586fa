"""Acceptance suite: one test per criterion, each with its stated runtime
budget and tolerance, printing a PASS/FAIL line (run with -s to see them).
"""

import json
import random
import time

from click.testing import CliRunner
from hypothesis import given, settings
from hypothesis import strategies as st

import explorer
from conftest import build_attached_world
from svff.checks import check_invariants, check_records_match_attachments
from svff.cli import main as cli_main
from svff.errors import ExceedsCapability, NonZeroTransition
from svff.pci import PciAddress
from svff.vmm import MsiState, MsiVector

PF0 = PciAddress.parse("0000:03:00.0")


def _criterion(name: str, limit_s: float, fn) -> None:
    start = time.perf_counter()
    try:
        detail = fn() or ""
    except BaseException as exc:
        print(f"[ACCEPTANCE] {name}: FAIL ({exc})")
        raise
    elapsed = time.perf_counter() - start
    within = elapsed <= limit_s
    print(f"[ACCEPTANCE] {name}: {'PASS' if within else 'FAIL'} "
          f"({elapsed:.2f}s of {limit_s:.0f}s budget"
          f"{'; ' + detail if detail else ''})")
    assert within, f"{name} took {elapsed:.2f}s, budget {limit_s}s"


def test_criterion_1_snapshot_roundtrip():
    """1,000 randomized realized states restore byte-exactly over
    pause/unpause."""

    def run():
        rng = random.Random(0xC0FFEE)
        world, _ = build_attached_world(1)
        dev = world.vmm.device("vm1", "hostdev0")
        node = world.bus.node(dev.host_addr)
        for i in range(1000):
            for _ in range(rng.randrange(1, 4)):
                offset = rng.randrange(4, 4096 - 16)
                world.bus.write_config(dev.host_addr, offset,
                                       rng.randbytes(rng.randrange(1, 16)))
            vectors = tuple(MsiVector(rng.getrandbits(64), rng.getrandbits(32),
                                      rng.random() < 0.25)
                            for _ in range(rng.randrange(0, 6)))
            world.vmm.program_msi("vm1", "hostdev0", MsiState(
                enabled=rng.random() < 0.7 and bool(vectors), vectors=vectors))

            config_before = node.config.snapshot()
            overlay_before = bytes(dev.emulated_config)
            msi_before = dev.msi
            map_before = dev.region_map

            world.vmm.pause("vm1", "hostdev0")
            assert not dev.iommu_member
            assert dev.host_addr not in world.vmm.host_mappings
            world.vmm.unpause("vm1", "hostdev0")

            assert node.config.snapshot() == config_before, f"case {i}: config"
            assert bytes(dev.emulated_config) == overlay_before, f"case {i}"
            assert dev.msi == msi_before, f"case {i}: msi"
            assert dev.region_map == map_before, f"case {i}: region map"
        return "1000/1000 byte-exact"

    _criterion("1 snapshot-roundtrip", 10.0, run)


def test_criterion_2_sriov_zero_transition_gate():
    """Nonzero-to-nonzero VF count changes always fail with
    NonZeroTransition and never mutate the bus."""
    from svff.device_plane import create_bus

    def bus_key(bus):
        return tuple((a.linear, n.kind, n.num_vfs, n.present_on_bus)
                     for a, n in sorted(bus.nodes.items()))

    checked = {"gated": 0}

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 300), min_size=1, max_size=15))
    def property_holds(counts):
        bus = create_bus()
        for n in counts:
            current = bus.node(PF0).num_vfs
            if current > 0 and n > 0:
                before = bus_key(bus)
                try:
                    bus.set_num_vfs(PF0, n)
                    raise AssertionError(
                        f"numvfs {current}->{n} accepted without zeroing")
                except NonZeroTransition:
                    pass
                assert bus_key(bus) == before, "failed op mutated the bus"
                checked["gated"] += 1
            else:
                try:
                    bus.set_num_vfs(PF0, n)
                except ExceedsCapability:
                    pass
            assert bus.node(PF0).num_vfs == len(bus.vf_children(PF0))

    def run():
        property_holds()
        assert checked["gated"] > 100
        return f"{checked['gated']} gated transitions verified"

    _criterion("2 sriov-zero-gate", 5.0, run)


def test_criterion_3_pause_mode_transparency():
    """4 VFs across 4 live VMs: pause-mode keeps every guest view at
    cardinality 1 through all phases; detach-mode drops to 0 mid-cycle."""

    def run():
        world, orch = build_attached_world(4)
        plan = tuple((f"vm{i + 1}", 1) for i in range(4))
        trace: list[list[int]] = []

        def observer(phase):
            trace.append([len(world.vmm.guest_view(f"vm{i + 1}"))
                          for i in range(4)])

        trace.append([len(world.vmm.guest_view(f"vm{i + 1}")) for i in range(4)])
        report = orch.reconf(PF0, 4, plan, pause_mode=True, observer=observer)
        assert report.ok, report.to_dict()
        assert len(trace) == 5
        for counts in trace:
            assert counts == [1, 1, 1, 1], f"cardinality dipped: {trace}"
        for i in range(4):
            assert [v.status for v in world.vmm.guest_view(f"vm{i + 1}")] == \
                ["attached"]

        world2, orch2 = build_attached_world(4)
        detach_trace = []
        report = orch2.reconf(PF0, 4, plan, pause_mode=False,
                              observer=lambda phase: detach_trace.append(
                                  [len(world2.vmm.guest_view(f"vm{i + 1}"))
                                   for i in range(4)]))
        assert report.ok
        assert [0, 0, 0, 0] in detach_trace, detach_trace
        assert detach_trace[-1] == [1, 1, 1, 1]
        return "pause: constant [1,1,1,1]; detach: dropped to [0,0,0,0]"

    _criterion("3 pause-transparency", 5.0, run)


def test_criterion_4_exhaustive_exploration():
    """BFS over all control-plane call sequences (1 PF, <=3 VFs, 2 VMs) to
    depth 8 reaches no state violating any module invariant."""

    def run():
        stats = explorer.explore(max_depth=8)
        assert stats["depth_reached"] == 8
        assert stats["states"] > 5000, "universe unexpectedly small"
        return (f"{stats['states']} states, {stats['transitions']} transitions, "
                f"{stats['errors']} error edges (all immutable)")

    _criterion("4 state-exploration", 120.0, run)


def test_criterion_5_overhead_table_reproduction():
    """`svff bench --runs 100`: overhead_pct within [-3.5, -1.0] and
    ms_per_vf within [-95, -65] for 1, 4, and 10 VFs."""

    def run():
        result = CliRunner().invoke(cli_main, ["bench", "--runs", "100",
                                               "--format", "json"])
        assert result.exit_code == 0, result.output
        report = json.loads(result.output)
        assert [row["n_vfs"] for row in report["rows"]] == [1, 4, 10]
        details = []
        for row in report["rows"]:
            assert -3.5 <= row["overhead_pct"] <= -1.0, row
            assert -95.0 <= row["ms_per_vf"] <= -65.0, row
            details.append(f"n={row['n_vfs']}: {row['overhead_pct']:.2f}% "
                           f"{row['ms_per_vf']:.0f}ms/VF")
        row1 = report["rows"][0]
        assert row1["cpu_fraction_da"] < 0.10 and row1["cpu_fraction_pu"] < 0.10
        return "; ".join(details)

    _criterion("5 overhead-table", 30.0, run)


def test_criterion_6_protocol_goldens():
    """The fixed command transcript matches the checked-in responses
    byte for byte."""
    from test_qmp import GOLDEN_PATH, run_transcript

    def run():
        golden = json.loads(GOLDEN_PATH.read_text())
        sends = [entry["send"] for entry in golden["transcript"]]
        actual = run_transcript(sends)
        expected = [golden["greeting"]] + [e["expect"]
                                           for e in golden["transcript"]]
        assert actual == expected, "response lines diverged from goldens"
        return f"{len(sends)} commands byte-identical"

    _criterion("6 protocol-goldens", 1.0, run)


def test_criterion_7_mode_equivalence():
    """20 random plans: pause-mode and detach-mode reconfiguration converge
    to identical bus/attachment/record states."""
    from test_orchestrator import world_fingerprint

    def run():
        rng = random.Random(0xBEEF)
        compared = 0
        attempts = 0
        while compared < 20:
            attempts += 1
            assert attempts < 200, "rejection sampling runaway"
            n_init = rng.randrange(1, 5)
            new_n = rng.randrange(1, 7)
            vm_pool = [f"vm{i + 1}" for i in range(4)]
            rng.shuffle(vm_pool)
            budget = new_n
            plan = []
            for vm in vm_pool[:rng.randrange(1, 5)]:
                if budget == 0:
                    break
                take = rng.randrange(1, budget + 1)
                plan.append((vm, take))
                budget -= take
            plan = tuple(plan)
            fingerprints = []
            vanished = False
            for pause_mode in (False, True):
                world, orch = build_attached_world(4)
                base = tuple((f"vm{i + 1}", 1) for i in range(min(n_init, 4)))
                assert orch.reconf(PF0, n_init, base, pause_mode=False).ok
                report = orch.reconf(PF0, new_n, plan, pause_mode)
                if report.vanished:
                    # index shrink leaves a paused zombie by design; such
                    # plans are out of the equivalence property's domain
                    vanished = True
                    break
                assert not report.aborted, report.to_dict()
                check_invariants(world)
                check_records_match_attachments(world)
                fingerprints.append(world_fingerprint(world))
            if vanished:
                continue
            assert fingerprints[0] == fingerprints[1], \
                f"plan {plan} (init {n_init} -> {new_n}) diverged"
            compared += 1
        return f"{compared} plans converged ({attempts} sampled)"

    _criterion("7 mode-equivalence", 10.0, run)
