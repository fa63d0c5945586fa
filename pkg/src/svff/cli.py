"""Command-line interface.

State lives in a directory (``--state-dir`` or $SVFF_STATE_DIR, default
``./svff-state``) so consecutive invocations operate on the same simulated
machine; attachment records are JSON files under ``<state-dir>/records``.

Exit codes: 0 success, 2 invalid plan, 3 a sub-operation failed (the
step-by-step report is printed to stdout as JSON), 1 other errors.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import bench as bench_mod
from .device_plane import DEFAULT_PROFILE, DeviceProfile
from .errors import PlanInvalid, SvffError
from .orchestrator import Orchestrator, PlanConfig, Report
from .pci import PciAddress
from .qmp import QmpServer, serve_stdio
from .world import RECORDS_DIRNAME, World

EXIT_PLAN_INVALID = 2
EXIT_SUBOP_FAILED = 3


def _fail(message: str, code: int = 1) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_world(ctx: click.Context) -> World:
    state_dir = ctx.obj["state_dir"]
    if not World.exists(state_dir):
        _fail(f"no simulated machine in {state_dir}; run 'svff bus create' first")
    return World.load(state_dir)


def _save_world(ctx: click.Context, world: World) -> None:
    world.save(ctx.obj["state_dir"])


def _emit_report(ctx: click.Context, world: World, report: Report) -> None:
    _save_world(ctx, world)
    click.echo(json.dumps(report.to_dict(), indent=2))
    if not report.ok:
        sys.exit(EXIT_SUBOP_FAILED)


@click.group()
@click.option("--state-dir", envvar="SVFF_STATE_DIR", default="./svff-state",
              show_default=True, type=click.Path(file_okay=False),
              help="Directory holding the simulated machine state.")
@click.pass_context
def main(ctx: click.Context, state_dir: str) -> None:
    """Manage a simulated SR-IOV device, its VMs, and VF attachments."""
    ctx.ensure_object(dict)
    ctx.obj["state_dir"] = Path(state_dir)


# -- bus and VM bootstrap --

@main.group()
def bus() -> None:
    """Simulated PCI bus management."""


@bus.command("create")
@click.option("--profile", "profile_path", type=click.Path(exists=True, dir_okay=False),
              help="Device profile JSON (default: embedded profile).")
@click.option("--force", is_flag=True, help="Replace an existing state directory.")
@click.pass_context
def bus_create(ctx: click.Context, profile_path: str | None, force: bool) -> None:
    """Create a fresh bus from a device profile."""
    state_dir = ctx.obj["state_dir"]
    if World.exists(state_dir) and not force:
        _fail(f"{state_dir} already holds a machine; use --force to replace it")
    try:
        profile = DeviceProfile.from_json(profile_path) if profile_path \
            else DEFAULT_PROFILE
        world = World(profile, record_dir=state_dir / RECORDS_DIRNAME)
    except SvffError as exc:
        _fail(str(exc))
    world.save(state_dir)
    click.echo(f"bus created: {len(world.bus.pf_nodes())} PF(s), "
               f"profile {profile.vendor_id:04x}:{profile.device_id:04x}")


@main.group()
def vm() -> None:
    """VM lifecycle."""


@vm.command("define")
@click.argument("name")
@click.pass_context
def vm_define(ctx: click.Context, name: str) -> None:
    world = _load_world(ctx)
    try:
        world.vmm.define_vm(name)
    except SvffError as exc:
        _fail(str(exc))
    _save_world(ctx, world)
    click.echo(f"vm {name} defined")


@vm.command("start")
@click.argument("name")
@click.pass_context
def vm_start(ctx: click.Context, name: str) -> None:
    """Start a VM, realizing any queued attachment records."""
    world = _load_world(ctx)
    orch = Orchestrator(world)
    try:
        steps = orch.start_vm(name)
    except SvffError as exc:
        _fail(str(exc))
    _save_world(ctx, world)
    realized = sum(1 for s in steps if s.ok)
    click.echo(f"vm {name} started ({realized} queued device(s) realized)")


@vm.command("stop")
@click.argument("name")
@click.pass_context
def vm_stop(ctx: click.Context, name: str) -> None:
    world = _load_world(ctx)
    try:
        Orchestrator(world).stop_vm(name)
    except SvffError as exc:
        _fail(str(exc))
    _save_world(ctx, world)
    click.echo(f"vm {name} stopped")


# -- orchestration --

@main.command("init")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Plan JSON (pf, num_vfs, assignments, queue_count, flash).")
@click.pass_context
def init_cmd(ctx: click.Context, config_path: str) -> None:
    """Initialize the device: detach, remove, flash, rescan, create, attach."""
    world = _load_world(ctx)
    try:
        plan = PlanConfig.from_json(config_path)
        report = Orchestrator(world).init(plan)
    except PlanInvalid as exc:
        _fail(str(exc), EXIT_PLAN_INVALID)
    _emit_report(ctx, world, report)


def _parse_assignments(pairs: tuple[str, ...]) -> tuple[tuple[str, int], ...]:
    out = []
    for pair in pairs:
        name, _, count = pair.partition("=")
        if not name:
            raise PlanInvalid(f"bad assignment {pair!r}, expected VM=COUNT")
        try:
            out.append((name, int(count) if count else 1))
        except ValueError as exc:
            raise PlanInvalid(f"bad assignment {pair!r}: {exc}") from exc
    return tuple(out)


@main.command("reconf")
@click.option("--pf", "pf_text", required=True, help="PF address, e.g. 0000:03:00.0.")
@click.option("--num-vfs", required=True, type=int, help="New VF count.")
@click.option("--pause/--no-pause", "pause_mode", default=False, show_default=True,
              help="Pause attached devices host-side instead of detaching them.")
@click.option("--assign", "assignments", multiple=True, metavar="VM=COUNT",
              help="Target distribution; defaults to the current one.")
@click.pass_context
def reconf_cmd(ctx: click.Context, pf_text: str, num_vfs: int, pause_mode: bool,
               assignments: tuple[str, ...]) -> None:
    """Change the VF count, managing detach/reattach or pause/unpause."""
    world = _load_world(ctx)
    orch = Orchestrator(world)
    try:
        pf = PciAddress.parse(pf_text)
        plan = _parse_assignments(assignments) if assignments \
            else orch.derive_assignments(pf, num_vfs)
        report = orch.reconf(pf, num_vfs, plan, pause_mode)
    except (PlanInvalid, ValueError) as exc:
        _fail(str(exc), EXIT_PLAN_INVALID)
    _emit_report(ctx, world, report)


@main.command("attach")
@click.argument("vf")
@click.argument("vm_name", metavar="VM")
@click.pass_context
def attach_cmd(ctx: click.Context, vf: str, vm_name: str) -> None:
    """Attach a vfio-bound VF to a VM (records it; realizes if the VM runs)."""
    world = _load_world(ctx)
    try:
        guest_id = Orchestrator(world).attach_vf(PciAddress.parse(vf), vm_name)
    except ValueError as exc:
        _fail(str(exc))
    except SvffError as exc:
        _fail(str(exc), EXIT_SUBOP_FAILED)
    _save_world(ctx, world)
    click.echo(f"attached {vf} to {vm_name} as {guest_id}")


@main.command("detach")
@click.argument("vf")
@click.pass_context
def detach_cmd(ctx: click.Context, vf: str) -> None:
    """Detach a VF using its persisted record."""
    world = _load_world(ctx)
    try:
        Orchestrator(world).detach_vf(PciAddress.parse(vf))
    except ValueError as exc:
        _fail(str(exc))
    except SvffError as exc:
        _fail(str(exc), EXIT_SUBOP_FAILED)
    _save_world(ctx, world)
    click.echo(f"detached {vf}")


# -- inspection --

def _status_dict(world: World) -> dict:
    return {
        "profile": world.bus.profile.to_dict(),
        "bus": [
            {
                "address": str(n.address),
                "kind": n.kind,
                "driver": n.bound_driver,
                "num_vfs": n.num_vfs if n.is_pf else None,
                "queue_count": n.queue_count,
                "iommu_group": n.iommu_group,
            }
            for n in world.bus.present_nodes()
        ],
        "vms": [
            {
                "name": vm.name,
                "live": vm.live,
                "devices": [
                    {
                        "id": d.guest_id,
                        "host": str(d.host_addr),
                        "status": d.status,
                        "ignored_io": d.ignored_io_count,
                    }
                    for d in vm.devices.values()
                ],
            }
            for vm in sorted(world.vmm.vms.values(), key=lambda v: v.name)
        ],
        "records": [r.to_dict() for r in world.records.all()],
    }


@main.command("status")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
@click.pass_context
def status_cmd(ctx: click.Context, as_json: bool) -> None:
    """Show the bus, the VMs, and the attachment records."""
    world = _load_world(ctx)
    info = _status_dict(world)
    if as_json:
        click.echo(json.dumps(info, indent=2))
        return
    click.echo("bus:")
    for node in info["bus"]:
        extra = f" num_vfs={node['num_vfs']}" if node["kind"] == "pf" else ""
        click.echo(f"  {node['address']}  {node['kind']}  "
                   f"driver={node['driver'] or '-'}{extra}")
    click.echo("vms:")
    for vminfo in info["vms"]:
        state = "running" if vminfo["live"] else "stopped"
        click.echo(f"  {vminfo['name']} ({state})")
        for dev in vminfo["devices"]:
            click.echo(f"    {dev['id']}: {dev['host']} [{dev['status']}]")
    click.echo("records:")
    for record in info["records"]:
        click.echo(f"  {record['address']} -> {record['vm']} ({record['guest_id']})")


# -- control server --

@main.command("serve")
@click.option("--qmp-socket", "socket_path", type=click.Path(),
              help="Unix socket path for the control protocol.")
@click.option("--stdio", is_flag=True, help="Serve on stdin/stdout instead.")
@click.pass_context
def serve_cmd(ctx: click.Context, socket_path: str | None, stdio: bool) -> None:
    """Serve the device-control protocol (device_pause et al.)."""
    if bool(socket_path) == stdio:
        _fail("pass exactly one of --qmp-socket PATH or --stdio")
    world = _load_world(ctx)
    save = lambda: _save_world(ctx, world)  # noqa: E731
    if stdio:
        serve_stdio(world, sys.stdin, sys.stdout, on_command=save)
        return
    try:
        server = QmpServer(world, socket_path, on_command=save)
    except SvffError as exc:
        _fail(str(exc))
    click.echo(f"serving on {socket_path}", err=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()


# -- benchmark --

@main.command("bench")
@click.option("--runs", default=100, show_default=True, type=int)
@click.option("--vf-counts", default="1,4,10", show_default=True,
              help="Comma-separated VF counts.")
@click.option("--seed", default="0", show_default=True)
@click.option("--format", "fmt", default="table", show_default=True,
              type=click.Choice(bench_mod.FORMATS))
@click.option("--calibration", "calibration_path",
              type=click.Path(exists=True, dir_okay=False),
              help="Calibration JSON (default: embedded reference timings).")
@click.option("--output", "output_path", type=click.Path(dir_okay=False),
              help="Write the report here (figures rendered alongside).")
@click.option("--no-figures", is_flag=True, help="Skip figure rendering.")
def bench_cmd(runs: int, vf_counts: str, seed: str, fmt: str,
              calibration_path: str | None, output_path: str | None,
              no_figures: bool) -> None:
    """Measure detach/attach vs pause/unpause reconfiguration cycles."""
    try:
        counts = tuple(int(c) for c in vf_counts.split(",") if c.strip())
        data = bench_mod.load_calibration(calibration_path) \
            if calibration_path else None
        model = bench_mod.calibrate(data)
        cpu_ms = float((data or bench_mod.DEFAULT_CALIBRATION).get("cpu_ms", 350))
        harness = bench_mod.BenchHarness(model, cpu_ms=cpu_ms)
        report = harness.run_experiment(n_runs=runs, vf_counts=counts,
                                        master_seed=seed)
        rendered = bench_mod.render_report(report, fmt)
    except (SvffError, ValueError) as exc:
        _fail(str(exc))
    if output_path:
        out = Path(output_path)
        out.write_text(rendered, encoding="utf-8")
        click.echo(f"report written to {out}")
        if not no_figures:
            from .bench.figures import render_figures

            for path in render_figures(report, out):
                click.echo(f"figure written to {path}")
    else:
        click.echo(rendered, nl=False)


if __name__ == "__main__":
    main()
