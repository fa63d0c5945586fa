"""Init and reconf automations over the bus, drivers, VMM, and records.

``init`` brings a PF up from scratch: detach leftovers, remove the PF,
optionally flash a new device profile, rescan, configure queues, create
VFs, and attach them per plan. ``reconf`` changes the VF count while
managing the attached guests, either by detach/reattach or, in pause
mode, by pausing each device host-side so the guests never lose it.

A reconfiguration runs in four observable phases, reported to an optional
observer callback (the benchmark's timing hooks and the transparency
checks both ride on it):

    rescan -> remove_vf -> change_numvf -> add_vf

Failures abort with a report of the completed steps; there is no
automatic rollback, re-running the same plan resumes and converges.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .device_plane import DRIVER_QDMA_PF, DRIVER_VFIO, MAX_QUEUES, MAX_VFS_PER_PF, DeviceProfile
from .errors import (
    AlreadyAttached,
    NotAPf,
    NotBoundToVfio,
    PlanInvalid,
    RecordExists,
    RecordMissing,
    SvffError,
)
from .pci import PciAddress
from .qmp import Dispatcher
from .vmm import PAUSED, REALIZED
from .world import World

_PLAN_LOCK = threading.Lock()


@dataclass(frozen=True)
class PlanConfig:
    """Target configuration for init/reconf."""

    pf: PciAddress
    num_vfs: int
    assignments: tuple[tuple[str, int], ...] = ()
    queue_count: int | None = None
    pause_mode: bool = False
    flash: DeviceProfile | None = None

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path | None = None) -> "PlanConfig":
        try:
            pf = PciAddress.parse(data["pf"])
            assignments = tuple(
                (a["vm"], int(a.get("count", 1)))
                for a in data.get("assignments", [])
            )
            flash = data.get("flash")
            if isinstance(flash, str):
                path = Path(flash)
                if base_dir is not None and not path.is_absolute():
                    path = Path(base_dir) / path
                flash = DeviceProfile.from_json(path)
            elif isinstance(flash, dict):
                flash = DeviceProfile.from_dict(flash)
            return cls(
                pf=pf,
                num_vfs=int(data["num_vfs"]),
                assignments=assignments,
                queue_count=int(data["queue_count"]) if "queue_count" in data else None,
                pause_mode=bool(data.get("pause_mode", False)),
                flash=flash,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise PlanInvalid(f"malformed plan: {exc}") from exc

    @classmethod
    def from_json(cls, path: str | Path) -> "PlanConfig":
        path = Path(path)
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), base_dir=path.parent)


@dataclass
class StepResult:
    phase: str
    action: str
    target: str
    ok: bool = True
    detail: str | None = None

    def to_dict(self) -> dict:
        return {"phase": self.phase, "action": self.action, "target": self.target,
                "ok": self.ok, "detail": self.detail}


@dataclass
class Report:
    """Step-by-step outcome of an init or reconf run."""

    operation: str
    steps: list[StepResult] = field(default_factory=list)
    vanished: list[str] = field(default_factory=list)
    aborted: bool = False
    error: str | None = None

    @property
    def ok(self) -> bool:
        return not self.aborted and not self.vanished

    def to_dict(self) -> dict:
        return {
            "operation": self.operation,
            "ok": self.ok,
            "aborted": self.aborted,
            "error": self.error,
            "vanished": list(self.vanished),
            "steps": [s.to_dict() for s in self.steps],
        }


class _Abort(Exception):
    """Internal: stop plan execution, the report has the failure."""


class Orchestrator:
    def __init__(self, world: World):
        self.world = world
        self.dispatcher = Dispatcher(world)

    # -- single attach/detach --

    def attach_vf(self, vf: PciAddress, vm_name: str,
                  guest_id: str | None = None) -> str:
        """Record the association, then realize now (live VM) or on next start."""
        world = self.world
        if world.records.get(vf) is not None:
            raise RecordExists(f"record for {vf} already exists")
        node = world.bus.get_present(vf)
        if node.bound_driver != DRIVER_VFIO:
            raise NotBoundToVfio(f"{vf} is bound to {node.bound_driver}, need vfio")
        vm = world.vmm.vm(vm_name)
        if world.vmm.is_attached(vf):
            raise AlreadyAttached(f"{vf} is already attached")
        gid = guest_id if guest_id is not None else world.allocate_guest_id()
        world.records.add(world.new_record(vf, vm_name, gid))
        if vm.live:
            try:
                world.vmm.realize(vm_name, vf, gid)
            except SvffError:
                world.records.remove(vf)
                raise
        return gid

    def detach_vf(self, vf: PciAddress) -> None:
        """Detach using the persisted record as the source of truth."""
        world = self.world
        record = world.records.get(vf)
        if record is None:
            raise RecordMissing(f"no record for {vf}")
        vm = world.vmm.vms.get(record.vm)
        if vm is not None:
            dev = vm.devices.get(record.guest_id)
            if dev is not None and dev.host_addr == vf:
                world.vmm.exit_device(record.vm, record.guest_id)
        world.records.remove(vf)

    # -- VM lifecycle with queued-record replay --

    def start_vm(self, vm_name: str) -> list[StepResult]:
        """Start the VM and realize any queued attachment records."""
        world = self.world
        world.vmm.start_vm(vm_name)
        steps: list[StepResult] = []
        for record in world.records.for_vm(vm_name):
            if world.vmm.is_attached(record.vf):
                continue
            try:
                world.vmm.realize(vm_name, record.vf, record.guest_id)
                steps.append(StepResult("start", "realize", str(record.vf)))
            except SvffError as exc:
                steps.append(StepResult("start", "realize", str(record.vf),
                                        ok=False, detail=str(exc)))
        return steps

    def stop_vm(self, vm_name: str) -> None:
        self.world.vmm.stop_vm(vm_name)

    # -- plan validation --

    def _validate_plan(self, pf: PciAddress, num_vfs: int,
                       assignments: tuple[tuple[str, int], ...],
                       queue_count: int | None, check_vms: bool) -> None:
        if num_vfs < 0 or num_vfs > MAX_VFS_PER_PF:
            raise PlanInvalid(f"num_vfs must be 0-{MAX_VFS_PER_PF}, got {num_vfs}")
        if queue_count is not None and not (1 <= queue_count <= MAX_QUEUES):
            raise PlanInvalid(f"queue_count must be 1-{MAX_QUEUES}, got {queue_count}")
        names = [vm for vm, _ in assignments]
        if len(set(names)) != len(names):
            raise PlanInvalid("duplicate VM in assignments")
        if any(count < 0 for _, count in assignments):
            raise PlanInvalid("negative VF count in assignments")
        total = sum(count for _, count in assignments)
        if total > num_vfs:
            raise PlanInvalid(f"assignments need {total} VFs but num_vfs is {num_vfs}")
        node = self.world.bus.node(pf)
        if node is not None and not node.is_pf:
            raise NotAPf(f"{pf} is a virtual function")
        if check_vms:
            for vm in names:
                if vm not in self.world.vmm.vms:
                    raise PlanInvalid(f"VM {vm!r} is not defined")

    # -- step helpers --

    def _step(self, report: Report, phase: str, action: str, target: str,
              fn=None) -> None:
        try:
            if fn is not None:
                fn()
        except SvffError as exc:
            report.steps.append(StepResult(phase, action, target, ok=False,
                                           detail=str(exc)))
            report.aborted = True
            report.error = f"{exc.error_class}: {exc}"
            raise _Abort() from exc
        report.steps.append(StepResult(phase, action, target))

    def _qmp(self, report: Report, phase: str, action: str, target: str,
             command: dict) -> None:
        response = self.dispatcher.dispatch(command)
        if "error" in response:
            err = response["error"]
            detail = f"{err['class']}: {err['desc']}"
            report.steps.append(StepResult(phase, action, target, ok=False,
                                           detail=detail))
            report.aborted = True
            report.error = detail
            raise _Abort()
        report.steps.append(StepResult(phase, action, target))

    def _ensure_vfio_bound(self, report: Report, phase: str, vf: PciAddress) -> None:
        world = self.world
        node = world.bus.node(vf)
        if node is None or not node.present_on_bus:
            # records a failed step and aborts via NotPresent
            self._step(report, phase, "bind-vfio", str(vf),
                       lambda: world.bus.get_present(vf))
            return
        if node.bound_driver == DRIVER_VFIO:
            return
        pair = (world.bus.profile.vendor_id, world.bus.profile.device_id)
        if not world.drivers.registry.accepts(*pair):
            self._step(report, phase, "register-vfio-id",
                       f"{pair[0]:04x}:{pair[1]:04x}",
                       lambda: world.drivers.register_vfio_id(*pair))
        if node.bound_driver is not None:
            self._step(report, phase, "unbind", str(vf),
                       lambda: world.drivers.unbind(vf))
        self._step(report, phase, "bind-vfio", str(vf),
                   lambda: world.drivers.bind_vfio(vf))

    def _records_for_pf(self, pf: PciAddress):
        lo, hi = self._vf_linear_range(pf)
        return [r for r in self.world.records.all() if lo <= r.vf.linear < hi]

    def _vf_linear_range(self, pf: PciAddress) -> tuple[int, int]:
        bus = self.world.bus
        pf_index = pf.linear - bus.pf_address(0).linear
        lo = bus.vf_address(pf_index, 0).linear
        return lo, lo + max(bus.profile.max_vfs_per_pf, 1)

    # -- init --

    def init(self, plan: PlanConfig, observer=None) -> Report:
        with _PLAN_LOCK:
            return self._init_locked(plan, observer)

    def _init_locked(self, plan: PlanConfig, observer) -> Report:
        self._validate_plan(plan.pf, plan.num_vfs, plan.assignments,
                            plan.queue_count, check_vms=True)
        world = self.world
        report = Report("init")
        try:
            # 1. detach every VF associated with the PF
            for record in self._records_for_pf(plan.pf):
                att = world.vmm.attachment_of(record.vf)
                if att is not None and att[1].state == PAUSED:
                    report.steps.append(StepResult(
                        "detach", "detach", str(record.vf), ok=False,
                        detail="device is paused; unpause or reconf first"))
                    report.aborted = True
                    report.error = "PausedDevice: paused device blocks init"
                    return report
                self._step(report, "detach", "detach-vf", str(record.vf),
                           lambda vf=record.vf: self.detach_vf(vf))
            # 2. remove the PF (and any remaining VFs) from the bus
            if world.bus.node(plan.pf) is not None and \
                    world.bus.node(plan.pf).present_on_bus:
                self._step(report, "remove", "remove-device", str(plan.pf),
                           lambda: world.drivers.remove_device(plan.pf))
            # 3. optional profile flash
            if plan.flash is not None:
                self._step(report, "flash", "flash-profile", str(plan.pf),
                           lambda: world.bus.flash(plan.flash))
            # 4. rediscover and validate
            self._step(report, "rescan", "rescan-bus", "*",
                       lambda: world.drivers.rescan_bus())
            self._step(report, "rescan", "validate", str(plan.pf),
                       lambda: world.drivers.validate(plan.pf, DRIVER_QDMA_PF))
            # 5. queue configuration and VF creation
            queues = plan.queue_count if plan.queue_count is not None \
                else world.bus.profile.queue_count
            self._step(report, "configure", "set-queues", f"{queues}",
                       lambda: self._set_queue_count(plan.pf, queues))
            self._step(report, "configure", "set-num-vfs", f"{plan.num_vfs}",
                       lambda: world.bus.set_num_vfs(plan.pf, plan.num_vfs))
            # 6. bind and attach per assignment
            pool = [n.address for n in world.bus.vf_children(plan.pf)]
            for vm_name, count in plan.assignments:
                for _ in range(count):
                    vf = pool.pop(0)
                    self._ensure_vfio_bound(report, "attach", vf)
                    self._step(report, "attach", "attach-vf", f"{vf} -> {vm_name}",
                               lambda v=vf, m=vm_name: self.attach_vf(v, m))
        except _Abort:
            pass
        return report

    def _set_queue_count(self, pf: PciAddress, queues: int) -> None:
        profile = self.world.bus.profile
        if queues > profile.queue_count:
            raise PlanInvalid(
                f"plan wants {queues} queues, profile supports {profile.queue_count}")
        self.world.bus.get_present(pf).queue_count = queues

    def derive_assignments(self, pf: PciAddress,
                           new_num_vfs: int) -> tuple[tuple[str, int], ...]:
        """Current per-VM distribution, trimmed round-robin to the new count.

        Used when a reconfiguration gives no explicit assignments: every VM
        keeps its share, shedding one VF per round if the total shrinks.
        """
        wanted: dict[str, int] = {}
        for record in self._records_for_pf(pf):
            wanted[record.vm] = wanted.get(record.vm, 0) + 1
        while sum(wanted.values()) > new_num_vfs:
            for vm in list(wanted):
                if sum(wanted.values()) <= new_num_vfs:
                    break
                if wanted[vm] > 0:
                    wanted[vm] -= 1
        return tuple((vm, count) for vm, count in wanted.items() if count > 0)

    # -- reconf --

    def reconf(self, pf: PciAddress, new_num_vfs: int,
               assignments: tuple[tuple[str, int], ...],
               pause_mode: bool, observer=None) -> Report:
        with _PLAN_LOCK:
            return self._reconf_locked(pf, new_num_vfs, tuple(assignments),
                                       pause_mode, observer)

    def _reconf_locked(self, pf: PciAddress, new_num_vfs: int,
                       assignments: tuple[tuple[str, int], ...],
                       pause_mode: bool, observer) -> Report:
        self._validate_plan(pf, new_num_vfs, assignments, None, check_vms=True)
        world = self.world
        report = Report("reconf")
        notify = observer if observer is not None else (lambda phase: None)

        prev_records = {r.vf: r for r in self._records_for_pf(pf)}
        paused_kept: dict[PciAddress, tuple[str, str]] = {}

        try:
            # phase 1: rescan to be sure the bus view is complete
            self._step(report, "rescan", "rescan-bus", "*",
                       lambda: world.drivers.rescan_bus())
            notify("rescan")

            # phase 2: pause (if the VM keeps the device) or detach each VF
            quota = {vm: count for vm, count in assignments}
            for vf, record in sorted(prev_records.items()):
                att = world.vmm.attachment_of(vf)
                vm = world.vmm.vms.get(record.vm)
                live = vm is not None and vm.live
                keep = (pause_mode and att is not None and live
                        and quota.get(record.vm, 0) > 0)
                if keep:
                    dev = att[1]
                    if dev.state == REALIZED:
                        self._qmp(report, "remove_vf", "device-pause",
                                  record.guest_id,
                                  {"execute": "device_pause",
                                   "arguments": {"id": record.guest_id,
                                                 "paused": True}})
                    node = world.bus.node(vf)
                    if node is not None and node.present_on_bus \
                            and node.bound_driver is not None:
                        self._step(report, "remove_vf", "unbind", str(vf),
                                   lambda v=vf: world.drivers.unbind(v))
                    paused_kept[vf] = (record.vm, record.guest_id)
                    quota[record.vm] -= 1
                    continue
                if att is not None:
                    if att[1].state == PAUSED:
                        # leftover pause that the new plan does not keep:
                        # revive it first so it can be detached cleanly
                        self._ensure_vfio_bound(report, "remove_vf", vf)
                        self._qmp(report, "remove_vf", "device-unpause",
                                  record.guest_id,
                                  {"execute": "device_pause",
                                   "arguments": {"id": record.guest_id,
                                                 "paused": False}})
                    self._qmp(report, "remove_vf", "device-del", record.guest_id,
                              {"execute": "device_del",
                               "arguments": {"id": record.guest_id}})
                self._step(report, "remove_vf", "remove-record", str(vf),
                           lambda v=vf: world.records.remove(v))
            notify("remove_vf")

            # phase 3: the SR-IOV zero transition
            self._step(report, "change_numvf", "set-num-vfs", "0",
                       lambda: world.bus.set_num_vfs(pf, 0))
            if new_num_vfs > 0:
                self._step(report, "change_numvf", "set-num-vfs",
                           str(new_num_vfs),
                           lambda: world.bus.set_num_vfs(pf, new_num_vfs))
            notify("change_numvf")

            # phase 4: reattach; VMs keep their previous VFs where possible
            prev_by_vm: dict[str, list[PciAddress]] = {}
            for vf, record in sorted(prev_records.items()):
                prev_by_vm.setdefault(record.vm, []).append(vf)
            reserved: dict[PciAddress, str] = {}
            for vm_name, count in assignments:
                taken = 0
                for vf in prev_by_vm.get(vm_name, []):
                    if taken == count:
                        break
                    node = world.bus.node(vf)
                    on_bus = node is not None and node.present_on_bus
                    if vf in paused_kept or on_bus:
                        reserved[vf] = vm_name
                        taken += 1
            pool = [n.address for n in world.bus.vf_children(pf)
                    if n.address not in reserved]

            # round A: previous holders reclaim their VFs (and their guest
            # ids) before any fresh allocation, so detach-mode reattachment
            # mints the same ids a pause-mode run would have kept
            done = {vm_name: 0 for vm_name, _ in assignments}
            for vm_name, count in assignments:
                for vf in prev_by_vm.get(vm_name, []):
                    if done[vm_name] == count:
                        break
                    if reserved.get(vf) != vm_name:
                        continue
                    node = world.bus.node(vf)
                    on_bus = node is not None and node.present_on_bus
                    if vf in paused_kept:
                        gid = paused_kept[vf][1]
                        if not on_bus:
                            report.vanished.append(gid)
                            report.steps.append(StepResult(
                                "add_vf", "paused-vf-vanished", f"{vf} ({gid})",
                                ok=False,
                                detail="backing VF disappeared; device left paused"))
                            done[vm_name] += 1
                            continue
                        self._ensure_vfio_bound(report, "add_vf", vf)
                        self._qmp(report, "add_vf", "device-unpause", gid,
                                  {"execute": "device_pause",
                                   "arguments": {"id": gid, "paused": False}})
                        done[vm_name] += 1
                    else:
                        gid = prev_records[vf].guest_id
                        self._ensure_vfio_bound(report, "add_vf", vf)
                        self._step(report, "add_vf", "attach-vf",
                                   f"{vf} -> {vm_name}",
                                   lambda v=vf, m=vm_name, g=gid:
                                   self.attach_vf(v, m, guest_id=g))
                        done[vm_name] += 1
            # round B: fill the remaining quota from the free pool
            for vm_name, count in assignments:
                while done[vm_name] < count:
                    vf = pool.pop(0)
                    self._ensure_vfio_bound(report, "add_vf", vf)
                    self._step(report, "add_vf", "attach-vf",
                               f"{vf} -> {vm_name}",
                               lambda v=vf, m=vm_name: self.attach_vf(v, m))
                    done[vm_name] += 1
            notify("add_vf")
        except _Abort:
            pass
        return report
