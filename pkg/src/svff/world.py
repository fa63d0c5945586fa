"""The composed simulation state: bus, driver manager, VMM, records.

A world can be created fresh for tests and benchmarks or loaded from a
state directory so consecutive CLI invocations operate on the same
simulated machine. Serialization is plain JSON with base64 payloads for
config spaces and touched memory regions.
"""

from __future__ import annotations

import base64
import json
from datetime import datetime, timezone
from pathlib import Path

from .device_plane import DEFAULT_PROFILE, Bus, DeviceNode, DeviceProfile
from .driver_manager import DriverManager, DriverRegistry
from .pci import ConfigSpace, PciAddress
from .records import AttachmentRecord, RecordStore
from .vmm import (
    GuestDevice,
    MsiState,
    MsiVector,
    PauseSnapshot,
    RegionMapping,
    Vmm,
)

STATE_FILENAME = "world.json"
RECORDS_DIRNAME = "records"


class SystemClock:
    def now(self) -> str:
        return datetime.now(timezone.utc).isoformat(timespec="seconds")


class FixedClock:
    """Constant timestamps for deterministic simulation runs."""

    def __init__(self, value: str = "1970-01-01T00:00:00+00:00"):
        self.value = value

    def now(self) -> str:
        return self.value


class World:
    def __init__(self, profile: DeviceProfile = DEFAULT_PROFILE,
                 record_dir: str | Path | None = None, clock=None):
        self.bus = Bus(profile)
        self.drivers = DriverManager(self.bus)
        self.vmm = Vmm(self.bus)
        self.drivers.attachment_guard = self.vmm.is_attached
        self.records = RecordStore(record_dir)
        self.clock = clock if clock is not None else SystemClock()

    # -- serialization --

    def to_dict(self) -> dict:
        return {
            "profile": self.bus.profile.to_dict(),
            "nodes": [self._node_dict(n) for n in
                      sorted(self.bus.nodes.values(), key=lambda n: n.address)],
            "removed": sorted(str(a) for a in self.bus.removed),
            "vfio_new_ids": sorted(list(p) for p in self.drivers.registry.vfio_new_ids),
            "vms": [self._vm_dict(vm) for vm in
                    sorted(self.vmm.vms.values(), key=lambda v: v.name)],
        }

    @staticmethod
    def _node_dict(node: DeviceNode) -> dict:
        return {
            "address": str(node.address),
            "kind": node.kind,
            "parent": str(node.parent) if node.parent else None,
            "bound_driver": node.bound_driver,
            "num_vfs": node.num_vfs,
            "present_on_bus": node.present_on_bus,
            "iommu_group": node.iommu_group,
            "queue_count": node.queue_count,
            "io_count": node.io_count,
            "config": base64.b64encode(node.config.snapshot()).decode("ascii"),
            "regions": {name: base64.b64encode(bytes(data)).decode("ascii")
                        for name, data in sorted(node.region_data.items())},
        }

    def _vm_dict(self, vm) -> dict:
        return {
            "name": vm.name,
            "live": vm.live,
            "devices": [self._device_dict(d) for d in vm.devices.values()],
        }

    @staticmethod
    def _msi_dict(msi: MsiState) -> dict:
        return {
            "enabled": msi.enabled,
            "vectors": [{"address": v.address, "data": v.data, "masked": v.masked}
                        for v in msi.vectors],
        }

    @staticmethod
    def _msi_from(data: dict) -> MsiState:
        return MsiState(
            enabled=data["enabled"],
            vectors=tuple(MsiVector(v["address"], v["data"], v["masked"])
                          for v in data["vectors"]),
        )

    def _device_dict(self, dev: GuestDevice) -> dict:
        out = {
            "guest_id": dev.guest_id,
            "host_addr": str(dev.host_addr),
            "state": dev.state,
            "emulated_config": base64.b64encode(dev.emulated_config).decode("ascii"),
            "iommu_member": dev.iommu_member,
            "msi": self._msi_dict(dev.msi),
            "region_map": [[m.region, m.guest_base, m.size] for m in dev.region_map],
            "request_notifier": dev.request_notifier,
            "error_notifier": dev.error_notifier,
            "ignored_io_count": dev.ignored_io_count,
            "snapshot": None,
        }
        if dev.snapshot is not None:
            out["snapshot"] = {
                "config": base64.b64encode(dev.snapshot.config_copy).decode("ascii"),
                "emulated": base64.b64encode(dev.snapshot.emulated_copy).decode("ascii"),
                "msi": self._msi_dict(dev.snapshot.msi),
                "region_map": [[m.region, m.guest_base, m.size]
                               for m in dev.snapshot.region_map],
            }
        return out

    @classmethod
    def from_dict(cls, data: dict, record_dir: str | Path | None = None,
                  clock=None) -> "World":
        world = cls(DeviceProfile.from_dict(data["profile"]),
                    record_dir=record_dir, clock=clock)
        world.bus.nodes = {}
        for nd in data["nodes"]:
            address = PciAddress.parse(nd["address"])
            node = DeviceNode(
                address=address,
                kind=nd["kind"],
                config=ConfigSpace(base64.b64decode(nd["config"])),
                parent=PciAddress.parse(nd["parent"]) if nd["parent"] else None,
                bound_driver=nd["bound_driver"],
                num_vfs=nd["num_vfs"],
                present_on_bus=nd["present_on_bus"],
                iommu_group=nd["iommu_group"],
                queue_count=nd["queue_count"],
                io_count=nd["io_count"],
                region_data={name: bytearray(base64.b64decode(payload))
                             for name, payload in nd["regions"].items()},
            )
            world.bus.nodes[address] = node
        world.bus.removed = {PciAddress.parse(a) for a in data["removed"]}
        world.drivers.registry = DriverRegistry(
            {tuple(p) for p in data["vfio_new_ids"]})
        for vd in data["vms"]:
            vm = world.vmm.define_vm(vd["name"])
            vm.live = vd["live"]
            for dd in vd["devices"]:
                snapshot = None
                if dd["snapshot"] is not None:
                    sd = dd["snapshot"]
                    snapshot = PauseSnapshot(
                        config_copy=base64.b64decode(sd["config"]),
                        emulated_copy=base64.b64decode(sd["emulated"]),
                        msi=cls._msi_from(sd["msi"]),
                        region_map=tuple(RegionMapping(*m) for m in sd["region_map"]),
                    )
                dev = GuestDevice(
                    guest_id=dd["guest_id"],
                    host_addr=PciAddress.parse(dd["host_addr"]),
                    state=dd["state"],
                    emulated_config=base64.b64decode(dd["emulated_config"]),
                    snapshot=snapshot,
                    iommu_member=dd["iommu_member"],
                    msi=cls._msi_from(dd["msi"]),
                    region_map=tuple(RegionMapping(*m) for m in dd["region_map"]),
                    request_notifier=dd["request_notifier"],
                    error_notifier=dd["error_notifier"],
                    ignored_io_count=dd["ignored_io_count"],
                )
                vm.devices[dev.guest_id] = dev
                if dev.region_map:
                    world.vmm.host_mappings[dev.host_addr] = dev.region_map
        return world

    # -- state directory binding --

    def save(self, state_dir: str | Path) -> None:
        state_dir = Path(state_dir)
        state_dir.mkdir(parents=True, exist_ok=True)
        with open(state_dir / STATE_FILENAME, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, state_dir: str | Path, clock=None) -> "World":
        state_dir = Path(state_dir)
        with open(state_dir / STATE_FILENAME, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        return cls.from_dict(data, record_dir=state_dir / RECORDS_DIRNAME, clock=clock)

    @classmethod
    def exists(cls, state_dir: str | Path) -> bool:
        return (Path(state_dir) / STATE_FILENAME).is_file()

    # -- misc helpers --

    def new_record(self, vf: PciAddress, vm: str, guest_id: str) -> AttachmentRecord:
        # synthetic guest-side slot: one slot per host function, offset past
        # the chipset devices
        slot = 4 + (vf.linear % 24)
        return AttachmentRecord(
            vf=vf,
            vm=vm,
            guest_id=guest_id,
            guest_slot=f"0000:00:{slot:02x}.0",
            created_at=self.clock.now(),
        )

    def allocate_guest_id(self) -> str:
        """Smallest unused hostdevN across live attachments and records.

        Reusing freed indices keeps ids stable across detach/reattach
        cycles, so a detach-mode reconfiguration converges to the same ids
        as a pause-mode one.
        """
        used = {r.guest_id for r in self.records.all()}
        for vm in self.vmm.vms.values():
            used.update(vm.devices.keys())
        i = 0
        while f"hostdev{i}" in used:
            i += 1
        return f"hostdev{i}"
