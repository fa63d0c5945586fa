"""VM and passthrough-device lifecycle: realize, exit, pause, unpause.

Pausing detaches a passthrough device from the host side only, in three
observable phases:

  1. snapshot the device config space, the emulated overlay, and the MSI
     state;
  2. PCI-level unregistration: drop the memory subregion mappings and
     clear the interrupt enable bits in the live config view;
  3. host-framework unregistration: disable the request/error notifiers,
     tear down interrupts, and leave the IOMMU group.

The guest keeps seeing the device (with its emulated registers) but every
I/O request is ignored until unpause, which restores the mappings and
notifiers first and then copies the saved config registers back verbatim.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .device_plane import DRIVER_VFIO, Bus
from .errors import (
    AlreadyAttached,
    AlreadyPaused,
    DuplicateId,
    DuplicateName,
    HostDeviceGone,
    NotBoundToVfio,
    NotPaused,
    PausedDevice,
    UnknownDevice,
    UnknownVm,
    VmNotLive,
)
from .pci import PciAddress

REALIZED = "realized"
PAUSED = "paused"

# guest-facing status labels
STATUS_ATTACHED = "attached"
STATUS_PAUSED = "paused"

MAX_MSI_VECTORS = 32

# deterministic guest base for region mappings; regions are spaced far
# wider than any profile region can be
GUEST_REGION_BASE = 0x8000_0000
GUEST_REGION_STRIDE = 0x1000_0000


class IoIgnored:
    """Result of a guest request dropped while its device is paused."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "IoIgnored"


IO_IGNORED = IoIgnored()


@dataclass(frozen=True)
class MsiVector:
    address: int
    data: int
    masked: bool = False


@dataclass(frozen=True)
class MsiState:
    """Message-signaled interrupt programming of one guest device."""

    enabled: bool = False
    vectors: tuple[MsiVector, ...] = ()

    def __post_init__(self) -> None:
        if len(self.vectors) > MAX_MSI_VECTORS:
            raise ValueError(f"at most {MAX_MSI_VECTORS} MSI vectors")

    @property
    def vector_count(self) -> int:
        return len(self.vectors)


@dataclass(frozen=True)
class RegionMapping:
    region: str
    guest_base: int
    size: int


@dataclass(frozen=True)
class PauseSnapshot:
    """State captured at pause time; immutable until discarded by unpause."""

    config_copy: bytes
    emulated_copy: bytes
    msi: MsiState
    region_map: tuple[RegionMapping, ...]


@dataclass
class GuestDevice:
    """A host device as seen by one VM."""

    guest_id: str
    host_addr: PciAddress
    state: str = REALIZED
    emulated_config: bytes = b""
    snapshot: PauseSnapshot | None = None
    iommu_member: bool = False
    msi: MsiState = MsiState()
    region_map: tuple[RegionMapping, ...] = ()
    request_notifier: bool = False
    error_notifier: bool = False
    ignored_io_count: int = 0

    @property
    def status(self) -> str:
        return STATUS_PAUSED if self.state == PAUSED else STATUS_ATTACHED


@dataclass
class VmDomain:
    name: str
    live: bool = False
    devices: dict[str, GuestDevice] = field(default_factory=dict)


@dataclass(frozen=True)
class GuestDeviceView:
    """One row of the guest-visible device list."""

    guest_id: str
    status: str
    vendor_id: int
    device_id: int


class Vmm:
    """All VM state plus the host-side mapping table and IOMMU groups.

    Mutation is serialized through one owner (the control server holds a
    global lock); the object itself is single-threaded.
    """

    def __init__(self, bus: Bus):
        self.bus = bus
        self.vms: dict[str, VmDomain] = {}
        # host_addr -> active guest mappings; paused devices have no entry
        self.host_mappings: dict[PciAddress, tuple[RegionMapping, ...]] = {}

    # -- lookup helpers --

    def vm(self, name: str) -> VmDomain:
        vm = self.vms.get(name)
        if vm is None:
            raise UnknownVm(f"no VM named {name!r}")
        return vm

    def device(self, vm_name: str, guest_id: str) -> GuestDevice:
        vm = self.vm(vm_name)
        dev = vm.devices.get(guest_id)
        if dev is None:
            raise UnknownDevice(f"VM {vm_name!r} has no device {guest_id!r}")
        return dev

    def attachment_of(self, address: PciAddress) -> tuple[str, GuestDevice] | None:
        """(vm name, device) currently holding the host address, if any."""
        for vm in self.vms.values():
            for dev in vm.devices.values():
                if dev.host_addr == address:
                    return vm.name, dev
        return None

    def is_attached(self, address: PciAddress) -> bool:
        return self.attachment_of(address) is not None

    def find_guest_id(self, guest_id: str) -> list[str]:
        """Names of VMs holding a device with this id."""
        return sorted(name for name, vm in self.vms.items() if guest_id in vm.devices)

    # -- VM lifecycle --

    def define_vm(self, name: str) -> VmDomain:
        if name in self.vms:
            raise DuplicateName(f"VM {name!r} already defined")
        vm = VmDomain(name=name)
        self.vms[name] = vm
        return vm

    def start_vm(self, name: str) -> None:
        self.vm(name).live = True

    def stop_vm(self, name: str) -> None:
        """Shut the VM down; guest state (including pause snapshots) is gone."""
        vm = self.vm(name)
        for dev in list(vm.devices.values()):
            self._teardown_host_side(dev)
        vm.devices.clear()
        vm.live = False

    # -- device lifecycle --

    def realize(self, vm_name: str, dev: PciAddress, guest_id: str) -> GuestDevice:
        vm = self.vm(vm_name)
        if not vm.live:
            raise VmNotLive(f"VM {vm_name!r} is not running")
        if guest_id in vm.devices:
            raise DuplicateId(f"VM {vm_name!r} already has a device {guest_id!r}")
        node = self.bus.get_present(dev)
        if node.bound_driver != DRIVER_VFIO:
            raise NotBoundToVfio(f"{dev} is bound to {node.bound_driver}, need vfio")
        holder = self.attachment_of(dev)
        if holder is not None:
            raise AlreadyAttached(f"{dev} is already attached to VM {holder[0]!r}")

        overlay = node.config.read(0, self.bus.profile.emulated_header_len)
        region_map = tuple(
            RegionMapping(r.name, GUEST_REGION_BASE + i * GUEST_REGION_STRIDE, r.size)
            for i, r in enumerate(self.bus.profile.memory_regions)
        )
        device = GuestDevice(
            guest_id=guest_id,
            host_addr=dev,
            state=REALIZED,
            emulated_config=overlay,
            iommu_member=True,
            region_map=region_map,
            request_notifier=True,
            error_notifier=True,
        )
        node.iommu_group = node.address.linear
        self.host_mappings[dev] = region_map
        vm.devices[guest_id] = device
        return device

    def exit_device(self, vm_name: str, guest_id: str) -> None:
        """Destroy the guest device entirely; the host keeps its vfio binding."""
        dev = self.device(vm_name, guest_id)
        if dev.state == PAUSED:
            raise PausedDevice(f"{guest_id!r} is paused; unpause it before exit")
        self._teardown_host_side(dev)
        del self.vm(vm_name).devices[guest_id]

    def _teardown_host_side(self, dev: GuestDevice) -> None:
        self.host_mappings.pop(dev.host_addr, None)
        node = self.bus.node(dev.host_addr)
        if node is not None:
            node.iommu_group = None
        dev.iommu_member = False
        dev.region_map = ()
        dev.request_notifier = False
        dev.error_notifier = False

    def pause(self, vm_name: str, guest_id: str) -> None:
        vm = self.vm(vm_name)
        dev = self.device(vm_name, guest_id)
        if dev.state == PAUSED:
            raise AlreadyPaused(f"{guest_id!r} is already paused")
        if not vm.live:
            raise VmNotLive(f"VM {vm_name!r} is not running")
        node = self.bus.get_present(dev.host_addr)

        # phase 1: capture config, emulated overlay, and MSI state
        dev.snapshot = PauseSnapshot(
            config_copy=node.config.snapshot(),
            emulated_copy=bytes(dev.emulated_config),
            msi=dev.msi,
            region_map=dev.region_map,
        )

        # phase 2: PCI-level unregistration
        self.host_mappings.pop(dev.host_addr, None)
        dev.region_map = ()
        node.config.set_msi_enabled(False)
        dev.msi = replace(dev.msi, enabled=False)

        # phase 3: host-framework unregistration
        dev.request_notifier = False
        dev.error_notifier = False
        dev.iommu_member = False
        node.iommu_group = None

        dev.state = PAUSED

    def unpause(self, vm_name: str, guest_id: str) -> None:
        dev = self.device(vm_name, guest_id)
        if dev.state != PAUSED:
            raise NotPaused(f"{guest_id!r} is not paused")
        node = self.bus.node(dev.host_addr)
        if node is None or not node.present_on_bus:
            raise HostDeviceGone(f"{dev.host_addr} is no longer on the bus")
        if node.bound_driver != DRIVER_VFIO:
            raise NotBoundToVfio(
                f"{dev.host_addr} is bound to {node.bound_driver}, need vfio")
        snapshot = dev.snapshot
        assert snapshot is not None

        # phase 1: reconnect I/O without touching the emulated registers
        dev.region_map = snapshot.region_map
        self.host_mappings[dev.host_addr] = snapshot.region_map
        dev.iommu_member = True
        node.iommu_group = node.address.linear
        dev.request_notifier = True
        dev.error_notifier = True

        # phase 2: restore the saved config registers verbatim
        node.config.restore(snapshot.config_copy)
        dev.msi = snapshot.msi

        dev.state = REALIZED
        dev.snapshot = None

    # -- guest-facing views and I/O --

    def guest_view(self, vm_name: str) -> list[GuestDeviceView]:
        vm = self.vm(vm_name)
        views = []
        for dev in vm.devices.values():
            vendor = int.from_bytes(dev.emulated_config[0:2], "little")
            device = int.from_bytes(dev.emulated_config[2:4], "little")
            views.append(GuestDeviceView(dev.guest_id, dev.status, vendor, device))
        return views

    def guest_io(self, vm_name: str, guest_id: str, region: str, op: str,
                 offset: int, data: bytes | None = None,
                 length: int | None = None) -> bytes | None | IoIgnored:
        """Forward guest I/O; while paused, drop it (emulated config reads
        are served from the overlay and still succeed)."""
        dev = self.device(vm_name, guest_id)
        if region == "config" and op == "read" and length is not None \
                and 0 <= offset and offset + length <= len(dev.emulated_config):
            return bytes(dev.emulated_config[offset:offset + length])
        if dev.state == PAUSED:
            dev.ignored_io_count += 1
            return IO_IGNORED
        if region == "config":
            if op == "read":
                return self.bus.read_config(dev.host_addr, offset, length or 0)
            self.bus.write_config(dev.host_addr, offset, data or b"")
            return None
        return self.bus.device_io(dev.host_addr, region, op, offset,
                                  data=data, length=length)

    def program_msi(self, vm_name: str, guest_id: str,
                    msi: MsiState) -> None | IoIgnored:
        """Guest-driver MSI programming, mirrored into the config cap block."""
        dev = self.device(vm_name, guest_id)
        if dev.state == PAUSED:
            dev.ignored_io_count += 1
            return IO_IGNORED
        node = self.bus.get_present(dev.host_addr)
        dev.msi = msi
        mask_bits = 0
        for i, vec in enumerate(msi.vectors):
            if vec.masked:
                mask_bits |= 1 << i
        first = msi.vectors[0] if msi.vectors else MsiVector(0, 0)
        mme = max(msi.vector_count - 1, 0).bit_length()
        node.config.program_msi_vector0(first.address, first.data, mask_bits, mme)
        node.config.set_msi_enabled(msi.enabled)
        return None
