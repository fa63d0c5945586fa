"""Simulated PCIe bus with SR-IOV capable PF/VF device nodes.

The bus owns every device node, enforces the sriov_numvfs zero-transition
rule, and provides config-space and region I/O. Address assignment is a
pure function of the profile, so the same profile and op sequence always
produce the same layout:

  linear slot L = pf index                         (physical functions)
  linear slot L = num_pfs + pf*max_vfs + vf index  (virtual functions)

counted from ``0000:03:00.0``, eight functions per device slot, spilling
to the next bus number every 256 functions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from . import pci
from .errors import (
    BusNotEmpty,
    Detached,
    ExceedsCapability,
    InvalidProfile,
    NonZeroTransition,
    NotAPf,
    NotBound,
    NotPresent,
    OutOfRange,
)
from .pci import ConfigSpace, PciAddress, build_config_space

PF = "pf"
VF = "vf"

DRIVER_QDMA_PF = "qdma-pf"
DRIVER_QDMA_VF = "qdma-vf"  # guest-side only
DRIVER_VFIO = "vfio"

MAX_PFS = 4
MAX_VFS_PER_PF = 252
MAX_QUEUES = 2048

BASE_ADDRESS = PciAddress(0, 3, 0, 0)

LATENCY_FAST = "fast"
LATENCY_SLOW = "slow"


@dataclass(frozen=True)
class MemoryRegion:
    name: str
    size: int
    latency_class: str


@dataclass(frozen=True)
class DeviceProfile:
    """Capabilities of the simulated SR-IOV endpoint.

    The latency class on regions is profile metadata only; region I/O has
    no timing behavior (the benchmark owns all timing).
    """

    num_pfs: int = 1
    max_vfs_per_pf: int = 32
    queue_count: int = 512
    memory_regions: tuple[MemoryRegion, ...] = (
        MemoryRegion("bram-fast", 524288, LATENCY_FAST),
        MemoryRegion("bram-slow", 32768, LATENCY_SLOW),
    )
    vendor_id: int = 0x10EE
    device_id: int = 0x903F
    emulated_header_len: int = 64
    pause_supported: bool = True

    def validate(self) -> None:
        if not (1 <= self.num_pfs <= MAX_PFS):
            raise InvalidProfile(f"num_pfs must be 1-{MAX_PFS}, got {self.num_pfs}")
        if not (0 <= self.max_vfs_per_pf <= MAX_VFS_PER_PF):
            raise InvalidProfile(
                f"max_vfs_per_pf must be 0-{MAX_VFS_PER_PF}, got {self.max_vfs_per_pf}")
        if not (1 <= self.queue_count <= MAX_QUEUES):
            raise InvalidProfile(
                f"queue_count must be 1-{MAX_QUEUES}, got {self.queue_count}")
        if len(self.memory_regions) > pci.BAR_COUNT:
            raise InvalidProfile("at most 6 memory regions (one per BAR)")
        names = [r.name for r in self.memory_regions]
        if len(set(names)) != len(names):
            raise InvalidProfile("duplicate memory region names")
        for r in self.memory_regions:
            if r.size <= 0:
                raise InvalidProfile(f"region {r.name} has non-positive size")
            if r.latency_class not in (LATENCY_FAST, LATENCY_SLOW):
                raise InvalidProfile(f"region {r.name}: unknown latency class "
                                     f"{r.latency_class!r}")
        for label, value in (("vendor_id", self.vendor_id), ("device_id", self.device_id)):
            if not (0 <= value <= 0xFFFF):
                raise InvalidProfile(f"{label} out of range: {value}")
        if not (4 <= self.emulated_header_len <= pci.CONFIG_SPACE_SIZE):
            raise InvalidProfile("emulated_header_len must be in [4, 4096]")

    def region(self, name: str) -> MemoryRegion | None:
        for r in self.memory_regions:
            if r.name == name:
                return r
        return None

    def to_dict(self) -> dict:
        return {
            "num_pfs": self.num_pfs,
            "max_vfs_per_pf": self.max_vfs_per_pf,
            "queue_count": self.queue_count,
            "memory_regions": [
                {"name": r.name, "size_bytes": r.size, "latency_class": r.latency_class}
                for r in self.memory_regions
            ],
            "vendor_id": self.vendor_id,
            "device_id": self.device_id,
            "emulated_header_len": self.emulated_header_len,
            "pause_supported": self.pause_supported,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DeviceProfile":
        try:
            regions = tuple(
                MemoryRegion(r["name"], int(r["size_bytes"]), r["latency_class"])
                for r in data.get("memory_regions", [])
            ) or cls.memory_regions
            profile = cls(
                num_pfs=int(data.get("num_pfs", 1)),
                max_vfs_per_pf=int(data.get("max_vfs_per_pf", 32)),
                queue_count=int(data.get("queue_count", 512)),
                memory_regions=regions,
                vendor_id=int(data.get("vendor_id", 0x10EE)),
                device_id=int(data.get("device_id", 0x903F)),
                emulated_header_len=int(data.get("emulated_header_len", 64)),
                pause_supported=bool(data.get("pause_supported", True)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidProfile(f"malformed profile document: {exc}") from exc
        profile.validate()
        return profile

    @classmethod
    def from_json(cls, path: str | Path) -> "DeviceProfile":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


DEFAULT_PROFILE = DeviceProfile()


@dataclass
class DeviceNode:
    """One PF or VF endpoint with its config space and driver binding."""

    address: PciAddress
    kind: str
    config: ConfigSpace
    parent: PciAddress | None = None
    bound_driver: str | None = None
    num_vfs: int = 0
    present_on_bus: bool = True
    iommu_group: int | None = None
    queue_count: int | None = None
    io_count: int = 0
    region_data: dict[str, bytearray] = field(default_factory=dict)

    @property
    def is_pf(self) -> bool:
        return self.kind == PF


@dataclass(frozen=True)
class FlrAck:
    """Immediate acknowledgment of a function-level reset request."""

    address: PciAddress
    acknowledged: bool = True


class Bus:
    """Single-owner mutable bus state.

    All mutation goes through one owner; the object may be handed between
    threads but concurrent mutation is not supported.
    """

    def __init__(self, profile: DeviceProfile):
        profile.validate()
        self.profile = profile
        self.nodes: dict[PciAddress, DeviceNode] = {}
        self.removed: set[PciAddress] = set()
        for p in range(profile.num_pfs):
            node = self._make_node(self.pf_address(p), PF, parent=None)
            node.bound_driver = DRIVER_QDMA_PF
            self.nodes[node.address] = node

    # -- address derivation --

    def pf_address(self, pf_index: int) -> PciAddress:
        return PciAddress.from_linear(BASE_ADDRESS.linear + pf_index)

    def vf_address(self, pf_index: int, vf_index: int) -> PciAddress:
        offset = self.profile.num_pfs + pf_index * self.profile.max_vfs_per_pf + vf_index
        return PciAddress.from_linear(BASE_ADDRESS.linear + offset)

    def _pf_index(self, address: PciAddress) -> int:
        return address.linear - BASE_ADDRESS.linear

    def _make_node(self, address: PciAddress, kind: str,
                   parent: PciAddress | None) -> DeviceNode:
        config = build_config_space(
            self.profile.vendor_id,
            self.profile.device_id,
            [r.size for r in self.profile.memory_regions],
            is_vf=(kind == VF),
        )
        return DeviceNode(address=address, kind=kind, config=config, parent=parent)

    # -- lookup helpers --

    def node(self, address: PciAddress) -> DeviceNode | None:
        return self.nodes.get(address)

    def get_present(self, address: PciAddress) -> DeviceNode:
        node = self.nodes.get(address)
        if node is None or not node.present_on_bus:
            raise NotPresent(f"no device at {address}")
        return node

    def present_nodes(self) -> list[DeviceNode]:
        return sorted((n for n in self.nodes.values() if n.present_on_bus),
                      key=lambda n: n.address)

    def pf_nodes(self) -> list[DeviceNode]:
        return [n for n in self.present_nodes() if n.is_pf]

    def vf_children(self, pf: PciAddress) -> list[DeviceNode]:
        return sorted((n for n in self.nodes.values()
                       if n.present_on_bus and n.parent == pf),
                      key=lambda n: n.address)

    # -- operations --

    def set_num_vfs(self, pf: PciAddress, n: int) -> None:
        """sriov_numvfs semantics: nonzero counts only reachable from zero."""
        node = self.nodes.get(pf)
        if node is None or not node.present_on_bus:
            raise NotPresent(f"no device at {pf}")
        if not node.is_pf:
            raise NotAPf(f"{pf} is a virtual function")
        if node.bound_driver != DRIVER_QDMA_PF:
            raise NotBound(f"{pf} is not bound to {DRIVER_QDMA_PF}")
        if n < 0:
            raise ExceedsCapability(f"negative VF count: {n}")
        if n > 0 and node.num_vfs > 0:
            raise NonZeroTransition(
                f"{pf} has {node.num_vfs} VFs; the count must be set to 0 first")
        if n > self.profile.max_vfs_per_pf:
            raise ExceedsCapability(
                f"{n} exceeds the profile limit of {self.profile.max_vfs_per_pf} VFs")
        if n == 0:
            for child in self.vf_children(pf):
                del self.nodes[child.address]
                self.removed.add(child.address)
            node.num_vfs = 0
            return
        pf_index = self._pf_index(pf)
        for i in range(n):
            vf = self._make_node(self.vf_address(pf_index, i), VF, parent=pf)
            self.nodes[vf.address] = vf
            self.removed.discard(vf.address)
        node.num_vfs = n

    def read_config(self, dev: PciAddress, offset: int, length: int) -> bytes:
        return self.get_present(dev).config.read(offset, length)

    def write_config(self, dev: PciAddress, offset: int, data: bytes) -> None:
        self.get_present(dev).config.write(offset, data)

    def flr_request(self, dev: PciAddress) -> FlrAck:
        """Acknowledge immediately without resetting anything."""
        self.get_present(dev)
        return FlrAck(dev)

    def device_io(self, dev: PciAddress, region: str, op: str, offset: int,
                  data: bytes | None = None, length: int | None = None) -> bytes | None:
        """Byte-store access to a device memory region."""
        node = self.nodes.get(dev)
        if node is None:
            if dev in self.removed:
                raise Detached(f"{dev} was removed from the bus")
            raise NotPresent(f"no device at {dev}")
        if not node.present_on_bus:
            raise Detached(f"{dev} was removed from the bus")
        if node.bound_driver is None:
            raise NotBound(f"{dev} has no driver bound")
        spec = self.profile.region(region)
        if spec is None:
            raise OutOfRange(f"no region named {region!r}")
        if op == "write":
            if data is None:
                raise ValueError("write requires data")
            end = offset + len(data)
        elif op == "read":
            if length is None:
                raise ValueError("read requires a length")
            end = offset + length
        else:
            raise ValueError(f"op must be read or write, got {op!r}")
        if offset < 0 or offset >= spec.size or end > spec.size:
            raise OutOfRange(
                f"access [{offset}, {end}) outside {region} ({spec.size} bytes)")
        store = node.region_data.get(region)
        if store is None:
            store = node.region_data[region] = bytearray(spec.size)
        node.io_count += 1
        if op == "write":
            store[offset:offset + len(data)] = data
            return None
        return bytes(store[offset:offset + length])

    def flash(self, profile: DeviceProfile) -> None:
        """Atomically swap the device profile; every node must be absent."""
        profile.validate()
        if any(n.present_on_bus for n in self.nodes.values()):
            raise BusNotEmpty("cannot flash while devices are present on the bus")
        for address in self.nodes:
            self.removed.add(address)
        self.profile = profile
        self.nodes = {}
        for p in range(profile.num_pfs):
            address = self.pf_address(p)
            node = self._make_node(address, PF, parent=None)
            node.present_on_bus = False
            node.bound_driver = None
            self.nodes[address] = node


def create_bus(profile: DeviceProfile = DEFAULT_PROFILE) -> Bus:
    """Bring up a bus with the profile's PFs bound to the qdma-pf driver."""
    return Bus(profile)
