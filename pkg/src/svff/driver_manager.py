"""Host driver management: bind/unbind, vfio id registration, removal, rescan.

Mirrors the manager program that fronts the host drivers: devices can be
unbound from their current driver, bound to vfio once their id pair is
registered, removed from the bus together with their VFs, and rediscovered
by a bus rescan. Validation checks identity and binding without side
effects.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .device_plane import DRIVER_QDMA_PF, DRIVER_QDMA_VF, DRIVER_VFIO, Bus
from .errors import (
    AlreadyBound,
    DriverMismatch,
    IdMismatch,
    IdNotRegistered,
    InUse,
    NotAPf,
    NotBound,
    NotPresent,
)
from .pci import PciAddress

HOST_DRIVERS = (DRIVER_QDMA_PF, DRIVER_VFIO)
KNOWN_DRIVERS = (DRIVER_QDMA_PF, DRIVER_QDMA_VF, DRIVER_VFIO)


@dataclass
class DriverRegistry:
    """Id pairs the vfio driver will accept (the new_id mechanism)."""

    vfio_new_ids: set[tuple[int, int]] = field(default_factory=set)

    def register_vfio_id(self, vendor_id: int, device_id: int) -> None:
        self.vfio_new_ids.add((vendor_id, device_id))

    def accepts(self, vendor_id: int, device_id: int) -> bool:
        return (vendor_id, device_id) in self.vfio_new_ids


class DriverManager:
    """Operations over one bus and one registry; attachment checks are
    delegated to a guard callback so this layer stays VM-agnostic."""

    def __init__(self, bus: Bus, registry: DriverRegistry | None = None):
        self.bus = bus
        self.registry = registry if registry is not None else DriverRegistry()
        # returns True if the address is attached or paused in any VM
        self.attachment_guard = None

    def _in_use(self, address: PciAddress) -> bool:
        return self.attachment_guard is not None and self.attachment_guard(address)

    def register_vfio_id(self, vendor_id: int, device_id: int) -> None:
        self.registry.register_vfio_id(vendor_id, device_id)

    def unbind(self, dev: PciAddress) -> None:
        node = self.bus.get_present(dev)
        if node.bound_driver is None:
            raise NotBound(f"{dev} has no driver bound")
        node.bound_driver = None

    def bind_vfio(self, dev: PciAddress) -> None:
        node = self.bus.get_present(dev)
        if node.bound_driver is not None:
            raise AlreadyBound(f"{dev} is bound to {node.bound_driver}")
        pair = (node.config.vendor_id, node.config.device_id)
        if not self.registry.accepts(*pair):
            raise IdNotRegistered(
                f"id {pair[0]:04x}:{pair[1]:04x} not registered with vfio")
        node.bound_driver = DRIVER_VFIO

    def bind_qdma_pf(self, dev: PciAddress) -> None:
        node = self.bus.get_present(dev)
        if not node.is_pf:
            raise NotAPf(f"{dev} is a virtual function")
        if node.bound_driver is not None:
            raise AlreadyBound(f"{dev} is bound to {node.bound_driver}")
        node.bound_driver = DRIVER_QDMA_PF

    def remove_device(self, dev: PciAddress) -> None:
        """Remove a device (and, for a PF, its VFs) from the bus."""
        node = self.bus.get_present(dev)
        affected = [node]
        if node.is_pf:
            affected += self.bus.vf_children(dev)
        for n in affected:
            if self._in_use(n.address):
                raise InUse(f"{n.address} is attached to a VM; detach it first")
        for n in affected:
            if n.is_pf:
                # PF nodes are kept as absent so a rescan can rediscover them
                n.present_on_bus = False
                n.bound_driver = None
                n.num_vfs = 0
                n.queue_count = None
                self.bus.removed.add(n.address)
            else:
                del self.bus.nodes[n.address]
                self.bus.removed.add(n.address)
                parent = self.bus.nodes.get(n.parent)
                if parent is not None:
                    parent.num_vfs = len(self.bus.vf_children(parent.address))

    def rescan_bus(self) -> list[PciAddress]:
        """Rediscover absent PFs with fresh config and default driver.

        VFs exist only through the numvfs control and are never
        resurrected by a rescan.
        """
        discovered: list[PciAddress] = []
        for p in range(self.bus.profile.num_pfs):
            address = self.bus.pf_address(p)
            node = self.bus.nodes.get(address)
            if node is not None and node.present_on_bus:
                continue
            fresh = self.bus._make_node(address, "pf", None)
            fresh.bound_driver = DRIVER_QDMA_PF
            self.bus.nodes[address] = fresh
            self.bus.removed.discard(address)
            discovered.append(address)
        return sorted(discovered)

    def find_related_vfs(self, pf: PciAddress) -> list[PciAddress]:
        node = self.bus.nodes.get(pf)
        if node is None or not node.is_pf:
            raise NotAPf(f"{pf} is not a physical function")
        return [n.address for n in self.bus.vf_children(pf)]

    def validate(self, dev: PciAddress, expected_driver: str) -> None:
        """Check presence, id pair, and driver name; no side effects."""
        node = self.bus.nodes.get(dev)
        if node is None or not node.present_on_bus:
            raise NotPresent(f"no device at {dev}")
        pair = (node.config.vendor_id, node.config.device_id)
        expected_pair = (self.bus.profile.vendor_id, self.bus.profile.device_id)
        if pair != expected_pair:
            raise IdMismatch(
                f"{dev} ids {pair[0]:04x}:{pair[1]:04x} do not match profile "
                f"{expected_pair[0]:04x}:{expected_pair[1]:04x}")
        if node.bound_driver != expected_driver:
            raise DriverMismatch(
                f"{dev} bound to {node.bound_driver}, expected {expected_driver}")
