"""Cross-module state invariants.

Used after every timed benchmark cycle and by the exhaustive exploration
suite, so a timing run is always also a correctness run.
"""

from __future__ import annotations

from .vmm import PAUSED, REALIZED
from .world import World


class InvariantViolation(AssertionError):
    pass


def check_invariants(world: World) -> None:
    _check_bus(world)
    _check_attachments(world)
    _check_records(world)


def _fail(message: str) -> None:
    raise InvariantViolation(message)


def _check_bus(world: World) -> None:
    for node in world.bus.nodes.values():
        if node.is_pf:
            children = world.bus.vf_children(node.address)
            if node.present_on_bus:
                if len(children) != node.num_vfs:
                    _fail(f"{node.address}: num_vfs={node.num_vfs} but "
                          f"{len(children)} VF children present")
            elif children:
                _fail(f"absent PF {node.address} still has VF children")
        else:
            if not node.present_on_bus:
                _fail(f"VF {node.address} kept as a non-present node")
            parent = world.bus.nodes.get(node.parent)
            if parent is None or not parent.present_on_bus:
                _fail(f"dangling VF {node.address}: parent {node.parent} absent")


def _check_attachments(world: World) -> None:
    holders: dict = {}
    for vm in world.vmm.vms.values():
        for dev in vm.devices.values():
            previous = holders.get(dev.host_addr)
            if previous is not None:
                _fail(f"{dev.host_addr} attached to both {previous} and {vm.name}")
            holders[dev.host_addr] = vm.name

            if dev.state == PAUSED:
                if dev.snapshot is None:
                    _fail(f"{vm.name}/{dev.guest_id}: paused without snapshot")
                if dev.iommu_member:
                    _fail(f"{vm.name}/{dev.guest_id}: paused but in IOMMU group")
                if dev.host_addr in world.vmm.host_mappings:
                    _fail(f"{vm.name}/{dev.guest_id}: paused but still mapped")
                if dev.region_map:
                    _fail(f"{vm.name}/{dev.guest_id}: paused with live region map")
                node = world.bus.node(dev.host_addr)
                if node is not None and node.iommu_group is not None:
                    _fail(f"{vm.name}/{dev.guest_id}: paused but node has a group")
            elif dev.state == REALIZED:
                if dev.snapshot is not None:
                    _fail(f"{vm.name}/{dev.guest_id}: realized with stale snapshot")
                if not dev.iommu_member:
                    _fail(f"{vm.name}/{dev.guest_id}: realized outside IOMMU group")
            else:
                _fail(f"{vm.name}/{dev.guest_id}: unknown state {dev.state!r}")

            if not vm.live:
                _fail(f"{vm.name} is not live but holds {dev.guest_id}")


def _check_records(world: World) -> None:
    for vm in world.vmm.vms.values():
        for dev in vm.devices.values():
            record = world.records.get(dev.host_addr)
            if record is None:
                continue  # raw realize without a record is allowed
            if record.vm != vm.name or record.guest_id != dev.guest_id:
                _fail(f"record for {dev.host_addr} says {record.vm}/{record.guest_id}"
                      f" but device is {vm.name}/{dev.guest_id}")


def check_records_match_attachments(world: World) -> None:
    """Strict form: record set equals attachment set (all VMs live)."""
    attachments = set()
    for vm in world.vmm.vms.values():
        for dev in vm.devices.values():
            attachments.add((dev.host_addr, vm.name, dev.guest_id))
            record = world.records.get(dev.host_addr)
            if record is None:
                _fail(f"attachment {dev.host_addr} -> {vm.name} has no record")
    recorded = {(r.vf, r.vm, r.guest_id) for r in world.records.all()}
    if recorded != attachments:
        _fail(f"records {recorded} != attachments {attachments}")
