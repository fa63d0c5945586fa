import pytest

from svff.orchestrator import Orchestrator
from svff.world import FixedClock, World


def build_attached_world(n_vfs: int, live: bool = True) -> tuple[World, Orchestrator]:
    """Default-profile world with n VFs attached one-per-VM (vm1..vmN)."""
    world = World(clock=FixedClock())
    orch = Orchestrator(world)
    pf = world.bus.pf_address(0)
    for i in range(n_vfs):
        world.vmm.define_vm(f"vm{i + 1}")
        if live:
            world.vmm.start_vm(f"vm{i + 1}")
    world.drivers.register_vfio_id(world.bus.profile.vendor_id,
                                   world.bus.profile.device_id)
    world.bus.set_num_vfs(pf, n_vfs)
    for i, node in enumerate(world.bus.vf_children(pf)):
        world.drivers.bind_vfio(node.address)
        orch.attach_vf(node.address, f"vm{i + 1}")
    return world, orch


@pytest.fixture
def world() -> World:
    return World(clock=FixedClock())


@pytest.fixture
def attached_world():
    return build_attached_world(1)


@pytest.fixture
def four_vm_world():
    return build_attached_world(4)
