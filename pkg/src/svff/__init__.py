"""Simulated SR-IOV virtual-function framework.

A hardware-free device plane (PF/VF nodes with real config spaces), a VMM
model with the host-side pause/unpause protocol, a QMP-style control
server, init/reconf orchestration with persisted attachment records, and
a calibrated benchmark of reconfiguration overhead.
"""

from .device_plane import (
    DEFAULT_PROFILE,
    Bus,
    DeviceNode,
    DeviceProfile,
    FlrAck,
    MemoryRegion,
    create_bus,
)
from .driver_manager import DriverManager, DriverRegistry
from .orchestrator import Orchestrator, PlanConfig, Report, StepResult
from .pci import ConfigSpace, PciAddress
from .records import AttachmentRecord, RecordStore
from .vmm import (
    IO_IGNORED,
    GuestDevice,
    GuestDeviceView,
    IoIgnored,
    MsiState,
    MsiVector,
    PauseSnapshot,
    VmDomain,
    Vmm,
)
from .world import FixedClock, World

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_PROFILE",
    "Bus",
    "DeviceNode",
    "DeviceProfile",
    "FlrAck",
    "MemoryRegion",
    "create_bus",
    "DriverManager",
    "DriverRegistry",
    "Orchestrator",
    "PlanConfig",
    "Report",
    "StepResult",
    "ConfigSpace",
    "PciAddress",
    "AttachmentRecord",
    "RecordStore",
    "IO_IGNORED",
    "GuestDevice",
    "GuestDeviceView",
    "IoIgnored",
    "MsiState",
    "MsiVector",
    "PauseSnapshot",
    "VmDomain",
    "Vmm",
    "FixedClock",
    "World",
    "__version__",
]
