"""Error taxonomy shared by every layer.

Each exception class doubles as a wire-protocol error class: the control
server reports ``type(exc).__name__`` verbatim, so the mapping between
internal failures and protocol error classes is one-to-one and closed.
"""


class SvffError(Exception):
    """Base class for all framework errors."""

    @property
    def error_class(self) -> str:
        return type(self).__name__


# --- device plane ---

class InvalidProfile(SvffError):
    """Device profile violates a capability limit or is malformed."""


class NotPresent(SvffError):
    """No such device on the bus."""


class Detached(SvffError):
    """Device was removed from the bus after being discovered."""


class OutOfRange(SvffError):
    """Access beyond the config space or a memory region."""


class ReadOnlyField(SvffError):
    """Write touches an immutable config field (vendor/device id)."""


class NotAPf(SvffError):
    """Operation requires a physical function."""


class NotBound(SvffError):
    """Device has no driver bound (or not the required one)."""


class NonZeroTransition(SvffError):
    """VF count must pass through zero before taking a new nonzero value."""


class ExceedsCapability(SvffError):
    """Requested VF count exceeds the profile limit."""


class BusNotEmpty(SvffError):
    """Profile swap (flash) attempted while devices are still on the bus."""


# --- driver manager ---

class IdNotRegistered(SvffError):
    """Device id pair was never registered with the vfio driver."""


class AlreadyBound(SvffError):
    """Device already has a driver."""


class InUse(SvffError):
    """Device (or a related VF) is attached or paused in a VM."""


class IdMismatch(SvffError):
    """Config-space id pair does not match the bus profile."""


class DriverMismatch(SvffError):
    """Bound driver differs from the expected one."""


# --- vmm core ---

class DuplicateName(SvffError):
    """VM name already defined."""


class UnknownVm(SvffError):
    """No VM with that name."""


class VmNotLive(SvffError):
    """Operation requires a running VM."""


class UnknownDevice(SvffError):
    """No guest device with that id."""


class DuplicateId(SvffError):
    """Guest device id already in use."""


class NotBoundToVfio(SvffError):
    """Passthrough requires the host device bound to vfio."""


class AlreadyAttached(SvffError):
    """Host device is already attached to a VM."""


class AlreadyPaused(SvffError):
    """Device is already in the paused state."""


class NotPaused(SvffError):
    """Device is not paused."""


class PausedDevice(SvffError):
    """Operation not allowed while the device is paused."""


class HostDeviceGone(SvffError):
    """Backing host device no longer exists on the bus."""


# --- control protocol ---

class DeviceNotFound(SvffError):
    """No attached device matches the given id."""


class NotPausable(SvffError):
    """Device class does not implement pause."""


class CommandNotFound(SvffError):
    """Unknown protocol command."""


class BindFailure(SvffError):
    """Control server endpoint could not be bound."""


class InvalidArguments(SvffError):
    """Command arguments missing or of the wrong type."""


# --- orchestrator ---

class PlanInvalid(SvffError):
    """Plan violates its own invariants (counts, duplicate VMs, limits)."""


class RecordExists(SvffError):
    """An attachment record already exists for the VF."""


class RecordMissing(SvffError):
    """No attachment record for the VF."""


# --- bench ---

class UnknownFormat(SvffError):
    """Unsupported report rendering format."""


class DegenerateFit(SvffError):
    """Calibration points do not span at least two distinct VF counts."""
