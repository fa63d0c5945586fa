"""PCI addressing and config-space model.

Addresses use the canonical ``DDDD:BB:SS.F`` text form. Config spaces are
flat 4 KiB byte arrays (PCIe extended size) with a small typed overlay for
the header fields the rest of the stack needs: ids, command/status, BARs
and an MSI capability block with per-vector masking.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

CONFIG_SPACE_SIZE = 4096

# header offsets (type 0)
VENDOR_ID_OFFSET = 0x00
DEVICE_ID_OFFSET = 0x02
COMMAND_OFFSET = 0x04
STATUS_OFFSET = 0x06
CLASS_CODE_OFFSET = 0x09        # prog-if, subclass, base class
HEADER_TYPE_OFFSET = 0x0E
BAR0_OFFSET = 0x10
BAR_COUNT = 6
CAP_POINTER_OFFSET = 0x34

# MSI capability (64-bit addressing + per-vector masking, 24 bytes)
MSI_CAP_OFFSET = 0x40
MSI_CTRL_OFFSET = MSI_CAP_OFFSET + 0x02
MSI_ADDR_LO_OFFSET = MSI_CAP_OFFSET + 0x04
MSI_ADDR_HI_OFFSET = MSI_CAP_OFFSET + 0x08
MSI_DATA_OFFSET = MSI_CAP_OFFSET + 0x0C
MSI_MASK_OFFSET = MSI_CAP_OFFSET + 0x10
MSI_CTRL_ENABLE = 0x0001
# static capability bits: 32 vectors capable, 64-bit, per-vector masking
MSI_CTRL_STATIC = (0b101 << 1) | (1 << 7) | (1 << 8)

# simulator-specific: one byte marking virtual functions
VF_FLAG_OFFSET = 0x58

CLASS_MEMORY_CONTROLLER = 0x05

_ADDR_RE = re.compile(r"^([0-9a-fA-F]{4}):([0-9a-fA-F]{2}):([0-9a-fA-F]{2})\.([0-9a-fA-F])$")


@dataclass(frozen=True, order=True)
class PciAddress:
    """A domain:bus:device.function endpoint identity."""

    domain: int
    bus: int
    device: int
    function: int

    def __post_init__(self) -> None:
        if not (0 <= self.domain <= 0xFFFF):
            raise ValueError(f"domain out of range: {self.domain}")
        if not (0 <= self.bus <= 0xFF):
            raise ValueError(f"bus out of range: {self.bus}")
        if not (0 <= self.device <= 31):
            raise ValueError(f"device out of range: {self.device}")
        if not (0 <= self.function <= 7):
            raise ValueError(f"function out of range: {self.function}")

    @classmethod
    def parse(cls, text: str) -> "PciAddress":
        m = _ADDR_RE.match(text.strip())
        if m is None:
            raise ValueError(f"not a PCI address: {text!r}")
        return cls(
            domain=int(m.group(1), 16),
            bus=int(m.group(2), 16),
            device=int(m.group(3), 16),
            function=int(m.group(4), 16),
        )

    @classmethod
    def from_linear(cls, index: int, domain: int = 0) -> "PciAddress":
        """Address at a linear function index (8 functions per device slot)."""
        return cls(domain, index // 256, (index % 256) // 8, index % 8)

    @property
    def linear(self) -> int:
        return self.bus * 256 + self.device * 8 + self.function

    def __str__(self) -> str:
        return f"{self.domain:04x}:{self.bus:02x}:{self.device:02x}.{self.function:x}"


def _round_up_pow2(n: int) -> int:
    p = 16  # minimum BAR granularity
    while p < n:
        p <<= 1
    return p


def encode_bar(size: int) -> int:
    """Size-probe encoding of a memory BAR for a region of `size` bytes."""
    if size <= 0:
        return 0
    return ~(_round_up_pow2(size) - 1) & 0xFFFFFFF0


def decode_bar(value: int) -> int | None:
    """Region size encoded in a BAR value, or None for an unused BAR."""
    if value == 0:
        return None
    return (~(value & 0xFFFFFFF0) + 1) & 0xFFFFFFFF


class ConfigSpace:
    """Flat 4 KiB config space with read-only id words.

    Reads and writes are byte oriented and bounds checked; the vendor and
    device id words can only be set through the raw interface used when a
    device is materialized or its saved state is restored.
    """

    READ_ONLY_END = 0x04  # vendor id + device id

    def __init__(self, data: bytes | None = None):
        if data is None:
            self._data = bytearray(CONFIG_SPACE_SIZE)
        else:
            if len(data) != CONFIG_SPACE_SIZE:
                raise ValueError(f"config space must be {CONFIG_SPACE_SIZE} bytes")
            self._data = bytearray(data)

    # -- raw byte access --

    def read(self, offset: int, length: int) -> bytes:
        self._check_range(offset, length)
        return bytes(self._data[offset:offset + length])

    def write(self, offset: int, data: bytes) -> None:
        """Guest/host visible write; rejects the immutable id words."""
        from .errors import ReadOnlyField

        self._check_range(offset, len(data))
        if offset < self.READ_ONLY_END and len(data) > 0:
            raise ReadOnlyField(
                f"offsets 0x00-0x03 are read-only (write at 0x{offset:02x})")
        self._data[offset:offset + len(data)] = data

    def write_raw(self, offset: int, data: bytes) -> None:
        """Unchecked store used to materialize or restore device state."""
        self._check_range(offset, len(data))
        self._data[offset:offset + len(data)] = data

    def snapshot(self) -> bytes:
        return bytes(self._data)

    def restore(self, data: bytes) -> None:
        if len(data) != CONFIG_SPACE_SIZE:
            raise ValueError("snapshot length mismatch")
        self._data[:] = data

    def _check_range(self, offset: int, length: int) -> None:
        from .errors import OutOfRange

        if length < 0 or offset < 0 or offset + length > CONFIG_SPACE_SIZE:
            raise OutOfRange(
                f"config access [{offset}, {offset}+{length}) outside 4096-byte space")

    # -- typed header overlay --

    def _u16(self, offset: int) -> int:
        return int.from_bytes(self._data[offset:offset + 2], "little")

    def _put_u16(self, offset: int, value: int) -> None:
        self._data[offset:offset + 2] = (value & 0xFFFF).to_bytes(2, "little")

    def _u32(self, offset: int) -> int:
        return int.from_bytes(self._data[offset:offset + 4], "little")

    def _put_u32(self, offset: int, value: int) -> None:
        self._data[offset:offset + 4] = (value & 0xFFFFFFFF).to_bytes(4, "little")

    @property
    def vendor_id(self) -> int:
        return self._u16(VENDOR_ID_OFFSET)

    @property
    def device_id(self) -> int:
        return self._u16(DEVICE_ID_OFFSET)

    @property
    def command(self) -> int:
        return self._u16(COMMAND_OFFSET)

    @property
    def status(self) -> int:
        return self._u16(STATUS_OFFSET)

    @property
    def base_class(self) -> int:
        return self._data[CLASS_CODE_OFFSET + 2]

    def bar(self, index: int) -> int:
        if not (0 <= index < BAR_COUNT):
            raise ValueError(f"BAR index out of range: {index}")
        return self._u32(BAR0_OFFSET + 4 * index)

    def bar_size(self, index: int) -> int | None:
        return decode_bar(self.bar(index))

    @property
    def is_vf(self) -> bool:
        return bool(self._data[VF_FLAG_OFFSET] & 0x01)

    @property
    def msi_enabled(self) -> bool:
        return bool(self._u16(MSI_CTRL_OFFSET) & MSI_CTRL_ENABLE)

    def set_msi_enabled(self, enabled: bool) -> None:
        ctrl = self._u16(MSI_CTRL_OFFSET)
        ctrl = (ctrl | MSI_CTRL_ENABLE) if enabled else (ctrl & ~MSI_CTRL_ENABLE)
        self._put_u16(MSI_CTRL_OFFSET, ctrl)

    def program_msi_vector0(self, address: int, data: int, mask_bits: int,
                            multiple_message: int) -> None:
        """Mirror the driver-visible MSI programming into the cap block."""
        ctrl = self._u16(MSI_CTRL_OFFSET)
        ctrl = (ctrl & ~(0b111 << 4)) | ((multiple_message & 0b111) << 4)
        self._put_u16(MSI_CTRL_OFFSET, ctrl)
        self._put_u32(MSI_ADDR_LO_OFFSET, address & 0xFFFFFFFF)
        self._put_u32(MSI_ADDR_HI_OFFSET, address >> 32)
        self._put_u16(MSI_DATA_OFFSET, data & 0xFFFF)
        self._put_u32(MSI_MASK_OFFSET, mask_bits)


def build_config_space(vendor_id: int, device_id: int, region_sizes: list[int],
                       is_vf: bool) -> ConfigSpace:
    """Fresh power-on config space for a simulated PF or VF."""
    cs = ConfigSpace()
    cs.write_raw(VENDOR_ID_OFFSET, vendor_id.to_bytes(2, "little"))
    cs.write_raw(DEVICE_ID_OFFSET, device_id.to_bytes(2, "little"))
    cs.write_raw(COMMAND_OFFSET, (0x0006).to_bytes(2, "little"))  # memory + master
    cs.write_raw(STATUS_OFFSET, (0x0010).to_bytes(2, "little"))   # capability list
    # memory controller, "other" subclass
    cs.write_raw(CLASS_CODE_OFFSET, bytes([0x00, 0x80, CLASS_MEMORY_CONTROLLER]))
    cs.write_raw(CAP_POINTER_OFFSET, bytes([MSI_CAP_OFFSET]))
    cs.write_raw(MSI_CAP_OFFSET, bytes([0x05, 0x00]))
    cs.write_raw(MSI_CTRL_OFFSET, MSI_CTRL_STATIC.to_bytes(2, "little"))
    for i, size in enumerate(region_sizes[:BAR_COUNT]):
        cs.write_raw(BAR0_OFFSET + 4 * i, encode_bar(size).to_bytes(4, "little"))
    if is_vf:
        cs.write_raw(VF_FLAG_OFFSET, b"\x01")
    return cs
