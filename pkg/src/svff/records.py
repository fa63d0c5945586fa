"""Persisted VF-to-VM attachment records.

One JSON document per VF describes the association so a later detach can
be driven from the record alone. The store can run purely in memory (the
simulator and tests) or bound to a directory, in which case every change
is written through immediately and the directory is the source of truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import RecordExists, RecordMissing
from .pci import PciAddress


@dataclass(frozen=True)
class AttachmentRecord:
    vf: PciAddress
    vm: str
    guest_id: str
    guest_slot: str
    created_at: str

    def to_dict(self) -> dict:
        return {
            "device_type": "pci",
            "address": str(self.vf),
            "driver": "vfio",
            "vm": self.vm,
            "guest_id": self.guest_id,
            "guest_slot": self.guest_slot,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AttachmentRecord":
        return cls(
            vf=PciAddress.parse(data["address"]),
            vm=data["vm"],
            guest_id=data["guest_id"],
            guest_slot=data["guest_slot"],
            created_at=data["created_at"],
        )

    def identity(self) -> tuple:
        """Equality key ignoring the creation timestamp."""
        return (self.vf, self.vm, self.guest_id, self.guest_slot)


def _record_filename(vf: PciAddress) -> str:
    return str(vf).replace(":", "-") + ".json"


class RecordStore:
    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory is not None else None
        self._records: dict[PciAddress, AttachmentRecord] = {}
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)
            for path in sorted(self.directory.glob("*.json")):
                with open(path, "r", encoding="utf-8") as fh:
                    record = AttachmentRecord.from_dict(json.load(fh))
                self._records[record.vf] = record

    def get(self, vf: PciAddress) -> AttachmentRecord | None:
        return self._records.get(vf)

    def add(self, record: AttachmentRecord) -> None:
        if record.vf in self._records:
            raise RecordExists(f"record for {record.vf} already exists")
        self._records[record.vf] = record
        if self.directory is not None:
            path = self.directory / _record_filename(record.vf)
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(record.to_dict(), fh, indent=2)
                fh.write("\n")

    def remove(self, vf: PciAddress) -> AttachmentRecord:
        record = self._records.pop(vf, None)
        if record is None:
            raise RecordMissing(f"no record for {vf}")
        if self.directory is not None:
            (self.directory / _record_filename(vf)).unlink(missing_ok=True)
        return record

    def all(self) -> list[AttachmentRecord]:
        return sorted(self._records.values(), key=lambda r: r.vf)

    def for_vm(self, vm: str) -> list[AttachmentRecord]:
        return [r for r in self.all() if r.vm == vm]

    def identities(self) -> frozenset:
        return frozenset(r.identity() for r in self._records.values())

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, vf: PciAddress) -> bool:
        return vf in self._records
