"""The untrusted host: original files, application workload, the OS driver.

Nothing here is protected.  The adversary drives the same methods the
user's applications do.  Every method refuses to run while a trusted
session is active, because the late launch suspends the whole host.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

from .errors import CorruptFs, WorldSuspended
from .tpm import HOST_LOCALITY, TpmHandle
from .updater import Layout, POLICY_FILE, UpdatePolicy, genuine_image, parse_version
from .vaultfs import DirEntry, FsImage


@dataclass(frozen=True)
class CommitTrigger:
    at: int
    manual: bool


@dataclass
class Schedule:
    interval: int
    next_fire: int
    manual_trigger_pending: bool = False

    def request(self) -> None:
        self.manual_trigger_pending = True

    def tick(self, now: int) -> CommitTrigger | None:
        if self.manual_trigger_pending:
            self.manual_trigger_pending = False
            return CommitTrigger(now, True)
        if self.interval > 0 and now >= self.next_fire:
            self.next_fire += self.interval
            return CommitTrigger(now, False)
        return None


class _ReadOnlyDevice:
    """Exposes only the read half of a drive."""

    def __init__(self, device):
        self._device = device
        self.sector_size = device.sector_size

    def read_sectors(self, lba, count):
        return self._device.read_sectors(lba, count)


class RecoveryView:
    """Read-only access to a protected partition.  Needs no credential.

    There is deliberately no write method; the underlying device handle
    cannot write either.
    """

    def __init__(self, device, start_lba: int, length: int):
        self._fs = FsImage.mount(_ReadOnlyDevice(device), start_lba, length)

    @classmethod
    def from_drive(cls, sed) -> "RecoveryView":
        """Find the write-protected range in the public range table and mount it."""
        for r in sorted(sed.ranges.values(), key=lambda r: r.range_id):
            if r.write_lock_enabled:
                return cls(sed, r.start_lba, r.length)
        raise CorruptFs("drive has no write-protected range")

    def list(self, show_hidden: bool = True) -> list[DirEntry]:
        return self._fs.list(show_hidden)

    def read(self, name: str) -> bytes:
        return self._fs.read_file(name)

    def snapshot(self) -> dict[str, str]:
        """``{name: sha256 hex}`` for every live and historical entry."""
        return {e.name: hashlib.sha256(self.read(e.name)).hexdigest() for e in self.list(True)}

    def triples(self) -> set[tuple[str, int, str]]:
        """``(base_name, version_timestamp, sha256 hex)`` for every stored version.

        The live entry's version timestamp is its commit time, which is the
        timestamp it is renamed to once superseded.
        """
        out = set()
        for e in self.list(True):
            parsed = parse_version(e.name) if e.hidden else None
            base, ts = (parsed[0], parsed[1]) if parsed else (e.name, e.modified)
            out.add((base, ts, hashlib.sha256(self.read(e.name)).hexdigest()))
        return out

    def export(self, out_dir) -> list[str]:
        os.makedirs(out_dir, exist_ok=True)
        written = []
        for e in self.list(True):
            path = os.path.join(out_dir, e.name)
            with open(path, "wb") as fh:
                fh.write(self.read(e.name))
            written.append(e.name)
        return written


class HostWorld:
    def __init__(self, sed, tpm, clock, tee, events, layout: Layout, *, format_originals=True):
        self.sed = sed
        self.tpm = TpmHandle(tpm, HOST_LOCALITY)
        self.clock = clock
        self.tee = tee
        self.events = events
        self.layout = layout
        self.schedule = Schedule(interval=0, next_fire=0)
        self.driver_alive = True
        self.updater_image = genuine_image()
        # Offset the adversary may apply to the OS clock.
        self.clock_offset = 0
        self.last_token = None
        self.fs: FsImage | None = None
        if format_originals:
            FsImage.format(sed, layout.original_lba, layout.original_sectors)
        self.remount()

    def _guard(self, kind: str, detail: str = "") -> None:
        if self.tee.active is not None:
            raise WorldSuspended(f"host {kind} while session {self.tee.active.session_id} runs")
        self.events.record(self.clock.now, "host", kind, detail)

    def remount(self) -> None:
        try:
            self.fs = FsImage.mount(self.sed, self.layout.original_lba, self.layout.original_sectors)
        except CorruptFs:
            self.fs = None

    def system_time(self) -> int:
        return self.clock.now + self.clock_offset

    # ---------------------------------------------------------------- files

    def app_write(self, name: str, data: bytes, now: int | None = None) -> DirEntry:
        self._guard("write", name)
        ts = self.system_time() if now is None else int(now)
        if self.fs.exists(name):
            gen = self.fs.stat(name).generation + 1
            return self.fs.overwrite(name, data, ts, generation=gen)
        return self.fs.create_write(name, data, ts, generation=1)

    def app_autosave_storm(self, name: str, count: int, now: int | None = None,
                           data: bytes | None = None) -> DirEntry:
        """``count`` rapid saves; only the final content survives."""
        self._guard("storm", f"{name}x{count}")
        base = data if data is not None else self.read_original(name)
        entry = None
        for i in range(count):
            ts = self.system_time() if now is None else int(now)
            payload = base + b"\n#autosave %d\n" % (i + 1) if data is None else base
            if self.fs.exists(name):
                gen = self.fs.stat(name).generation + 1
                entry = self.fs.overwrite(name, payload, ts, generation=gen)
            else:
                entry = self.fs.create_write(name, payload, ts, generation=1)
        return entry

    def app_delete(self, name: str) -> None:
        self._guard("delete", name)
        self.fs.delete(name)

    def read_original(self, name: str) -> bytes:
        self._guard("read", name)
        return self.fs.read_file(name)

    def list_originals(self) -> list[DirEntry]:
        return [] if self.fs is None else self.fs.list()

    def protected_marks(self, selection) -> list[tuple[str, bool]]:
        """The per-file "protected" marker the OS shows next to originals."""
        chosen = set(selection)
        return [(e.name, e.name in chosen) for e in self.list_originals()]

    def plaintext_policy(self) -> UpdatePolicy | None:
        if self.fs is None or not self.fs.exists(POLICY_FILE):
            return None
        try:
            return UpdatePolicy.from_text(self.fs.read_file(POLICY_FILE).decode(),
                                          require_avatar=False)
        except Exception:  # noqa: BLE001 - the copy is untrusted input
            return None

    # ------------------------------------------------------------- schedule

    def request_commit(self) -> None:
        self._guard("trigger")
        self.schedule.request()

    def tick(self, now: int | None = None) -> CommitTrigger | None:
        if self.tee.active is not None or not self.driver_alive:
            return None
        return self.schedule.tick(self.clock.now if now is None else now)

    # ------------------------------------------------------------- recovery

    def recovery_mount(self) -> RecoveryView:
        self._guard("recovery_mount")
        return RecoveryView.from_drive(self.sed)
