"""Opal-style self-encrypting drive emulator.

The device is a flat, sparse sector store split into locking ranges.  Each
range carries independent read/write lock flags gated by a 32-byte
credential.  Sectors outside every range form the global range, which is
always readable and writable.

Only the access-control behaviour is modelled; no media encryption happens.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import os
from dataclasses import dataclass, field

from .errors import (
    BadCredential,
    BadPsid,
    NoSuchRange,
    OutOfBounds,
    OverlappingRange,
    ReadLocked,
    WriteLocked,
)

SECTOR_SIZE = 512
CREDENTIAL_SIZE = 32


def _cred_digest(credential: bytes) -> bytes:
    return hashlib.sha256(b"sed-credential\x00" + bytes(credential)).digest()


@dataclass
class LockingRange:
    range_id: int
    start_lba: int
    length: int
    write_lock_enabled: bool
    read_lock_enabled: bool
    write_locked: bool = False
    read_locked: bool = False
    # Only a digest of the credential is retained by the device.
    credential_digest: bytes | None = field(default=None, repr=False)

    @property
    def end_lba(self) -> int:
        return self.start_lba + self.length

    def overlaps(self, lba: int, count: int) -> bool:
        return lba < self.end_lba and self.start_lba < lba + count

    def public_dict(self) -> dict:
        return {
            "range_id": self.range_id,
            "start_lba": self.start_lba,
            "length": self.length,
            "write_lock_enabled": self.write_lock_enabled,
            "read_lock_enabled": self.read_lock_enabled,
            "write_locked": self.write_locked,
            "read_locked": self.read_locked,
        }


@dataclass(frozen=True)
class SedCommand:
    """One entry of the device command log.  Never carries credentials."""

    seq: int
    context: str
    verb: str
    range_id: int | None
    lba: int | None
    count: int | None
    accepted: bool
    error: str | None = None


class SedDevice:
    """In-process self-encrypting drive.

    ``context`` is a free-form label stamped on every logged command; the
    simulation sets it to the active session id or ``"host"``.
    """

    def __init__(self, sector_count: int, *, sector_size: int = SECTOR_SIZE,
                 psid: bytes | None = None, msid: bytes | None = None):
        if sector_count < 1:
            raise ValueError("sector_count must be positive")
        self.sector_count = sector_count
        self.sector_size = sector_size
        self.psid = bytes(psid) if psid is not None else os.urandom(16)
        # MSID is the public factory default admin credential (readable by anyone).
        self.msid = bytes(msid) if msid is not None else b"\x00" * CREDENTIAL_SIZE
        self._zero = bytes(sector_size)
        self._sectors: dict[int, bytes] = {}
        self.ranges: dict[int, LockingRange] = {}
        self._admin_digest = _cred_digest(self.msid)
        self._next_range_id = 1
        self.log: list[SedCommand] = []
        self.context = "host"

    # ------------------------------------------------------------------ log

    def _record(self, verb, range_id=None, lba=None, count=None, error=None):
        entry = SedCommand(len(self.log), self.context, verb, range_id, lba, count,
                           error is None, None if error is None else type(error).__name__)
        self.log.append(entry)
        return entry

    def _fail(self, verb, exc, range_id=None, lba=None, count=None):
        self._record(verb, range_id, lba, count, exc)
        raise exc

    # ------------------------------------------------------------ admin path

    def take_ownership(self, admin_credential: bytes, new_admin_credential: bytes) -> None:
        """Replace the admin credential (initially the public MSID)."""
        if not hmac.compare_digest(_cred_digest(admin_credential), self._admin_digest):
            self._fail("take_ownership", BadCredential("admin credential mismatch"))
        if len(new_admin_credential) != CREDENTIAL_SIZE:
            raise ValueError(f"credentials are {CREDENTIAL_SIZE} bytes")
        self._admin_digest = _cred_digest(new_admin_credential)
        self._record("take_ownership")

    def configure_range(self, admin_credential: bytes, start_lba: int, length: int,
                        write_lock_enabled: bool, read_lock_enabled: bool,
                        credential: bytes) -> int:
        verb = "configure_range"
        if not hmac.compare_digest(_cred_digest(admin_credential), self._admin_digest):
            self._fail(verb, BadCredential("admin credential mismatch"), lba=start_lba, count=length)
        if length < 1 or start_lba < 0 or start_lba + length > self.sector_count:
            self._fail(verb, OutOfBounds(f"range [{start_lba}, {start_lba + length}) outside device"),
                       lba=start_lba, count=length)
        for r in self.ranges.values():
            if r.overlaps(start_lba, length):
                self._fail(verb, OverlappingRange(f"overlaps range {r.range_id}"),
                           lba=start_lba, count=length)
        if len(credential) != CREDENTIAL_SIZE:
            raise ValueError(f"credentials are {CREDENTIAL_SIZE} bytes")
        rid = self._next_range_id
        self._next_range_id += 1
        self.ranges[rid] = LockingRange(
            rid, start_lba, length, bool(write_lock_enabled), bool(read_lock_enabled),
            write_locked=bool(write_lock_enabled), read_locked=bool(read_lock_enabled),
            credential_digest=_cred_digest(credential),
        )
        self._record(verb, rid, start_lba, length)
        return rid

    # ------------------------------------------------------------ lock verbs

    def _auth_range(self, verb, range_id, credential) -> LockingRange:
        rng = self.ranges.get(range_id)
        if rng is None:
            self._fail(verb, NoSuchRange(f"no range {range_id}"), range_id)
        digest = _cred_digest(credential)
        stored = rng.credential_digest if rng.credential_digest is not None else bytes(32)
        # Always run the comparison so timing does not depend on provisioning.
        ok = hmac.compare_digest(digest, stored) and rng.credential_digest is not None
        if not ok:
            self._fail(verb, BadCredential(f"bad credential for range {range_id}"), range_id)
        return rng

    def unlock_write(self, range_id: int, credential: bytes) -> None:
        rng = self._auth_range("unlock_write", range_id, credential)
        rng.write_locked = False
        self._record("unlock_write", range_id)

    def lock_write(self, range_id: int, credential: bytes) -> None:
        rng = self._auth_range("lock_write", range_id, credential)
        rng.write_locked = rng.write_lock_enabled
        self._record("lock_write", range_id)

    def unlock_read(self, range_id: int, credential: bytes) -> None:
        rng = self._auth_range("unlock_read", range_id, credential)
        rng.read_locked = False
        self._record("unlock_read", range_id)

    def lock_read(self, range_id: int, credential: bytes) -> None:
        rng = self._auth_range("lock_read", range_id, credential)
        rng.read_locked = rng.read_lock_enabled
        self._record("lock_read", range_id)

    def relock_all(self) -> None:
        """Re-engage every enabled lock.  Needs no credential."""
        for r in self.ranges.values():
            r.write_locked = r.write_lock_enabled
            r.read_locked = r.read_lock_enabled
        self._record("relock_all")

    def power_cycle(self) -> None:
        for r in self.ranges.values():
            r.write_locked = r.write_lock_enabled
            r.read_locked = r.read_lock_enabled
        self._record("power_cycle")

    def psid_revert(self, psid: bytes) -> None:
        if not hmac.compare_digest(hashlib.sha256(bytes(psid)).digest(),
                                   hashlib.sha256(self.psid).digest()):
            self._fail("psid_revert", BadPsid("PSID mismatch"))
        self._sectors.clear()
        self.ranges.clear()
        self._next_range_id = 1
        self._admin_digest = _cred_digest(self.msid)
        self._record("psid_revert")

    # ------------------------------------------------------------ data path

    def _check_bounds(self, verb, lba, count):
        if lba < 0 or count < 0 or lba + count > self.sector_count:
            self._fail(verb, OutOfBounds(f"[{lba}, {lba + count}) outside 0..{self.sector_count}"),
                       lba=lba, count=count)

    def write_sectors(self, lba: int, data: bytes) -> None:
        """All-or-nothing write; rejected if any touched sector is write-locked."""
        ss = self.sector_size
        if len(data) % ss:
            raise ValueError("data must be a whole number of sectors")
        count = len(data) // ss
        self._check_bounds("write_sectors", lba, count)
        for r in sorted(self.ranges.values(), key=lambda r: r.start_lba):
            if r.write_locked and r.overlaps(lba, count):
                self._fail("write_sectors", WriteLocked(r.range_id), r.range_id, lba, count)
        mv = memoryview(bytes(data))
        sectors, zero = self._sectors, self._zero
        for i in range(count):
            chunk = mv[i * ss:(i + 1) * ss]
            if chunk == zero:
                sectors.pop(lba + i, None)
            else:
                sectors[lba + i] = chunk.tobytes()
        self._record("write_sectors", None, lba, count)

    def read_sectors(self, lba: int, count: int) -> bytes:
        self._check_bounds("read_sectors", lba, count)
        for r in self.ranges.values():
            if r.read_locked and r.overlaps(lba, count):
                self._fail("read_sectors", ReadLocked(r.range_id), r.range_id, lba, count)
        get, zero = self._sectors.get, self._zero
        out = b"".join([get(i, zero) for i in range(lba, lba + count)])
        self._record("read_sectors", None, lba, count)
        return out

    # ------------------------------------------------------------ inspection

    def range_at(self, lba: int) -> LockingRange | None:
        for r in self.ranges.values():
            if r.start_lba <= lba < r.end_lba:
                return r
        return None

    def digest(self, start: int = 0, count: int | None = None) -> str:
        """SHA-256 over the logical contents of ``[start, start+count)``.

        Zero sectors are implicit, so equal contents always give equal digests
        regardless of how they were written.
        """
        if count is None:
            count = self.sector_count - start
        h = hashlib.sha256(b"%d:%d:%d\n" % (self.sector_size, start, count))
        end = start + count
        for idx in sorted(i for i in self._sectors if start <= i < end):
            h.update(idx.to_bytes(8, "big"))
            h.update(self._sectors[idx])
        return h.hexdigest()

    # ------------------------------------------------------------ persistence

    def metadata(self) -> dict:
        """Sidecar document: geometry and range table, no credentials."""
        return {
            "sector_size": self.sector_size,
            "sector_count": self.sector_count,
            "ranges": [r.public_dict() for r in sorted(self.ranges.values(),
                                                       key=lambda r: r.range_id)],
        }

    def export_image(self, image_path, sidecar_path=None) -> None:
        """Write a raw flat image plus a JSON sidecar describing the ranges."""
        image_path = os.fspath(image_path)
        sidecar_path = sidecar_path or image_path + ".json"
        ss = self.sector_size
        with open(image_path, "wb") as fh:
            fh.truncate(self.sector_count * ss)
            for idx in sorted(self._sectors):
                fh.seek(idx * ss)
                fh.write(self._sectors[idx])
        with open(sidecar_path, "w") as fh:
            json.dump(self.metadata(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def import_image(cls, image_path, sidecar_path=None, **kwargs) -> "SedDevice":
        """Load an exported image.  Ranges come back without credentials."""
        import numpy as np

        image_path = os.fspath(image_path)
        sidecar_path = sidecar_path or image_path + ".json"
        with open(sidecar_path) as fh:
            meta = json.load(fh)
        ss = meta["sector_size"]
        dev = cls(meta["sector_count"], sector_size=ss, **kwargs)
        raw = np.fromfile(image_path, dtype=np.uint8)
        if raw.size != dev.sector_count * ss:
            raise ValueError("image size does not match sidecar geometry")
        blocks = raw.reshape(dev.sector_count, ss)
        for idx in np.flatnonzero(blocks.any(axis=1)):
            dev._sectors[int(idx)] = blocks[idx].tobytes()
        for rd in meta["ranges"]:
            dev.ranges[rd["range_id"]] = LockingRange(**rd)
        dev._next_range_id = max(dev.ranges, default=0) + 1
        return dev

    def device_secrets(self) -> dict:
        """Device-internal credential digests, for whole-simulator snapshots."""
        return {
            "admin": self._admin_digest.hex(),
            "psid": self.psid.hex(),
            "msid": self.msid.hex(),
            "next_range_id": self._next_range_id,
            "ranges": {str(rid): r.credential_digest.hex()
                       for rid, r in self.ranges.items() if r.credential_digest},
        }

    def restore_secrets(self, secrets: dict) -> None:
        self._admin_digest = bytes.fromhex(secrets["admin"])
        self.psid = bytes.fromhex(secrets["psid"])
        self.msid = bytes.fromhex(secrets["msid"])
        self._next_range_id = secrets["next_range_id"]
        for rid, digest in secrets["ranges"].items():
            self.ranges[int(rid)].credential_digest = bytes.fromhex(digest)
