"""A small cluster-chain filesystem that lives on a sector range.

On-media layout, relative to the region start::

    sector 0                superblock
    sectors 1..T            cluster table, little-endian int32 per cluster
    next D sectors          directory, one 512-byte record per slot
    remaining sectors       data area, ``cluster_size`` bytes per cluster

Cluster table encoding: 0 is free, -1 ends a chain, any other value ``v``
links to cluster ``v - 1``.  A zeroed table therefore means "all free".

Two allocators exist.  ``naive`` mimics single-cluster FAT libraries: every
cluster allocation traverses the whole table from entry 0 and takes the
lowest free cluster.  ``cursor`` collects all clusters a request needs in
one pass starting where the previous allocation stopped, wrapping once.
``probe_counter`` accumulates the number of table entries each scan
examined.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from .errors import CorruptFs, Exists, NoSpace, NotFound, TooSmall

FREE = 0
EOC = -1

DEFAULT_CLUSTER_SIZE = 8192
DEFAULT_DIR_SLOTS = 1024
MAX_NAME_BYTES = 255
# Largest single transfer, matching a 48-bit ATA DMA request.
MAX_REQUEST_SECTORS = 65535

_MAGIC = b"VAULTFS1"
_SB = struct.Struct("<8sIIIIIIQ")
_REC = struct.Struct("<BH256sQqqiI")

_F_USED = 0x01
_F_HIDDEN = 0x02
_F_DELETED = 0x04

AllocPolicy = Literal["naive", "cursor"]


@dataclass(frozen=True)
class DirEntry:
    name: str
    size: int
    created: int
    modified: int
    first_cluster: int
    hidden: bool = False
    deleted: bool = False
    generation: int = 0
    slot: int = -1


def _table_sectors(num_clusters: int, sector_size: int) -> int:
    return -(-num_clusters * 4 // sector_size)


def _check_name(name: str) -> bytes:
    raw = name.encode("utf-8")
    if (not raw or len(raw) > MAX_NAME_BYTES
            or any(ch in name for ch in ("/", "\\", "\x00", "\t", "\n", "\r"))):
        raise ValueError(f"invalid file name {name!r}")
    return raw


def _runs(clusters):
    """Group a cluster list into ``(first, length)`` runs of consecutive clusters."""
    runs = []
    for c in clusters:
        if runs and runs[-1][0] + runs[-1][1] == c:
            runs[-1][1] += 1
        else:
            runs.append([c, 1])
    return runs


class FsImage:
    """A mounted filesystem over ``[start_lba, start_lba + length)`` of a device.

    The device needs ``read_sectors``; mutating operations also need
    ``write_sectors``.  Every mutating call ends with :meth:`flush`, so the
    media is consistent between calls.
    """

    def __init__(self, device, start_lba: int, length: int, *, num_clusters: int,
                 cluster_size: int, dir_slots: int):
        self.device = device
        self.start_lba = start_lba
        self.length = length
        self.sector_size = device.sector_size
        if cluster_size % self.sector_size:
            raise ValueError("cluster size must be a multiple of the sector size")
        self.cluster_size = cluster_size
        self.num_clusters = num_clusters
        self.dir_slots = dir_slots
        self.spc = cluster_size // self.sector_size
        self.table_lba = start_lba + 1
        self.dir_lba = self.table_lba + _table_sectors(num_clusters, self.sector_size)
        self.data_lba = self.dir_lba + dir_slots
        self.table = np.zeros(num_clusters, dtype="<i4")
        self.entries: list[DirEntry | None] = [None] * dir_slots
        self._live: dict[str, int] = {}
        self.alloc_cursor = 0
        self.probe_counter = 0
        self.free_clusters = num_clusters
        self.default_policy: AllocPolicy = "cursor"
        self.io_log: list[tuple[str, int, int]] = []
        self._dirty_table: set[int] = set()
        self._dirty_slots: set[int] = set()

    # --------------------------------------------------------------- geometry

    @staticmethod
    def required_sectors(num_clusters: int, cluster_size: int = DEFAULT_CLUSTER_SIZE,
                         dir_slots: int = DEFAULT_DIR_SLOTS, sector_size: int = 512) -> int:
        return (1 + _table_sectors(num_clusters, sector_size) + dir_slots
                + num_clusters * (cluster_size // sector_size))

    @classmethod
    def max_clusters(cls, length: int, cluster_size: int = DEFAULT_CLUSTER_SIZE,
                     dir_slots: int = DEFAULT_DIR_SLOTS, sector_size: int = 512) -> int:
        n = max(0, (length - 1 - dir_slots) * sector_size // (cluster_size + 4))
        while n > 0 and cls.required_sectors(n, cluster_size, dir_slots, sector_size) > length:
            n -= 1
        while cls.required_sectors(n + 1, cluster_size, dir_slots, sector_size) <= length:
            n += 1
        return n

    # --------------------------------------------------------------- creation

    @classmethod
    def format(cls, device, start_lba: int, length: int, num_clusters: int | None = None,
               cluster_size: int = DEFAULT_CLUSTER_SIZE,
               dir_slots: int = DEFAULT_DIR_SLOTS) -> "FsImage":
        ss = device.sector_size
        if num_clusters is None:
            num_clusters = cls.max_clusters(length, cluster_size, dir_slots, ss)
        if num_clusters < 1 or dir_slots < 1:
            raise TooSmall("need at least one cluster and one directory slot")
        need = cls.required_sectors(num_clusters, cluster_size, dir_slots, ss)
        if need > length:
            raise TooSmall(f"{num_clusters} clusters need {need} sectors, region has {length}")
        fs = cls(device, start_lba, length, num_clusters=num_clusters,
                 cluster_size=cluster_size, dir_slots=dir_slots)
        fs._write(fs.table_lba, bytes((fs.data_lba - fs.table_lba) * ss))
        fs._write_superblock()
        return fs

    @classmethod
    def mount(cls, device, start_lba: int, length: int) -> "FsImage":
        ss = device.sector_size
        raw = device.read_sectors(start_lba, 1)
        magic, _version, sb_ss, n, cs, slots, cursor, probes = _SB.unpack_from(raw)
        if magic != _MAGIC:
            raise CorruptFs("no filesystem signature")
        if sb_ss != ss or n < 1 or slots < 1 or cs % ss or cs == 0:
            raise CorruptFs("bad superblock geometry")
        if cls.required_sectors(n, cs, slots, ss) > length:
            raise CorruptFs("superblock geometry exceeds region")
        fs = cls(device, start_lba, length, num_clusters=n, cluster_size=cs, dir_slots=slots)
        fs.alloc_cursor = cursor if cursor < n else 0
        fs.probe_counter = probes
        table = np.frombuffer(fs._read(fs.table_lba, fs.dir_lba - fs.table_lba), dtype="<i4")
        fs.table = table[:n].copy()
        if ((fs.table < EOC) | (fs.table > n)).any():
            raise CorruptFs("cluster table entry out of range")
        fs.free_clusters = int(np.count_nonzero(fs.table == FREE))
        dir_raw = fs._read(fs.dir_lba, slots)
        for slot in range(slots):
            entry = fs._decode(dir_raw[slot * ss:(slot + 1) * ss], slot)
            fs.entries[slot] = entry
            if entry is not None and not entry.deleted:
                if entry.name in fs._live:
                    raise CorruptFs(f"duplicate live name {entry.name!r}")
                fs._live[entry.name] = slot
        return fs

    # ---------------------------------------------------------------- raw I/O

    def _write(self, lba: int, data: bytes) -> None:
        ss = self.sector_size
        step = MAX_REQUEST_SECTORS * ss
        for off in range(0, len(data), step):
            chunk = data[off:off + step]
            self.device.write_sectors(lba + off // ss, chunk)
            self.io_log.append(("write", lba + off // ss, len(chunk) // ss))

    def _read(self, lba: int, count: int) -> bytes:
        parts = []
        pos = 0
        while pos < count:
            n = min(MAX_REQUEST_SECTORS, count - pos)
            parts.append(self.device.read_sectors(lba + pos, n))
            self.io_log.append(("read", lba + pos, n))
            pos += n
        return b"".join(parts)

    def _cluster_lba(self, cluster: int) -> int:
        return self.data_lba + cluster * self.spc

    def _write_superblock(self) -> None:
        sb = _SB.pack(_MAGIC, 1, self.sector_size, self.num_clusters, self.cluster_size,
                      self.dir_slots, self.alloc_cursor, self.probe_counter)
        self._write(self.start_lba, sb.ljust(self.sector_size, b"\x00"))

    def _encode(self, e: DirEntry | None) -> bytes:
        if e is None:
            return bytes(self.sector_size)
        raw = e.name.encode("utf-8")
        flags = _F_USED | (_F_HIDDEN if e.hidden else 0) | (_F_DELETED if e.deleted else 0)
        rec = _REC.pack(flags, len(raw), raw, e.size, e.created, e.modified,
                        e.first_cluster, e.generation)
        return rec.ljust(self.sector_size, b"\x00")

    def _decode(self, raw: bytes, slot: int) -> DirEntry | None:
        flags, nlen, name, size, created, modified, first, gen = _REC.unpack_from(raw)
        if not flags & _F_USED:
            return None
        if nlen == 0 or nlen > MAX_NAME_BYTES or not -1 <= first < self.num_clusters:
            raise CorruptFs(f"bad directory record in slot {slot}")
        try:
            text = name[:nlen].decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptFs(f"undecodable name in slot {slot}") from None
        return DirEntry(text, size, created, modified, first, bool(flags & _F_HIDDEN),
                        bool(flags & _F_DELETED), gen, slot)

    def flush(self) -> None:
        ss = self.sector_size
        tbytes = self.table.tobytes()
        for first, n in _runs(sorted(self._dirty_table)):
            chunk = tbytes[first * ss:(first + n) * ss]
            self._write(self.table_lba + first, chunk.ljust(n * ss, b"\x00"))
        for first, n in _runs(sorted(self._dirty_slots)):
            data = b"".join(self._encode(self.entries[s]) for s in range(first, first + n))
            self._write(self.dir_lba + first, data)
        self._write_superblock()
        self._dirty_table.clear()
        self._dirty_slots.clear()

    # ------------------------------------------------------------- allocation

    def _set(self, cluster: int, value: int) -> None:
        self.table[cluster] = value
        self._dirty_table.add(cluster * 4 // self.sector_size)

    def _allocate(self, k: int, policy: AllocPolicy) -> list[int]:
        n = self.num_clusters
        if k > self.free_clusters:
            raise NoSpace(f"need {k} clusters, {self.free_clusters} free")
        if k == 0:
            return []
        if policy == "naive":
            out = []
            for _ in range(k):
                free = self.table == FREE          # full traversal of the table
                self.probe_counter += n
                c = int(np.argmax(free))
                self.table[c] = EOC                # reserve before the next scan
                out.append(c)
        elif policy == "cursor":
            cur = self.alloc_cursor
            order = np.concatenate((self.table[cur:], self.table[:cur]))
            pos = np.flatnonzero(order == FREE)[:k]
            self.probe_counter += int(pos[-1]) + 1
            out = [int(c) for c in (pos + cur) % n]
            self.alloc_cursor = (out[-1] + 1) % n
        else:
            raise ValueError(f"unknown allocation policy {policy!r}")
        for a, b in zip(out, out[1:]):
            self._set(a, b + 1)
        self._set(out[-1], EOC)
        self.free_clusters -= k
        return out

    def _free_chain(self, clusters) -> None:
        for c in clusters:
            self._set(c, FREE)
        self.free_clusters += len(clusters)

    def chain(self, first: int) -> list[int]:
        out = []
        c = first
        while c != EOC:
            if not 0 <= c < self.num_clusters or len(out) >= self.num_clusters:
                raise CorruptFs("broken or cyclic cluster chain")
            out.append(c)
            nxt = int(self.table[c])
            if nxt == FREE:
                raise CorruptFs(f"chain runs into free cluster {c}")
            c = EOC if nxt == EOC else nxt - 1
        return out

    def _write_clusters(self, clusters, data: bytes) -> None:
        cs = self.cluster_size
        data = bytes(data).ljust(len(clusters) * cs, b"\x00")
        pos = 0
        for first, n in _runs(clusters):
            self._write(self._cluster_lba(first), data[pos:pos + n * cs])
            pos += n * cs

    def _read_clusters(self, clusters) -> bytes:
        parts = [self._read(self._cluster_lba(first), n * self.spc) for first, n in _runs(clusters)]
        return b"".join(parts)

    # ----------------------------------------------------------- directory

    def _clusters_for(self, size: int) -> int:
        return -(-size // self.cluster_size)

    def _free_slot(self) -> int:
        for i, e in enumerate(self.entries):
            if e is None or e.deleted:
                return i
        raise NoSpace("directory is full")

    def _entry(self, name: str) -> DirEntry:
        slot = self._live.get(name)
        if slot is None:
            raise NotFound(name)
        return self.entries[slot]

    def _store(self, entry: DirEntry) -> None:
        self.entries[entry.slot] = entry
        self._dirty_slots.add(entry.slot)

    def exists(self, name: str) -> bool:
        return name in self._live

    def stat(self, name: str) -> DirEntry:
        return self._entry(name)

    def list(self, show_hidden: bool = False) -> list[DirEntry]:
        out = [self.entries[s] for s in self._live.values()]
        if not show_hidden:
            out = [e for e in out if not e.hidden]
        return sorted(out, key=lambda e: e.name)

    # ----------------------------------------------------------- operations

    def create_write(self, name: str, data: bytes, timestamp: int,
                     policy: AllocPolicy | None = None, *, generation: int = 0,
                     hidden: bool = False, created: int | None = None) -> DirEntry:
        _check_name(name)
        if name in self._live:
            raise Exists(name)
        k = self._clusters_for(len(data))
        if k > self.free_clusters:
            raise NoSpace(f"{name}: need {k} clusters, {self.free_clusters} free")
        slot = self._free_slot()
        clusters = self._allocate(k, policy or self.default_policy)
        self._write_clusters(clusters, data)
        created = int(timestamp) if created is None else int(created)
        entry = DirEntry(name, len(data), created, int(timestamp),
                         clusters[0] if clusters else -1, hidden, False, generation, slot)
        self._store(entry)
        self._live[name] = slot
        self.flush()
        return entry

    def read_file(self, name: str) -> bytes:
        e = self._entry(name)
        if e.first_cluster < 0:
            return b""
        clusters = self.chain(e.first_cluster)
        if len(clusters) * self.cluster_size < e.size:
            raise CorruptFs(f"{name}: chain shorter than file size")
        return self._read_clusters(clusters)[:e.size]

    def overwrite(self, name: str, data: bytes, timestamp: int, *,
                  generation: int | None = None) -> DirEntry:
        e = self._entry(name)
        old = self.chain(e.first_cluster) if e.first_cluster >= 0 else []
        need = self._clusters_for(len(data))
        if need - len(old) > self.free_clusters:
            raise NoSpace(f"{name}: need {need - len(old)} more clusters")
        if need > len(old):
            extra = self._allocate(need - len(old), self.default_policy)
            if old:
                self._set(old[-1], extra[0] + 1)
            clusters = old + extra
        else:
            clusters = old[:need]
            self._free_chain(old[need:])
            if clusters:
                self._set(clusters[-1], EOC)
        self._write_clusters(clusters, data)
        e = replace(e, size=len(data), modified=int(timestamp),
                    first_cluster=clusters[0] if clusters else -1,
                    generation=e.generation if generation is None else generation)
        self._store(e)
        self.flush()
        return e

    def rename(self, old: str, new: str) -> DirEntry:
        _check_name(new)
        e = self._entry(old)
        if new in self._live:
            raise Exists(new)
        e = replace(e, name=new)
        self._store(e)
        del self._live[old]
        self._live[new] = e.slot
        self.flush()
        return e

    def set_hidden(self, name: str, flag: bool) -> DirEntry:
        e = replace(self._entry(name), hidden=bool(flag))
        self._store(e)
        self.flush()
        return e

    def delete(self, name: str) -> DirEntry:
        """Flag the entry deleted and free its chain; data is not zeroed."""
        e = self._entry(name)
        if e.first_cluster >= 0:
            self._free_chain(self.chain(e.first_cluster))
        e = replace(e, deleted=True)
        self._store(e)
        del self._live[name]
        self.flush()
        return e

    # ----------------------------------------------------------- inspection

    def allocated_clusters(self) -> set[int]:
        return {int(c) for c in np.flatnonzero(self.table != FREE)}

    def listing_text(self, show_hidden: bool = True) -> str:
        lines = []
        for e in self.list(show_hidden):
            flags = "h" if e.hidden else "-"
            lines.append(f"{e.name}\t{e.size}\t{e.created}\t{e.modified}\t{flags}")
        return "\n".join(lines) + ("\n" if lines else "")

    def region_digest(self) -> str:
        return self.device.digest(self.start_lba, self.length)
