"""Independent reference models used by the tests.

None of these import the code under test.  They are written for clarity
rather than speed: per-sector loops, plain lists and direct hashing.
"""

from __future__ import annotations

import hashlib


# ---------------------------------------------------------------- drive

class RefSed:
    """Brute-force permission model of a locking-range drive.

    Stores every sector explicitly and decides each write by checking the
    owning range of every touched sector one at a time.
    """

    def __init__(self, sector_count: int, sector_size: int = 512, admin: bytes = bytes(32)):
        self.n = sector_count
        self.ss = sector_size
        self.store = [bytes(sector_size)] * sector_count
        self.admin = admin
        self.ranges: dict[int, dict] = {}
        self.next_id = 1

    def _owner(self, sector: int):
        for rid, r in self.ranges.items():
            if r["start"] <= sector < r["start"] + r["length"]:
                return rid
        return None

    def configure(self, admin, start, length, wle, cred) -> str | int:
        if admin != self.admin:
            return "BadCredential"
        if length < 1 or start < 0 or start + length > self.n:
            return "OutOfBounds"
        if any(self._owner(s) is not None for s in range(start, start + length)):
            return "OverlappingRange"
        rid = self.next_id
        self.next_id += 1
        self.ranges[rid] = {"start": start, "length": length, "wle": wle,
                            "locked": wle, "cred": cred}
        return rid

    def set_lock(self, rid, cred, locked: bool) -> str | None:
        r = self.ranges.get(rid)
        if r is None:
            return "NoSuchRange"
        if r["cred"] != cred:
            return "BadCredential"
        r["locked"] = locked and r["wle"]
        return None

    def power_cycle(self) -> None:
        for r in self.ranges.values():
            r["locked"] = r["wle"]

    def write(self, lba: int, data: bytes) -> str | None:
        count = len(data) // self.ss
        if lba < 0 or lba + count > self.n:
            return "OutOfBounds"
        for s in range(lba, lba + count):
            rid = self._owner(s)
            if rid is not None and self.ranges[rid]["locked"]:
                return "WriteLocked"
        for i in range(count):
            self.store[lba + i] = data[i * self.ss:(i + 1) * self.ss]
        return None

    def read(self, lba: int, count: int) -> bytes | str:
        if lba < 0 or count < 0 or lba + count > self.n:
            return "OutOfBounds"
        return b"".join(self.store[lba:lba + count])

    def image_sha256(self) -> str:
        return hashlib.sha256(b"".join(self.store)).hexdigest()


# ---------------------------------------------------------------- TPM

def pcr_chain(measurements, start: bytes = bytes(32)) -> bytes:
    """Value of a register after extending ``measurements`` in order."""
    value = start
    for m in measurements:
        value = hashlib.sha256(value + m).digest()
    return value


def seal_should_open(bindings: dict[int, bytes], pcrs_now: dict[int, bytes]) -> bool:
    """Truth table: unsealing works iff every bound register is unchanged."""
    return all(pcrs_now[i] == v for i, v in bindings.items())


# ---------------------------------------------------------------- allocation

def naive_probes(clusters_needed: int, total_clusters: int) -> int:
    """Closed form: each allocation rescans the whole table from the start."""
    return clusters_needed * total_clusters


def cursor_probes(table: list[int], cursor: int, k: int) -> tuple[int, list[int]]:
    """Walk the table from the cursor, wrapping, until ``k`` free slots are seen."""
    n = len(table)
    got, probes, i = [], 0, cursor
    while len(got) < k:
        probes += 1
        if table[i] == 0:
            got.append(i)
        i = (i + 1) % n
        if probes > n:
            raise AssertionError("not enough free clusters")
    return probes, got


def mark_and_sweep(table, entries) -> tuple[set[int], list[str]]:
    """Follow every live chain; report reachable clusters and any problems.

    ``table`` uses 0 = free, -1 = end of chain, v = next cluster v-1.
    """
    problems = []
    seen: dict[int, str] = {}
    for e in entries:
        c = e.first_cluster
        steps = 0
        while c != -1 and c >= 0:
            if c in seen:
                problems.append(f"cluster {c} shared by {seen[c]} and {e.name}")
                break
            seen[c] = e.name
            nxt = int(table[c])
            if nxt == 0:
                problems.append(f"{e.name}: chain enters free cluster {c}")
                break
            c = -1 if nxt == -1 else nxt - 1
            steps += 1
            if steps > len(table):
                problems.append(f"{e.name}: cycle")
                break
    allocated = {i for i, v in enumerate(table) if int(v) != 0}
    leaked = allocated - set(seen)
    if leaked:
        problems.append(f"{len(leaked)} allocated cluster(s) unreachable")
    return set(seen), problems


# ---------------------------------------------------------------- time

def accepted_times(times) -> list[int]:
    """Times a monotonic verifier accepts when shown ``times`` in order."""
    out, last = [], 0
    for t in times:
        if t > last:
            out.append(t)
            last = t
    return out
