"""The trusted updater: the program that runs inside the late-launch session.

It is the only code that ever learns the drive credential.  Every entry
point unseals its state first and aborts before touching the drive if the
measurement is wrong.  The protected range is unlocked only for the
duration of one operation and relocked on the way out.

Versioning is append-only.  Committing a changed file renames the current
protected copy to ``<name>.<12-digit timestamp>``, hides it, and writes
the new content under the original name.  Nothing is ever deleted except
through the consent browser or the auto-deletion policies.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, field, fields, replace

from . import timeauth
from .browser import BrowserRow, run_browser
from .errors import (
    AlreadyProvisioned,
    BadSignature,
    CorruptBlob,
    CorruptFs,
    NoSpace,
    PolicyError,
    PolicyMismatch,
    StaleToken,
    Undefined,
    UnsealFailed,
)
from .tee import ProgramImage
from .tpm import LAUNCH_PCR
from .vaultfs import FsImage

NV_STATE_INDEX = 0x1500
POLICY_FILE = "inuksuk.policy"
# Reports kept for the cross-run anomaly window.
ANOMALY_WINDOW = 10
GENUINE_CODE = b"inuksuk-trusted-updater/1.0\n"

_VERSION_RE = re.compile(r"^(?P<base>.+)\.(?P<ts>\d{12})(?:-(?P<seq>\d+))?$")


# ---------------------------------------------------------------- policy

@dataclass
class UpdatePolicy:
    commit_interval: int = 8 * 3600
    max_file_size: int = 100 * 2**20
    version_limit: int = 100
    age_threshold: int = 365 * 86400          # 0 disables aging
    anomaly_version_threshold: int = 100
    avatar: str = ""

    def __post_init__(self):
        if self.version_limit < 1:
            raise PolicyError("version_limit must be at least 1")
        for name in ("commit_interval", "max_file_size", "age_threshold",
                     "anomaly_version_threshold"):
            if getattr(self, name) < 0:
                raise PolicyError(f"{name} must be non-negative")
        if "\n" in self.avatar or "\t" in self.avatar:
            raise PolicyError("avatar must be a single line without tabs")

    @classmethod
    def keys(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def to_text(self, include_avatar: bool = True) -> str:
        lines = []
        for key in self.keys():
            if key == "avatar" and not include_avatar:
                continue
            lines.append(f"{key}={getattr(self, key)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, require_avatar: bool = True) -> "UpdatePolicy":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or key not in cls.keys():
                raise PolicyError(f"line {lineno}: unrecognised entry {raw!r}")
            values[key] = value.strip()
        wanted = cls.keys() if require_avatar else tuple(k for k in cls.keys() if k != "avatar")
        missing = [k for k in wanted if k not in values]
        if missing:
            raise PolicyError("missing policy keys: " + ", ".join(missing), missing)
        kwargs = {}
        for key, value in values.items():
            if key == "avatar":
                kwargs[key] = value
            else:
                try:
                    kwargs[key] = int(value)
                except ValueError:
                    raise PolicyError(f"{key} must be an integer, got {value!r}") from None
        if require_avatar and not kwargs.get("avatar"):
            raise PolicyError("avatar must not be empty", ["avatar"])
        return cls(**kwargs)


def verify_policy(sealed: UpdatePolicy, plaintext: str | None) -> list[str]:
    """Fields where the unprotected copy disagrees with the sealed policy.

    An empty list means the copy is faithful.  The sealed policy governs
    either way; the avatar never appears in the copy and is not compared.
    """
    if plaintext is None:
        return ["<missing>"]
    try:
        copy = UpdatePolicy.from_text(plaintext, require_avatar=False)
    except PolicyError:
        return ["<unparseable>"]
    return [k for k in UpdatePolicy.keys()
            if k != "avatar" and getattr(copy, k) != getattr(sealed, k)]


# ---------------------------------------------------------------- state

@dataclass
class Layout:
    original_lba: int
    original_sectors: int
    protected_lba: int
    protected_sectors: int


@dataclass
class SealedState:
    sed_credential: bytes
    range_id: int
    policy: UpdatePolicy
    layout: Layout
    selection: list[str]
    last_commit_time: int = 0
    last_accepted_ntp: int = 0
    ntp_public_key: bytes = b""
    pending: list[str] = field(default_factory=list)
    recent: list[dict[str, int]] = field(default_factory=list)

    def to_bytes(self) -> bytes:
        d = asdict(self)
        d["sed_credential"] = self.sed_credential.hex()
        d["ntp_public_key"] = self.ntp_public_key.hex()
        return json.dumps(d, sort_keys=True, separators=(",", ":")).encode()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "SealedState":
        d = json.loads(raw)
        d["sed_credential"] = bytes.fromhex(d["sed_credential"])
        d["ntp_public_key"] = bytes.fromhex(d["ntp_public_key"])
        d["policy"] = UpdatePolicy(**d["policy"])
        d["layout"] = Layout(**d["layout"])
        return cls(**d)


def _load_state(session) -> SealedState:
    try:
        raw = session.tpm.nvram_read(NV_STATE_INDEX)
        return SealedState.from_bytes(session.tpm.unseal(raw))
    except (Undefined, PolicyMismatch, CorruptBlob) as exc:
        raise UnsealFailed(f"cannot unseal updater state: {type(exc).__name__}") from None


def _store_state(session, state: SealedState) -> None:
    pcr = session.tpm.pcr_read(LAUNCH_PCR)
    blob = session.tpm.seal(state.to_bytes(), {LAUNCH_PCR: pcr})
    session.tpm.nvram_write(NV_STATE_INDEX, blob.to_bytes())


# ---------------------------------------------------------------- report

@dataclass
class UpdateReport:
    run_timestamp: int
    committed: list[tuple[str, int, int]] = field(default_factory=list)
    skipped: list[tuple[str, str]] = field(default_factory=list)
    anomalies: list[tuple[str, int]] = field(default_factory=list)
    avatar_shown: str = ""
    deletions: list[tuple[str, str]] = field(default_factory=list)
    policy_mismatch: list[str] = field(default_factory=list)
    time_status: str = "absent"

    def redacted(self) -> "UpdateReport":
        """Copy safe to hand back to the host: the avatar is replaced by a flag."""
        return replace(self, avatar_shown="<shown>" if self.avatar_shown else "")

    def to_lines(self) -> list[str]:
        lines = [f"report\t{self.run_timestamp}\tavatar\t{self.avatar_shown or '-'}"]
        lines += [f"committed\t{n}\t{ts}\t{size}" for n, ts, size in self.committed]
        lines += [f"skipped\t{n}\t{why}" for n, why in self.skipped]
        lines += [f"anomaly\t{n}\t{count}" for n, count in self.anomalies]
        lines += [f"deleted\t{n}\t{why}" for n, why in self.deletions]
        lines += [f"mismatch\t{k}" for k in self.policy_mismatch]
        lines.append(f"time\t{self.time_status}")
        return lines

    @classmethod
    def from_lines(cls, lines) -> "UpdateReport":
        rep = None
        for line in lines:
            parts = line.rstrip("\n").split("\t")
            kind = parts[0]
            if kind == "report":
                rep = cls(int(parts[1]), avatar_shown="" if parts[3] == "-" else parts[3])
            elif kind == "committed":
                rep.committed.append((parts[1], int(parts[2]), int(parts[3])))
            elif kind == "skipped":
                rep.skipped.append((parts[1], parts[2]))
            elif kind == "anomaly":
                rep.anomalies.append((parts[1], int(parts[2])))
            elif kind == "deleted":
                rep.deletions.append((parts[1], parts[2]))
            elif kind == "mismatch":
                rep.policy_mismatch.append(parts[1])
            elif kind == "time":
                rep.time_status = parts[1]
        return rep


# ---------------------------------------------------------------- naming

def version_name(base: str, timestamp: int, seq: int = 0) -> str:
    name = f"{base}.{timestamp:012d}"
    return f"{name}-{seq}" if seq else name


def parse_version(name: str) -> tuple[str, int, int] | None:
    m = _VERSION_RE.match(name)
    if m is None:
        return None
    return m["base"], int(m["ts"]), int(m["seq"] or 0)


def _history_name(fs: FsImage, base: str, timestamp: int) -> str:
    seq = 0
    while fs.exists(version_name(base, timestamp, seq)):
        seq += 1
    return version_name(base, timestamp, seq)


def versions_of(fs: FsImage) -> dict[str, list]:
    """Hidden history entries grouped by base name, oldest first."""
    groups: dict[str, list] = {}
    for e in fs.list(show_hidden=True):
        parsed = parse_version(e.name) if e.hidden else None
        if parsed is not None:
            groups.setdefault(parsed[0], []).append((parsed[1], parsed[2], e))
    for v in groups.values():
        v.sort(key=lambda t: (t[0], t[1]))
    return groups


# ---------------------------------------------------------------- session helpers

def render_banner(session, state: SealedState) -> str:
    """Show the per-deployment avatar.  Must be the first thing on screen."""
    session.ui.write(f"== {state.policy.avatar} ==")
    return state.policy.avatar


def _mount_originals(session, layout: Layout) -> FsImage | None:
    try:
        return FsImage.mount(session.sed, layout.original_lba, layout.original_sectors)
    except CorruptFs:
        return None


def _read_plaintext_policy(orig: FsImage | None) -> str | None:
    if orig is None or not orig.exists(POLICY_FILE):
        return None
    try:
        return orig.read_file(POLICY_FILE).decode("utf-8")
    except (CorruptFs, UnicodeDecodeError):
        return None


def _open_protected(session, state: SealedState) -> FsImage:
    session.sed.unlock_write(state.range_id, state.sed_credential)
    lay = state.layout
    return FsImage.mount(session.sed, lay.protected_lba, lay.protected_sectors)


def _lock(session, state: SealedState) -> None:
    session.sed.lock_write(state.range_id, state.sed_credential)


def _digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


# ---------------------------------------------------------------- operations

def provision(session, selection, policy: UpdatePolicy, layout: Layout,
              ntp_public_key: bytes, now: int) -> UpdateReport:
    if session.sed.ranges or session.tpm.nvram_defined(NV_STATE_INDEX):
        raise AlreadyProvisioned("protected range or sealed state already present")
    credential = session.tpm.get_random(32)
    sed = session.sed
    sed.take_ownership(sed.msid, credential)
    range_id = sed.configure_range(credential, layout.protected_lba, layout.protected_sectors,
                                   True, False, credential)
    state = SealedState(credential, range_id, policy, layout, sorted(set(selection)),
                        last_commit_time=now, ntp_public_key=bytes(ntp_public_key))
    report = UpdateReport(now)
    report.avatar_shown = render_banner(session, state)
    sed.unlock_write(range_id, credential)
    try:
        fs = FsImage.format(sed, layout.protected_lba, layout.protected_sectors)
        orig = _mount_originals(session, layout)
        pending = []
        for name in state.selection:
            if orig is None or not orig.exists(name):
                report.skipped.append((name, "original-missing"))
                pending.append(name)
                continue
            entry = orig.stat(name)
            if entry.size > policy.max_file_size:
                report.skipped.append((name, "too-large"))
                pending.append(name)
                continue
            try:
                fs.create_write(name, orig.read_file(name), now, generation=entry.generation,
                                created=entry.modified)
            except NoSpace:
                report.skipped.append((name, "no-space"))
                pending.append(name)
                continue
            report.committed.append((name, now, entry.size))
        state.pending = pending
        if orig is not None:
            text = policy.to_text(include_avatar=False).encode()
            if orig.exists(POLICY_FILE):
                orig.overwrite(POLICY_FILE, text, now)
            else:
                orig.create_write(POLICY_FILE, text, now)
        session.tpm.nvram_define(NV_STATE_INDEX, {LAUNCH_PCR: session.tpm.pcr_read(LAUNCH_PCR)})
        _store_state(session, state)
    finally:
        _lock(session, state)
    for line in report.to_lines():
        session.ui.write(line)
    return report.redacted()


def auto_delete(fs: FsImage, state: SealedState, token=None) -> list[tuple[str, str]]:
    """Apply aging (needs a verified time token) and version limiting.

    Raises ``BadSignature``/``StaleToken`` before deleting anything when a
    token is supplied but unacceptable.  The live entry is never deleted.
    """
    verified = None
    if token is not None:
        if isinstance(token, str):
            token = timeauth.TimeToken.from_hex(token)
        verified = timeauth.verify(token, state.ntp_public_key, state.last_accepted_ntp)
        state.last_accepted_ntp = verified
    pol = state.policy
    deletions = []
    for base, versions in sorted(versions_of(fs).items()):
        doomed: dict[str, str] = {}
        if verified is not None and pol.age_threshold > 0:
            for ts, _seq, e in versions:
                if ts < verified - pol.age_threshold:
                    doomed[e.name] = "aged"
        total = len(versions) + (1 if fs.exists(base) else 0)
        excess = total - pol.version_limit
        for _ts, _seq, e in versions[:max(0, excess)]:
            doomed.setdefault(e.name, "version-limit")
        for name in sorted(doomed, key=lambda n: parse_version(n)[1:]):
            fs.delete(name)
            deletions.append((name, doomed[name]))
    return deletions


def commit(session, now: int, token=None) -> UpdateReport:
    state = _load_state(session)
    report = UpdateReport(now)
    report.avatar_shown = render_banner(session, state)
    now = max(int(now), state.last_commit_time)
    report.run_timestamp = now
    orig = _mount_originals(session, state.layout)
    report.policy_mismatch = verify_policy(state.policy, _read_plaintext_policy(orig))
    pol = state.policy
    fs = _open_protected(session, state)
    try:
        pending = set(state.pending)
        run_counts: dict[str, int] = {}
        names = list(state.selection)
        for i, name in enumerate(names):
            if orig is None or not orig.exists(name):
                report.skipped.append((name, "original-missing"))
                continue
            src = orig.stat(name)
            # A protected entry's ``created`` holds the source mtime it was copied from.
            candidate = (src.modified > state.last_commit_time or name in pending
                         or not fs.exists(name) or fs.stat(name).created != src.modified)
            if not candidate:
                continue
            pending.discard(name)
            if src.size > pol.max_file_size:
                report.skipped.append((name, "too-large"))
                pending.add(name)
                continue
            try:
                data = orig.read_file(name)
            except CorruptFs:
                report.skipped.append((name, "unreadable"))
                pending.add(name)
                continue
            try:
                if fs.exists(name):
                    live = fs.stat(name)
                    if _digest(fs.read_file(name)) == _digest(data):
                        report.skipped.append((name, "unchanged"))
                        continue
                    delta = max(1, src.generation - live.generation)
                    hist = _history_name(fs, name, live.modified)
                    fs.rename(name, hist)
                    fs.set_hidden(hist, True)
                    try:
                        fs.create_write(name, data, now, generation=src.generation,
                                        created=src.modified)
                    except NoSpace:
                        fs.set_hidden(hist, False)
                        fs.rename(hist, name)
                        raise
                else:
                    delta = 1
                    fs.create_write(name, data, now, generation=src.generation,
                                    created=src.modified)
            except NoSpace:
                for rest in names[i:]:
                    report.skipped.append((rest, "no-space"))
                    pending.add(rest)
                break
            report.committed.append((name, now, len(data)))
            run_counts[name] = delta

        window = state.recent[-(ANOMALY_WINDOW - 1):] + [run_counts]
        for name in sorted(run_counts):
            burst = sum(counts.get(name, 0) for counts in window)
            if pol.anomaly_version_threshold and burst >= pol.anomaly_version_threshold:
                report.anomalies.append((name, burst))
        state.recent = window[-(ANOMALY_WINDOW - 1):]

        try:
            report.deletions = auto_delete(fs, state, token)
            if token is not None:
                report.time_status = f"verified:{state.last_accepted_ntp}"
        except (BadSignature, StaleToken) as exc:
            report.time_status = type(exc).__name__
            report.deletions = auto_delete(fs, state, None)

        state.last_commit_time = now
        state.pending = sorted(pending)
        _store_state(session, state)
    finally:
        _lock(session, state)
    for line in report.to_lines():
        session.ui.write(line)
    return report.redacted()


def delete_browser(session, now: int = 0) -> UpdateReport:
    """Consent-based deletion: the user picks entries on the trusted console."""
    state = _load_state(session)
    report = UpdateReport(max(int(now), state.last_commit_time))
    report.avatar_shown = render_banner(session, state)
    fs = _open_protected(session, state)
    try:
        rows = [BrowserRow(e.name, e.size, e.modified, e.hidden) for e in fs.list(show_hidden=True)]
        chosen = run_browser(rows, session.ui)
        for name in chosen:
            fs.delete(name)
            report.deletions.append((name, "user"))
    finally:
        _lock(session, state)
    for line in report.to_lines():
        session.ui.write(line)
    return report.redacted()


def run_auto_delete(session, now: int = 0, token=None) -> UpdateReport:
    state = _load_state(session)
    report = UpdateReport(max(int(now), state.last_commit_time))
    report.avatar_shown = render_banner(session, state)
    fs = _open_protected(session, state)
    try:
        try:
            report.deletions = auto_delete(fs, state, token)
            if token is not None:
                report.time_status = f"verified:{state.last_accepted_ntp}"
        except (BadSignature, StaleToken) as exc:
            report.time_status = type(exc).__name__
            report.deletions = auto_delete(fs, state, None)
        _store_state(session, state)
    finally:
        _lock(session, state)
    for line in report.to_lines():
        session.ui.write(line)
    return report.redacted()


def show_banner(session) -> str:
    """Unseal and display the avatar only; proves the genuine updater ran."""
    state = _load_state(session)
    render_banner(session, state)
    return "<shown>"


_OPS = {
    "provision": provision,
    "commit": commit,
    "browse_delete": delete_browser,
    "auto_delete": run_auto_delete,
    "banner": show_banner,
}


def updater_main(session, op: str, **kwargs):
    try:
        fn = _OPS[op]
    except KeyError:
        raise ValueError(f"unknown updater operation {op!r}") from None
    return fn(session, **kwargs)


def genuine_image() -> ProgramImage:
    return ProgramImage("inuksuk-updater", GENUINE_CODE, updater_main)
