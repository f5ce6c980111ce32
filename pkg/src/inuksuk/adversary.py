"""Scripted attacks by a host-privileged adversary, with observable outcomes.

The :class:`Adversary` holds everything host software can reach: every
host method, every drive command, the TPM at host locality, the ability
to install and late-launch arbitrary program images, the OS clock and the
transcript.  It never holds the drive credential, the trusted console, the
time-authority signing key, or the drive's printed PSID.

Outcomes are computed by an evaluator from observable state.  The one
exception is the leak scan, which needs the real credential and avatar to
search for; :func:`ground_truth` recovers them from a clone of the TPM and
is never handed to the adversary.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Any

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

from . import timeauth
from .errors import InuksukError, ProgramFault
from .tee import ProgramImage
from .tpm import LAUNCH_LOCALITY, LAUNCH_PCR, Tpm
from .updater import (
    GENUINE_CODE,
    NV_STATE_INDEX,
    SealedState,
    UpdatePolicy,
    commit as genuine_commit,
    genuine_image,
)
from .world import Simulation, demo_world

SCENARIO_IDS = (
    "direct_write",
    "credential_theft",
    "binary_tamper",
    "forged_ui",
    "driver_kill",
    "version_exhaustion",
    "clock_attack",
    "persistent_ransomware",
)

FIVE_YEARS = 5 * 365 * 86400


# ---------------------------------------------------------------- data

@dataclass
class AttackScenario:
    id: str
    parameters: dict = field(default_factory=dict)
    expected_outcome: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.id not in SCENARIO_IDS:
            raise ValueError(f"unknown scenario id {self.id!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "AttackScenario":
        unknown = set(d) - {"id", "parameters", "expected_outcome"}
        if unknown:
            raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(d["id"], dict(d.get("parameters", {})), dict(d.get("expected_outcome", {})))

    @classmethod
    def load(cls, path) -> "AttackScenario":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def canned_scenarios() -> list[AttackScenario]:
    """The scenario files shipped with the package, in canonical order."""
    pkg = resources.files("inuksuk") / "scenarios"
    return [AttackScenario.from_dict(json.loads((pkg / f"{sid}.json").read_text()))
            for sid in SCENARIO_IDS]


def _check(observed, expected) -> bool:
    if isinstance(expected, dict):
        ops = {"eq": lambda a, b: a == b, "ge": lambda a, b: a >= b, "le": lambda a, b: a <= b,
               "gt": lambda a, b: a > b, "lt": lambda a, b: a < b}
        try:
            return all(ops[op](observed, v) for op, v in expected.items())
        except (KeyError, TypeError):
            return False
    return observed == expected


@dataclass
class AttackOutcome:
    scenario_id: str
    protected_digest_before: str
    protected_digest_after: str
    data_loss: list[tuple[str, int]] = field(default_factory=list)
    detection_signals: list[str] = field(default_factory=list)
    facts: dict[str, Any] = field(default_factory=dict)

    def observed(self) -> dict[str, Any]:
        """Flat view that ``expected_outcome`` keys are matched against."""
        out = dict(self.facts)
        out["digest_unchanged"] = self.protected_digest_before == self.protected_digest_after
        out["data_loss"] = len(self.data_loss)
        out["signals"] = list(self.detection_signals)
        return out

    def compare(self, expected: dict) -> list[str]:
        """Differences from ``expected``; an empty list means a match.

        Plain values must be equal.  A dict value holds comparisons such as
        ``{"ge": 4}``.  ``signals_include`` and ``signals_exclude`` test
        membership in the detection signals.
        """
        obs = self.observed()
        diff = []
        for key, want in sorted(expected.items()):
            if key == "signals_include":
                missing = [s for s in want if s not in self.detection_signals]
                if missing:
                    diff.append(f"signals missing {missing}")
            elif key == "signals_exclude":
                present = [s for s in want if s in self.detection_signals]
                if present:
                    diff.append(f"signals unexpectedly present {present}")
            elif key not in obs:
                diff.append(f"{key}: not observed (expected {want!r})")
            elif not _check(obs[key], want):
                diff.append(f"{key}: observed {obs[key]!r}, expected {want!r}")
        return diff

    def to_dict(self) -> dict:
        d = asdict(self)
        d["data_loss"] = [list(t) for t in self.data_loss]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------- evaluator

def ground_truth(sim: Simulation) -> SealedState | None:
    """Evaluator-only: unseal the updater state on a throwaway TPM clone."""
    clone = Tpm.from_dict(sim.tpm.to_dict())
    clone.dynamic_reset(locality=LAUNCH_LOCALITY)
    clone.pcr_extend(LAUNCH_PCR, genuine_image().measure(), locality=LAUNCH_LOCALITY)
    try:
        return SealedState.from_bytes(clone.unseal(clone.nvram_read(NV_STATE_INDEX)))
    except InuksukError:
        return None


def _leaks(secret: bytes, blobs: list[bytes], texts: list[str]) -> bool:
    if not secret:
        return False
    if any(secret in b for b in blobs):
        return True
    forms = {secret.hex(), secret.hex().upper()}
    try:
        forms.add(secret.decode())
    except UnicodeDecodeError:
        pass
    return any(f in t for t in texts for f in forms)


# ---------------------------------------------------------------- adversary

class Adversary:
    def __init__(self, sim: Simulation, rng: random.Random):
        self.host = sim.host
        self.sed = sim.sed
        self.tpm = sim.host.tpm
        self.tee = sim.tee
        self._sim = sim
        self.rng = rng
        self.key = Ed25519PrivateKey.from_private_bytes(rng.randbytes(32))
        self.trace: list[str] = []
        self.screen: list[str] = []

    def note(self, *parts) -> None:
        self.trace.append("\t".join(str(p) for p in parts))

    def attempt(self, label, fn, *args, **kwargs):
        """Run ``fn``; log and return the error class name, or None on success."""
        try:
            fn(*args, **kwargs)
        except InuksukError as exc:
            self.note(label, "rejected", type(exc).__name__)
            return type(exc).__name__
        self.note(label, "accepted")
        return None

    def launch(self, image: ProgramImage, **args):
        """Late-launch an arbitrary image.  Returns (result or None, fault name)."""
        try:
            result = self.tee.late_launch(image, args)
        except ProgramFault as exc:
            self.host.remount()
            name = type(exc.__cause__).__name__
            self.note("launch", image.name, "fault", name)
            return exc.result, name
        self.host.remount()
        self.note("launch", image.name, "ok")
        return result, None

    def protected_range(self):
        r = next(r for r in self.sed.ranges.values() if r.write_lock_enabled)
        return r.start_lba, r.length

    def selection(self) -> list[str]:
        # The OS shows which originals are protected; the adversary reads that.
        pol = self.host.plaintext_policy()
        names = [e.name for e in self.host.list_originals() if e.name != "inuksuk.policy"]
        self.note("observe", "originals", len(names), "policy", pol is not None)
        return sorted(names)

    def pass_time(self, seconds: int):
        return self._sim.advance(seconds)


# ---------------------------------------------------------------- scenarios

def _direct_write(adv: Adversary, sim: Simulation, p: dict, facts: dict, signals: list) -> None:
    start, length = adv.protected_range()
    ss = adv.sed.sector_size
    rejected = accepted = 0
    for _ in range(int(p.get("writes", 200))):
        count = adv.rng.randint(1, 64)
        lba = adv.rng.randrange(start, start + length - count + 1)
        if adv.attempt("write", adv.sed.write_sectors, lba, adv.rng.randbytes(count * ss)):
            rejected += 1
        else:
            accepted += 1
    # A write that starts in the original partition and runs into the protected one.
    before_orig = adv.sed.digest(start - 8, 8)
    err = adv.attempt("straddle", adv.sed.write_sectors, start - 8, adv.rng.randbytes(16 * ss))
    facts["straddle_rejected"] = err == "WriteLocked"
    facts["straddle_left_original_intact"] = adv.sed.digest(start - 8, 8) == before_orig
    guesses = int(p.get("credential_guesses", 50))
    facts["guesses_accepted"] = sum(
        adv.attempt("guess", adv.sed.unlock_write, 1, adv.rng.randbytes(32)) is None
        for _ in range(guesses))
    facts["admin_accepted"] = sum(x is None for x in (
        adv.attempt("admin", adv.sed.take_ownership, adv.sed.msid, adv.rng.randbytes(32)),
        adv.attempt("admin", adv.sed.configure_range, adv.sed.msid, 0, 1, True, False,
                    adv.rng.randbytes(32)),
    ))
    adv.sed.power_cycle()
    adv.note("power_cycle")
    err = adv.attempt("write", adv.sed.write_sectors, start, adv.rng.randbytes(ss))
    rejected += err is not None
    accepted += err is None
    facts["protected_writes_attempted"] = rejected + accepted
    facts["protected_writes_accepted"] = accepted


def _credential_theft(adv: Adversary, sim: Simulation, p: dict, facts: dict, signals: list) -> None:
    facts["host_nvram_read"] = adv.attempt("nvram_read", adv.tpm.nvram_read, NV_STATE_INDEX)
    # Forge the genuine launch value from host locality: both paths are refused.
    facts["host_pcr_extend"] = adv.attempt(
        "pcr_extend", adv.tpm.pcr_extend, LAUNCH_PCR, hashlib.sha256(GENUINE_CODE).digest())
    facts["host_dynamic_reset"] = adv.attempt("dynamic_reset", adv.tpm.dynamic_reset)
    sim.reboot()
    adv.note("reboot")
    facts["after_reboot_nvram_read"] = adv.attempt("nvram_read", adv.tpm.nvram_read, NV_STATE_INDEX)

    def dumper(session):
        return session.tpm.unseal(session.tpm.nvram_read(NV_STATE_INDEX))

    result, fault = adv.launch(ProgramImage("dumper", b"credential-dumper\n", dumper))
    facts["dumper_fault"] = fault
    if fault is not None:
        signals.append("unseal_failed")


def _tampered_image(code_suffix: bytes) -> ProgramImage:
    def entry(session, **kw):
        # Same logic as the genuine updater, different bytes: measurement differs.
        return genuine_commit(session, kw.get("now", 0), kw.get("token"))
    return ProgramImage("inuksuk-updater", GENUINE_CODE + code_suffix, entry)


def _binary_tamper(adv: Adversary, sim: Simulation, p: dict, facts: dict, signals: list) -> None:
    genuine = adv.host.updater_image
    tampered = _tampered_image(b"# patched\n")
    adv.host.updater_image = tampered
    adv.note("install", "tampered updater")
    sids = []
    for _ in range(int(p.get("driver_runs", 2))):
        adv.host.request_commit()
        before = sim.tee.launches
        sim.step()
        if sim.tee.launches > before:
            sids.append(f"s{sim.tee.launches}")
    faults = [line.split("\t")[2] for line in sim.transcript if line.startswith("driver\tcommit-failed")]

    def brute(session, guesses):
        start, length = next((r.start_lba, r.length) for r in session.sed.ranges.values())
        hits = 0
        for _ in range(guesses):
            try:
                session.sed.unlock_write(1, adv.rng.randbytes(32))
                hits += 1
            except InuksukError:
                pass
        session.sed.write_sectors(start, bytes(session.sed.sector_size))
        return hits

    _res, fault = adv.launch(ProgramImage("brute", b"brute-forcer\n", brute),
                             guesses=int(p.get("guesses", 64)))
    sids.append(f"s{sim.tee.launches}")
    facts["tampered_launches"] = len(sids) - 1
    facts["tampered_fault"] = faults[-1] if faults else None
    facts["brute_fault"] = fault
    facts["unlocks_in_tampered_sessions"] = sum(
        1 for c in adv.sed.log if c.context in sids and c.verb == "unlock_write" and c.accepted)
    if facts["tampered_fault"] == "UnsealFailed":
        signals.append("unseal_failed")
    adv.host.updater_image = genuine
    try:
        rep = sim.commit()
        facts["genuine_commit_after_restore"] = bool(rep.avatar_shown)
    except ProgramFault:
        facts["genuine_commit_after_restore"] = False


def _forged_ui(adv: Adversary, sim: Simulation, p: dict, facts: dict, signals: list) -> None:
    # Best guess from everything the host can read: transcript avatar fields.
    guesses = [line.split("\t")[4] for line in sim.transcript
               if "\treport\t" in line and len(line.split("\t")) > 4]
    guess = guesses[-1] if guesses else "?"
    adv.note("observe", "avatar field", guess)
    adv.screen = [f"== {guess} ==", "Inuksuk: all files committed", "committed\t0 files"]
    truth = ground_truth(sim)
    avatar = truth.policy.avatar if truth else ""
    facts["forged_contains_avatar"] = bool(avatar) and any(avatar in l for l in adv.screen)
    if not facts["forged_contains_avatar"]:
        signals.append("avatar_absent")
    sim.console.screen.clear()
    sim.launch("banner")
    facts["genuine_shows_avatar"] = bool(avatar) and bool(sim.console.screen) \
        and avatar in sim.console.screen[0]


def _driver_kill(adv: Adversary, sim: Simulation, p: dict, facts: dict, signals: list) -> None:
    names = adv.selection()[: int(p.get("files", 3))]
    adv.host.driver_alive = False
    adv.note("kill", "driver")
    interval = sim.host.schedule.interval
    before_sessions = sim.tee.launches
    for name in names:
        adv.host.app_write(name, adv.rng.randbytes(4096))
    reports = adv.pass_time(interval * int(p.get("intervals", 3)))
    facts["commits_after_kill"] = len(reports) + (sim.tee.launches - before_sessions)
    if facts["commits_after_kill"] == 0:
        signals.append("avatar_absent")
    view = sim.recovery_view()
    stored = {d for (_b, _t, d) in view.triples()}
    facts["changes_unprotected"] = sum(
        hashlib.sha256(adv.host.read_original(n)).hexdigest() not in stored for n in names)
    if p.get("restart", True):
        adv.host.driver_alive = True
        reports = adv.pass_time(interval)
        facts["commits_after_restart"] = len(reports)


def _version_exhaustion(adv: Adversary, sim: Simulation, p: dict, facts: dict,
                        signals: list) -> None:
    pol = adv.host.plaintext_policy() or UpdatePolicy()
    target = p.get("target") or adv.selection()[0]
    rewrites = int(p.get("rewrites_per_cycle", 25))
    cycles = int(p.get("cycles") or pol.version_limit + 2)
    view = sim.recovery_view()
    before = {t for t in view.triples() if t[0] == target}
    first_flag = first_loss = None
    for cycle in range(1, cycles + 1):
        adv.host.app_autosave_storm(target, rewrites, data=adv.rng.randbytes(2048))
        for rep in adv.pass_time(sim.host.schedule.interval):
            if first_flag is None and any(n == target for n, _c in rep.anomalies):
                first_flag = cycle
        if first_loss is None and not before <= sim.recovery_view().triples():
            first_loss = cycle
    facts["cycles"] = cycles
    facts["first_anomaly_cycle"] = first_flag
    facts["first_history_loss_cycle"] = first_loss
    facts["flagged_before_loss"] = first_flag is not None and (first_loss is None
                                                                or first_flag < first_loss)
    facts["pre_attack_versions_auto_deleted"] = first_loss is not None


def _clock_attack(adv: Adversary, sim: Simulation, p: dict, facts: dict, signals: list) -> None:
    offset = int(p.get("offset", FIVE_YEARS))
    adv.host.clock_offset = offset
    adv.note("clock", "offset", offset)
    statuses = []
    deletions = []

    def run(token):
        res, fault = adv.launch(adv.host.updater_image, op="commit",
                                now=adv.host.system_time(), token=token)
        if res is not None and res.value is not None:
            statuses.append(res.value.time_status)
            deletions.extend(res.value.deletions)

    run(None)
    run(timeauth.issue(adv.key, adv.host.system_time(), adv.rng.randbytes(16)))
    if adv.host.last_token is not None:
        run(adv.host.last_token)
    facts["time_statuses"] = statuses
    facts["aged_deletions"] = sum(1 for _n, why in deletions if why == "aged")
    for s in ("BadSignature", "StaleToken"):
        if s in statuses:
            signals.append(f"time:{s}")
    adv.host.clock_offset = 0


def _persistent_ransomware(adv: Adversary, sim: Simulation, p: dict, facts: dict,
                           signals: list) -> None:
    names = adv.selection()
    key = adv.rng.randbytes(32)
    for name in names:
        data = adv.host.read_original(name)
        stream = hashlib.shake_256(key + name.encode()).digest(len(data))
        adv.host.app_write(name, bytes(a ^ b for a, b in zip(data, stream)))
    adv.note("encrypt", len(names))
    if p.get("tamper_policy", True):
        text = adv.host.fs.read_file("inuksuk.policy").decode()
        text = "\n".join("version_limit=1" if l.startswith("version_limit=") else l
                         for l in text.splitlines()) + "\n"
        adv.host.app_write("inuksuk.policy", text.encode())
    interval = sim.host.schedule.interval
    garbage = 0
    for rep in adv.pass_time(interval):
        garbage += len(rep.committed)
        signals.extend(f"policy_mismatch:{k}" for k in rep.policy_mismatch)
    for name in names:
        adv.host.app_delete(name)
    adv.note("delete", len(names))
    for rep in adv.pass_time(interval):
        signals.extend(f"policy_mismatch:{k}" for k in rep.policy_mismatch
                       if f"policy_mismatch:{k}" not in signals)
    facts["garbage_versions_added"] = garbage
    facts["files_encrypted"] = len(names)
    adv.screen = ["Your files are encrypted. Pay to recover."]


_RUNNERS = {
    "direct_write": _direct_write,
    "credential_theft": _credential_theft,
    "binary_tamper": _binary_tamper,
    "forged_ui": _forged_ui,
    "driver_kill": _driver_kill,
    "version_exhaustion": _version_exhaustion,
    "clock_attack": _clock_attack,
    "persistent_ransomware": _persistent_ransomware,
}


def world_for(scenario: AttackScenario, seed: int = 0) -> Simulation:
    """Build the provisioned machine a scenario's ``world`` parameters describe."""
    w = {"seed": seed, **scenario.parameters.get("world", {})}
    policy_kw = w.pop("policy", {})
    policy = UpdatePolicy(**{"commit_interval": 8 * 3600, "avatar": "blue heron at dawn",
                             **policy_kw})
    return demo_world(policy=policy, **w)


def run(scenario: AttackScenario, sim: Simulation | None = None) -> AttackOutcome:
    """Execute ``scenario`` against ``sim`` (a fresh demo machine if omitted)."""
    if sim is None:
        sim = world_for(scenario)
    if ground_truth(sim) is None:
        raise ValueError("the machine is not provisioned")
    p = scenario.parameters
    adv = Adversary(sim, random.Random(p.get("seed", 1)))
    before = sim.protected_digest()
    triples_before = sim.recovery_view().triples()
    log_start = len(sim.sed.log)
    report_start = len(sim.reports)
    facts: dict[str, Any] = {}
    signals: list[str] = []

    _RUNNERS[scenario.id](adv, sim, p, facts, signals)

    after = sim.protected_digest()
    triples_after = sim.recovery_view().triples()
    lost = sorted((b, ts) for (b, ts, _d) in triples_before - triples_after)
    legit = set()
    for rep in sim.reports[report_start:]:
        if rep.time_status.startswith("verified"):
            legit.update(n for n, _why in rep.deletions)
        for name, _count in rep.anomalies:
            tag = f"anomaly:{name}"
            if tag not in signals:
                signals.append(tag)

    def _removed_legitimately(base, ts):
        return any(n.startswith(f"{base}.{ts:012d}") for n in legit)

    facts["unexplained_loss"] = sum(not _removed_legitimately(b, ts) for b, ts in lost)
    facts["pre_attack_recoverable"] = (len(triples_before & triples_after) / len(triples_before)
                                       if triples_before else 1.0)
    start, length = adv.protected_range()
    facts["host_protected_writes_accepted"] = sum(
        1 for c in sim.sed.log[log_start:]
        if c.verb == "write_sectors" and c.accepted and c.context == "host"
        and c.lba < start + length and c.lba + c.count > start)
    facts["range_write_locked"] = all(r.write_locked for r in sim.sed.ranges.values()
                                      if r.write_lock_enabled)

    truth = ground_truth(sim)
    blobs = [sim.sed.read_sectors(0, sim.sed.sector_count),
             json.dumps(sim.sed.metadata()).encode()]
    texts = list(adv.trace) + list(sim.transcript) + list(adv.screen)
    facts["credential_exposed"] = _leaks(truth.sed_credential if truth else b"", blobs, texts)
    avatar = truth.policy.avatar.encode() if truth else b""
    facts["avatar_exposed"] = _leaks(avatar, blobs, texts)

    outcome = AttackOutcome(scenario.id, before, after, lost, signals, facts)
    sim.transcript.append(f"attack\t{scenario.id}\t"
                          + json.dumps(outcome.observed(), sort_keys=True, default=str))
    return outcome
