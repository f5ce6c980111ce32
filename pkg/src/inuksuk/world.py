"""Wiring of drive, TPM, late-launch runtime, host and time authority.

A :class:`Simulation` is one machine.  It advances only through explicit
calls; nothing reads the wall clock and every random choice comes from
generators derived from ``seed``.
"""

from __future__ import annotations

import random

from .errors import ProgramFault
from .host import HostWorld, RecoveryView
from .sed import SedDevice
from .tee import Console, EventLog, SessionResult, SimClock, TeeRuntime
from .timeauth import TimeAuthority
from .tpm import Tpm
from .updater import Layout, UpdatePolicy, UpdateReport

MB = 1 << 20


def _sub_rng(rng: random.Random) -> random.Random:
    return random.Random(rng.getrandbits(64))


class Simulation:
    def __init__(self, *, seed: int = 0, original_mb: float = 16, protected_mb: float = 48,
                 now: int = 0, transition_cost: int = 3, sector_size: int = 512,
                 _restore: dict | None = None):
        self.seed = seed
        # A restored machine continues from a generator derived from where it stopped.
        self.rng = random.Random(seed if _restore is None else _restore["rng_seed"])
        self.clock = SimClock(now)
        self.events = EventLog()
        self.transcript: list[str] = []
        orig = int(original_mb * MB) // sector_size
        prot = int(protected_mb * MB) // sector_size
        self.layout = Layout(0, orig, orig, prot)
        if _restore is None:
            self.sed = SedDevice(orig + prot, sector_size=sector_size, psid=self.rng.randbytes(16))
            self.tpm = Tpm(rng=_sub_rng(self.rng))
            self.authority_seed = self.rng.randbytes(32)
        else:
            self.sed = _restore["sed"]
            self.tpm = _restore["tpm"]
            self.authority_seed = _restore["authority_seed"]
            self.layout = _restore["layout"]
        self.authority = TimeAuthority.from_seed(self.authority_seed, rng=_sub_rng(self.rng))
        self.console = Console()
        self.tee = TeeRuntime(self.sed, self.tpm, self.clock, self.events, self.console,
                              transition_cost, self.transcript)
        self.host = HostWorld(self.sed, self.tpm, self.clock, self.tee, self.events, self.layout,
                              format_originals=_restore is None)
        self.reports: list[UpdateReport] = []

    # ------------------------------------------------------------ launching

    def launch(self, op: str, **kwargs) -> SessionResult:
        """Late-launch the updater binary currently installed on the host."""
        try:
            result = self.tee.late_launch(self.host.updater_image, dict(op=op, **kwargs))
        except ProgramFault:
            self.host.remount()
            raise
        self.host.remount()
        if isinstance(result.value, UpdateReport):
            self.reports.append(result.value)
            for line in result.value.to_lines():
                self.transcript.append(f"{result.session_id}\t{line}")
        return result

    def provision(self, files: dict[str, bytes] | None = None, policy: UpdatePolicy | None = None,
                  selection=None) -> UpdateReport:
        policy = policy or UpdatePolicy(avatar="inuksuk")
        for name, data in (files or {}).items():
            self.host.app_write(name, data)
        if selection is None:
            selection = list(files or {})
        result = self.launch("provision", selection=list(selection), policy=policy,
                             layout=self.layout, ntp_public_key=self.authority.public_key,
                             now=self.clock.now)
        self.host.schedule.interval = policy.commit_interval
        self.host.schedule.next_fire = self.clock.now + policy.commit_interval
        return result.value

    def fresh_token(self):
        token = self.authority.issue(self.clock.now)
        # Signed time reaches the updater through the untrusted OS.
        self.host.last_token = token
        return token

    def commit(self, token="auto") -> UpdateReport:
        if token == "auto":
            token = self.fresh_token()
        return self.launch("commit", now=self.host.system_time(), token=token).value

    def browse_delete(self, keys=None) -> UpdateReport:
        if keys is not None:
            self.console.feed(keys)
        return self.launch("browse_delete", now=self.host.system_time()).value

    def auto_delete(self, token="auto") -> UpdateReport:
        if token == "auto":
            token = self.fresh_token()
        return self.launch("auto_delete", now=self.host.system_time(), token=token).value

    # ------------------------------------------------------------ time

    def step(self) -> UpdateReport | None:
        """Let the driver poll its schedule once; commit if it fires."""
        trigger = self.host.tick(self.clock.now)
        if trigger is None:
            return None
        try:
            return self.commit()
        except ProgramFault as exc:
            self.transcript.append(f"driver\tcommit-failed\t{type(exc.__cause__).__name__}")
            return None

    def advance(self, seconds: int, step: int | None = None) -> list[UpdateReport]:
        """Move time forward, polling the schedule every ``step`` seconds."""
        reports = []
        target = self.clock.now + int(seconds)
        step = step or max(1, self.host.schedule.interval or seconds or 1)
        while self.clock.now < target:
            self.clock.set(min(target, self.clock.now + step))
            rep = self.step()
            if rep is not None:
                reports.append(rep)
        return reports

    def reboot(self) -> None:
        self.sed.power_cycle()
        self.tpm.reset_on_boot()

    def recovery_view(self) -> RecoveryView:
        return RecoveryView.from_drive(self.sed)

    def protected_digest(self) -> str:
        lay = self.layout
        return self.sed.digest(lay.protected_lba, lay.protected_sectors)


def demo_world(seed: int = 0, n_files: int = 6, file_size: int = 20_000, *,
               policy: UpdatePolicy | None = None, commits: int = 2, **kwargs) -> Simulation:
    """A provisioned machine with a little history, for scenarios and demos."""
    sim = Simulation(seed=seed, **kwargs)
    rng = random.Random(seed ^ 0x5EED)
    files = {f"doc{i:02d}.txt": rng.randbytes(file_size + rng.randrange(file_size))
             for i in range(n_files)}
    policy = policy or UpdatePolicy(commit_interval=8 * 3600, avatar="blue heron at dawn")
    sim.clock.set(sim.clock.now + 3600)
    sim.provision(files, policy)
    for c in range(commits):
        sim.clock.advance(600)
        for name in sorted(files)[: max(1, n_files // 2)]:
            sim.host.app_write(name, rng.randbytes(file_size))
        sim.clock.advance(policy.commit_interval)
        sim.commit()
    return sim
