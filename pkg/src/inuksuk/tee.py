"""Exclusive late-launch environment.

``late_launch`` measures a program image into the launch PCR, suspends the
host world, runs the program with the only handles to the drive, the TPM
and the user console, then relocks the drive, caps the launch PCR and
resumes the host.
"""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

from .errors import ProgramFault, SessionActive
from .tpm import LAUNCH_LOCALITY, LAUNCH_PCR, MLE_LOCALITY, TpmHandle

DEFAULT_TRANSITION_COST = 3
# Extended into the launch PCR on exit so the session's value never outlives it.
EXIT_CAP = hashlib.sha256(b"late-launch exit").digest()


class SimClock:
    """Simulated seconds.  Never reads the wall clock."""

    def __init__(self, now: int = 0):
        self.now = int(now)

    def advance(self, seconds: int) -> int:
        if seconds < 0:
            raise ValueError("the clock only moves forward")
        self.now += int(seconds)
        return self.now

    def set(self, now: int) -> int:
        if now < self.now:
            raise ValueError(f"cannot move the clock back from {self.now} to {now}")
        self.now = int(now)
        return self.now


@dataclass(frozen=True)
class Event:
    seq: int
    tick: int
    actor: str
    kind: str
    detail: str = ""


class EventLog:
    """Totally ordered interleaving log of host and session events."""

    def __init__(self):
        self.events: list[Event] = []

    def record(self, tick: int, actor: str, kind: str, detail: str = "") -> Event:
        ev = Event(len(self.events), tick, actor, kind, detail)
        self.events.append(ev)
        return ev

    def session_windows(self) -> list[tuple[int, int]]:
        """``(start_seq, end_seq)`` for every session in the log."""
        starts, out = {}, []
        for ev in self.events:
            if ev.kind == "session_start":
                starts[ev.detail] = ev.seq
            elif ev.kind == "session_end":
                out.append((starts.pop(ev.detail), ev.seq))
        return out


class Console:
    """The physical keyboard and screen.  Only the runtime hands it to programs.

    Input is a queue of key tokens; a scripted test or the terminal front end
    feeds it.  ``screen`` accumulates every line shown to the user.
    """

    def __init__(self, keys: Iterable[str] = ()):
        self._keys: deque[str] = deque(keys)
        self.screen: list[str] = []
        self.reader: Callable[[], str | None] | None = None
        self.on_write: Callable[[str], None] | None = None

    def feed(self, keys: Iterable[str]) -> None:
        self._keys.extend(keys)

    def write(self, line: str) -> None:
        self.screen.append(line)
        if self.on_write is not None:
            self.on_write(line)

    def read_key(self) -> str | None:
        if self._keys:
            return self._keys.popleft()
        if self.reader is not None:
            return self.reader()
        return None


class UiChannel:
    """A session's view of the console, recording what this session displayed."""

    def __init__(self, console: Console):
        self._console = console
        self.lines: list[str] = []

    def write(self, line: str = "") -> None:
        self.lines.append(line)
        self._console.write(line)

    def read_key(self) -> str | None:
        return self._console.read_key()


@dataclass(frozen=True)
class ProgramImage:
    name: str
    code: bytes
    entry: Callable[..., Any]

    def measure(self) -> bytes:
        return hashlib.sha256(self.code).digest()


@dataclass
class TeeSession:
    session_id: str
    measured_digest: bytes
    sed: Any
    tpm: TpmHandle
    ui: UiChannel
    clock: SimClock
    start_tick: int
    end_tick: int | None = None


@dataclass
class SessionResult:
    session_id: str
    measured_digest: bytes
    value: Any
    ui_lines: list[str] = field(default_factory=list)
    start_tick: int = 0
    end_tick: int = 0
    fault: BaseException | None = None


class TeeRuntime:
    def __init__(self, sed, tpm, clock: SimClock, events: EventLog | None = None,
                 console: Console | None = None, transition_cost: int = DEFAULT_TRANSITION_COST,
                 transcript: list[str] | None = None):
        if not 2 <= transition_cost <= 4:
            raise ValueError("transition cost is between 2 and 4 seconds")
        self.sed = sed
        self.tpm = tpm
        self.clock = clock
        self.events = events if events is not None else EventLog()
        self.console = console if console is not None else Console()
        self._cost = int(transition_cost)
        self.active: TeeSession | None = None
        self.launches = 0
        self.transcript = transcript if transcript is not None else []

    def transition_cost(self) -> int:
        return self._cost

    def late_launch(self, image: ProgramImage, args: dict | None = None) -> SessionResult:
        if self.active is not None:
            raise SessionActive(f"session {self.active.session_id} is running")
        self.launches += 1
        sid = f"s{self.launches}"
        start = self.clock.now
        self.events.record(start, "tee", "session_start", sid)
        self.clock.advance(self._cost)
        digest = image.measure()
        self.tpm.dynamic_reset(locality=LAUNCH_LOCALITY)
        self.tpm.pcr_extend(LAUNCH_PCR, digest, locality=LAUNCH_LOCALITY)
        session = TeeSession(sid, digest, self.sed, TpmHandle(self.tpm, MLE_LOCALITY),
                             UiChannel(self.console), self.clock, start)
        self.active = session
        prev_context = self.sed.context
        self.sed.context = sid
        value, fault = None, None
        try:
            value = image.entry(session, **(args or {}))
        except Exception as exc:  # noqa: BLE001 - any program failure is a fault
            fault = exc
        finally:
            # Epilogue: fail closed regardless of what the program did.
            self.sed.relock_all()
            self.tpm.pcr_extend(LAUNCH_PCR, EXIT_CAP, locality=LAUNCH_LOCALITY)
            self.sed.context = prev_context
            session.end_tick = self.clock.now
            self.active = None
            self.events.record(session.end_tick, "tee", "session_end", sid)
        status = "ok" if fault is None else f"fault:{type(fault).__name__}"
        self.transcript.append(f"session\t{sid}\t{image.name}\t{digest.hex()}\t"
                               f"{start}\t{session.end_tick}\t{status}")
        result = SessionResult(sid, digest, value, session.ui.lines, start, session.end_tick, fault)
        if fault is not None:
            raise ProgramFault(f"{image.name} faulted: {type(fault).__name__}: {fault}",
                               result) from fault
        return result
