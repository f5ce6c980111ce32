"""Operator command line over a persisted simulated machine.

Every verb loads the state directory named by ``--state``, acts, and saves
it back.  Lines the trusted session shows on the console are printed to
stdout as they appear; that stream stands for the physical screen.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import random
import re
import sys

from . import state as state_io
from .adversary import (
    SCENARIO_IDS,
    AttackScenario,
    canned_scenarios,
    ground_truth,
    run as run_attack,
    world_for,
)
from .errors import InuksukError, PolicyError, ProgramFault
from .host import RecoveryView
from .updater import UpdatePolicy
from .world import Simulation

DEFAULT_STATE = "inuksuk-state"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers

def _load(args) -> Simulation:
    if not state_io.exists(args.state):
        raise UsageError(f"no simulator state at {args.state}; run 'provision' first")
    sim = state_io.load(args.state)
    _attach_console(sim)
    if args.now is not None:
        _set_clock(sim, args.now)
    return sim


def _set_clock(sim: Simulation, now: int) -> None:
    if now < sim.clock.now:
        raise UsageError(f"--now {now} is before the simulated clock ({sim.clock.now})")
    sim.clock.set(now)


def _attach_console(sim: Simulation) -> None:
    sim.console.on_write = lambda line: print(line, flush=True)


def _record(sim: Simulation, args, verb: str) -> None:
    sim.transcript.append(f"cli\t{verb}\tseed={args.seed}\tnow={sim.clock.now}")


def _save(sim: Simulation, args) -> None:
    state_io.save(sim, args.state)


def _read_policy(path) -> UpdatePolicy:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read policy file: {exc}") from None
    try:
        return UpdatePolicy.from_text(text)
    except PolicyError as exc:
        if exc.missing:
            raise UsageError("policy file is missing key(s): " + ", ".join(exc.missing)) from None
        raise UsageError(f"bad policy file: {exc}") from None


def _print_fault(exc: ProgramFault) -> None:
    cause = exc.__cause__
    print(f"session failed: {type(cause).__name__}: {cause}", file=sys.stderr)


def _split_keys(text: str) -> list[str]:
    return [t for t in re.split(r"[,\s]+", text) if t]


def _tty_reader():
    """Read single keys from the real terminal in raw mode."""
    import termios
    import tty

    fd = sys.stdin.fileno()

    def read() -> str | None:
        old = termios.tcgetattr(fd)
        try:
            tty.setraw(fd)
            ch = os.read(fd, 1).decode(errors="replace")
            if ch == "\x1b":
                ch += os.read(fd, 2).decode(errors="replace")
                if ch == "\x1b\x1b\x1b":
                    ch = "\x1b"
            elif ch == "\x03":
                ch = "q"
        finally:
            termios.tcsetattr(fd, termios.TCSADRAIN, old)
        return ch

    return read


def _file_bytes(sim: Simulation, name: str, content: str) -> bytes:
    """Content for a workload ``write``: a size, ``@path`` or ``text:...``."""
    if content.startswith("@"):
        with open(content[1:], "rb") as fh:
            return fh.read()
    if content.startswith("text:"):
        return content[5:].encode()
    seed = hashlib.sha256(f"{sim.seed}/{name}/{sim.clock.now}".encode()).digest()
    return random.Random(seed).randbytes(int(content))


# ---------------------------------------------------------------- verbs

def cmd_provision(args) -> int:
    policy = _read_policy(args.policy)
    if state_io.exists(args.state):
        sim = state_io.load(args.state)
        if ground_truth(sim) is not None or sim.sed.ranges:
            print("error: AlreadyProvisioned: this machine is already provisioned",
                  file=sys.stderr)
            return 1
        _attach_console(sim)
        if args.now is not None:
            _set_clock(sim, args.now)
    else:
        sim = Simulation(seed=args.seed, now=args.now or 0, original_mb=args.original_mb,
                         protected_mb=args.protected_mb)
        _attach_console(sim)
    files = {}
    for path in args.files:
        with open(path, "rb") as fh:
            files[os.path.basename(path)] = fh.read()
    _record(sim, args, "provision")
    try:
        report = sim.provision(files, policy)
    except ProgramFault as exc:
        _print_fault(exc)
        return 1
    _save(sim, args)
    print(f"provisioned: {len(report.committed)} file(s) committed")
    return 0


def cmd_commit(args) -> int:
    sim = _load(args)
    if args.advance:
        sim.clock.advance(args.advance)
    _record(sim, args, "commit")
    try:
        report = sim.commit(token=None if args.no_token else "auto")
    except ProgramFault as exc:
        _print_fault(exc)
        _save(sim, args)
        return 1
    _save(sim, args)
    print(f"committed: {len(report.committed)}")
    return 0


def cmd_browse_delete(args) -> int:
    sim = _load(args)
    if args.keys is not None:
        keys = _split_keys(args.keys)
    elif not sys.stdin.isatty():
        keys = _split_keys(sys.stdin.read())
    else:
        keys = []
        sim.console.reader = _tty_reader()
    _record(sim, args, "browse-delete")
    try:
        report = sim.browse_delete(keys)
    except ProgramFault as exc:
        cause = exc.__cause__
        _save(sim, args)
        if type(cause).__name__ == "Aborted":
            print(f"no files deleted ({cause})")
            return 0
        _print_fault(exc)
        return 1
    _save(sim, args)
    print(f"deleted: {len(report.deletions)}")
    return 0


def _scenario(arg: str) -> AttackScenario:
    if arg in SCENARIO_IDS and not os.path.exists(arg):
        return next(s for s in canned_scenarios() if s.id == arg)
    try:
        return AttackScenario.load(arg)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load scenario {arg}: {exc}") from None


def cmd_attack(args) -> int:
    scenario = _scenario(args.scenario)
    if state_io.exists(args.state):
        sim = _load(args)
        if ground_truth(sim) is None:
            raise UsageError("the machine in the state directory is not provisioned")
    else:
        # No machine yet: attack the scenario's own demo machine.
        sim = world_for(scenario, seed=args.seed)
        _attach_console(sim)
    _record(sim, args, f"attack {scenario.id}")
    mark = len(sim.transcript)
    outcome = run_attack(scenario, sim)
    diff = outcome.compare(scenario.expected_outcome)
    print(outcome.to_json(), end="")
    verdict = "match" if not diff else "MISMATCH"
    sim.transcript.append(f"attack\t{scenario.id}\tverdict\t{verdict}")
    for line in diff:
        print(f"diff: {line}")
    print(f"outcome: {verdict}")
    if args.persist:
        _save(sim, args)
    elif state_io.exists(args.state):
        # The machine is left as it was; only the trace records the run.
        with open(os.path.join(args.state, state_io.TRANSCRIPT_FILE), "a") as fh:
            fh.writelines(line + "\n" for line in sim.transcript[mark:]
                          if line.startswith("attack\t"))
    return 0 if not diff else 1


def cmd_recover(args) -> int:
    sim = _load(args)
    view = RecoveryView.from_drive(sim.sed)
    names = view.export(args.out_dir)
    for name in names:
        print(name)
    print(f"recovered: {len(names)} file(s) into {args.out_dir}")
    return 0


def cmd_report(args) -> int:
    sim = _load(args)
    lines = sim.transcript[-args.tail:] if args.tail else sim.transcript
    for line in lines:
        print(line)
    view = None
    try:
        view = RecoveryView.from_drive(sim.sed)
    except InuksukError:
        pass
    print(f"clock\t{sim.clock.now}")
    print(f"sessions\t{sim.tee.launches}")
    print(f"driver\t{'alive' if sim.host.driver_alive else 'stopped'}")
    for r in sorted(sim.sed.ranges.values(), key=lambda r: r.range_id):
        print(f"range\t{r.range_id}\t{r.start_lba}\t{r.length}\t"
              f"{'write-locked' if r.write_locked else 'WRITABLE'}")
    if view is not None:
        entries = view.list(True)
        print(f"protected\t{sum(not e.hidden for e in entries)} live\t"
              f"{sum(e.hidden for e in entries)} history")
    return 0


def cmd_advance_time(args) -> int:
    sim = _load(args)
    _record(sim, args, f"advance-time {args.seconds}")
    reports = sim.advance(args.seconds, args.step)
    _save(sim, args)
    print(f"clock: {sim.clock.now}; scheduled commits: {len(reports)}")
    return 0


def cmd_workload(args) -> int:
    sim = _load(args)
    _record(sim, args, "workload")
    with open(args.script) as fh:
        script = fh.read().splitlines()
    for lineno, raw in enumerate(script, 1):
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        verb, rest = parts[0], parts[1:]
        try:
            if verb == "write" and len(rest) == 2:
                sim.host.app_write(rest[0], _file_bytes(sim, rest[0], rest[1]))
            elif verb == "storm" and len(rest) == 2:
                sim.host.app_autosave_storm(rest[0], int(rest[1]))
            elif verb == "delete" and len(rest) == 1:
                sim.host.app_delete(rest[0])
            elif verb == "advance-time" and len(rest) == 1:
                sim.advance(int(rest[0]))
            elif verb == "trigger" and not rest:
                sim.host.request_commit()
                sim.step()
            else:
                raise UsageError(f"{args.script}:{lineno}: cannot parse {raw!r}")
        except (InuksukError, ValueError) as exc:
            raise UsageError(f"{args.script}:{lineno}: {type(exc).__name__}: {exc}") from None
    _save(sim, args)
    print(f"workload: {len(script)} line(s) applied; clock {sim.clock.now}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="inuksuk", description=__doc__.splitlines()[0])
    p.add_argument("--state", default=DEFAULT_STATE, help="state directory")
    p.add_argument("--seed", type=int, default=0, help="seed for a new machine")
    p.add_argument("--now", type=int, default=None, help="set the simulated clock first")
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("provision", help="set up protection for files")
    s.add_argument("files", nargs="+")
    s.add_argument("--policy", required=True, help="key=value policy file")
    s.add_argument("--original-mb", type=float, default=16)
    s.add_argument("--protected-mb", type=float, default=48)
    s.set_defaults(fn=cmd_provision)

    s = sub.add_parser("commit", help="run one commit session now")
    s.add_argument("--advance", type=int, default=0, help="seconds to advance first")
    s.add_argument("--no-token", action="store_true", help="withhold the signed time token")
    s.set_defaults(fn=cmd_commit)

    s = sub.add_parser("browse-delete", help="pick protected files to delete")
    s.add_argument("--keys", help="scripted keys, e.g. 'toggle,toggle,confirm'")
    s.set_defaults(fn=cmd_browse_delete)

    s = sub.add_parser("attack", help="run an attack scenario")
    s.add_argument("scenario", help="scenario JSON file or a canned scenario id")
    s.add_argument("--persist", action="store_true", help="save the attacked machine")
    s.set_defaults(fn=cmd_attack)

    s = sub.add_parser("recover", help="export the protected partition read-only")
    s.add_argument("out_dir")
    s.set_defaults(fn=cmd_recover)

    s = sub.add_parser("report", help="print the transcript and a status summary")
    s.add_argument("--tail", type=int, default=0)
    s.set_defaults(fn=cmd_report)

    s = sub.add_parser("advance-time", help="let simulated time pass")
    s.add_argument("seconds", type=int)
    s.add_argument("--step", type=int, default=None)
    s.set_defaults(fn=cmd_advance_time)

    s = sub.add_parser("workload", help="apply a host workload script")
    s.add_argument("script")
    s.set_defaults(fn=cmd_workload)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as exc:
        parser.error(str(exc))
    except InuksukError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
