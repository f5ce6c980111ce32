import hashlib

import pytest

from inuksuk.errors import ProgramFault, SessionActive, WorldSuspended
from inuksuk.sed import SedDevice
from inuksuk.tee import EXIT_CAP, Console, EventLog, ProgramImage, SimClock, TeeRuntime
from inuksuk.tpm import LAUNCH_PCR, Tpm

from oracles import pcr_chain

K = b"k" * 32


@pytest.fixture
def rt():
    sed = SedDevice(256)
    sed.configure_range(bytes(32), 100, 50, True, False, K)
    return TeeRuntime(sed, Tpm(root_secret=b"r" * 32), SimClock(10), EventLog(), Console())


def test_measurement_and_exit_cap(rt):
    seen = {}

    def entry(session):
        seen["pcr"] = session.tpm.pcr_read(LAUNCH_PCR)
        return "done"

    img = ProgramImage("p", b"program bytes", entry)
    res = rt.late_launch(img)
    m = hashlib.sha256(b"program bytes").digest()
    assert res.value == "done" and res.measured_digest == m
    assert seen["pcr"] == pcr_chain([m])
    assert rt.tpm.pcr_read(LAUNCH_PCR) == pcr_chain([m, EXIT_CAP])


def test_transition_cost_charged(rt):
    res = rt.late_launch(ProgramImage("p", b"x", lambda s: None))
    assert res.end_tick - res.start_tick == rt.transition_cost() == 3
    with pytest.raises(ValueError):
        TeeRuntime(rt.sed, rt.tpm, SimClock(), transition_cost=5)


def test_epilogue_relocks_after_fault(rt):
    def entry(session):
        session.sed.unlock_write(1, K)
        session.sed.write_sectors(100, b"\x01" * 512)
        raise RuntimeError("boom")

    with pytest.raises(ProgramFault) as info:
        rt.late_launch(ProgramImage("bad", b"bad", entry))
    assert isinstance(info.value.__cause__, RuntimeError)
    assert info.value.result.fault is not None
    assert rt.sed.ranges[1].write_locked
    assert rt.active is None
    assert rt.transcript[-1].endswith("fault:RuntimeError")


def test_no_nested_sessions(rt):
    def entry(session):
        rt.late_launch(ProgramImage("inner", b"i", lambda s: None))

    with pytest.raises(ProgramFault) as info:
        rt.late_launch(ProgramImage("outer", b"o", entry))
    assert isinstance(info.value.__cause__, SessionActive)


def test_sed_log_context_is_session(rt):
    rt.late_launch(ProgramImage("p", b"x", lambda s: s.sed.read_sectors(0, 1)))
    reads = [c for c in rt.sed.log if c.verb == "read_sectors"]
    assert reads[-1].context == "s1"
    assert rt.sed.context == "host"


def test_ui_channel_goes_to_console(rt):
    rt.console.feed(["j"])

    def entry(session):
        session.ui.write("hello")
        return session.ui.read_key()

    res = rt.late_launch(ProgramImage("p", b"x", entry))
    assert res.value == "j" and res.ui_lines == ["hello"]
    assert rt.console.screen == ["hello"]


def test_host_is_suspended_during_session():
    from inuksuk.world import Simulation

    sim = Simulation(seed=1, original_mb=1, protected_mb=2)

    sim.host.request_commit()
    ticks = []

    def entry(session):
        ticks.append(sim.host.tick())
        sim.host.app_write("x", b"1")

    with pytest.raises(ProgramFault) as info:
        sim.tee.late_launch(ProgramImage("p", b"x", entry))
    assert isinstance(info.value.__cause__, WorldSuspended)
    # The scheduler defers: the pending trigger fires only after the session.
    assert ticks == [None]
    assert sim.host.tick() is not None


def test_event_windows(rt):
    rt.events.record(rt.clock.now, "host", "write")
    rt.late_launch(ProgramImage("p", b"x", lambda s: None))
    rt.events.record(rt.clock.now, "host", "write")
    (start, end), = rt.events.session_windows()
    inside = [e for e in rt.events.events if start < e.seq < end]
    assert inside == []


def test_clock_is_monotonic():
    c = SimClock(5)
    with pytest.raises(ValueError):
        c.set(4)
    with pytest.raises(ValueError):
        c.advance(-1)
