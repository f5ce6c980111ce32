from inuksuk import state
from inuksuk.world import demo_world


def test_load_save_is_bit_exact(tmp_path):
    sim = demo_world(seed=5)
    state.save(sim, tmp_path / "a")
    d1 = state.digest(tmp_path / "a")
    again = state.load(tmp_path / "a")
    state.save(again, tmp_path / "a")
    assert state.digest(tmp_path / "a") == d1


def test_same_seed_same_state(tmp_path):
    state.save(demo_world(seed=8), tmp_path / "a")
    state.save(demo_world(seed=8), tmp_path / "b")
    assert state.digest(tmp_path / "a") == state.digest(tmp_path / "b")


def test_restored_machine_keeps_working(tmp_path):
    sim = demo_world(seed=5)
    state.save(sim, tmp_path / "s")
    back = state.load(tmp_path / "s")
    assert back.transcript == sim.transcript
    for m in (sim, back):
        m.host.app_write("doc00.txt", b"after reload")
        m.clock.advance(60)
        rep = m.commit()
        assert [c[0] for c in rep.committed] == ["doc00.txt"]
    assert back.protected_digest() == sim.protected_digest()


def test_tampered_binary_persists(tmp_path):
    from inuksuk.tee import ProgramImage
    from inuksuk.updater import GENUINE_CODE, updater_main

    sim = demo_world(seed=5)
    sim.host.updater_image = ProgramImage("inuksuk-updater", GENUINE_CODE + b"!", updater_main)
    state.save(sim, tmp_path / "s")
    back = state.load(tmp_path / "s")
    assert back.host.updater_image.code == GENUINE_CODE + b"!"
