import hashlib
import io
import json

import pytest

from inuksuk import state
from inuksuk.adversary import canned_scenarios, ground_truth
from inuksuk.cli import main

POLICY = ("commit_interval=28800\nmax_file_size=1000000\nversion_limit=50\n"
          "age_threshold=31536000\nanomaly_version_threshold=100\navatar=red kite\n")


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "pol.txt").write_text(POLICY)
    for i in range(3):
        (tmp_path / f"f{i}.bin").write_bytes(bytes([i + 1]) * (4000 + i))
    return tmp_path


def cli(*argv):
    return main(["--state", "st", *argv])


def provision(now=100):
    return cli("--now", str(now), "provision", "f0.bin", "f1.bin", "f2.bin", "--policy", "pol.txt")


def test_provision_reports_three_commits(work, capsys):
    assert provision() == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "== red kite =="
    assert out.count("committed\t") == 3
    assert state.exists(work / "st")


def test_second_provision_fails(work, capsys):
    provision()
    assert provision() == 1
    assert "AlreadyProvisioned" in capsys.readouterr().err


def test_missing_policy_key_is_usage_error(work, capsys):
    (work / "bad.txt").write_text(POLICY.replace("version_limit=50\n", ""))
    with pytest.raises(SystemExit) as info:
        cli("provision", "f0.bin", "--policy", "bad.txt")
    assert info.value.code == 2
    assert "version_limit" in capsys.readouterr().err


def test_commit_banner_first_and_transcript_grows(work, capsys):
    provision()
    (work / "wl.txt").write_text("write f0.bin 2000\nstorm f1.bin 3\n")
    assert cli("workload", "wl.txt") == 0
    before = (work / "st" / "transcript.log").read_text().count("\nsession\t")
    capsys.readouterr()
    assert cli("commit", "--advance", "60") == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "== red kite =="
    assert sum(l.startswith("committed\t") for l in out) == 2
    after = (work / "st" / "transcript.log").read_text().count("\nsession\t")
    assert after == before + 1


def test_commit_with_nothing_changed(work, capsys):
    provision()
    capsys.readouterr()
    cli("commit")
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "== red kite ==" and "committed: 0" in out


def test_browse_delete_scripted(work, capsys):
    provision()
    assert cli("browse-delete", "--keys", "toggle,toggle,confirm") == 0
    assert "deleted: 2" in capsys.readouterr().out


def test_browse_delete_abort_and_stdin(work, capsys, monkeypatch):
    provision()
    monkeypatch.setattr("sys.stdin", io.StringIO("abort\n"))
    assert cli("browse-delete") == 0
    assert "no files deleted" in capsys.readouterr().out
    sim = state.load(work / "st")
    assert len(sim.recovery_view().list(True)) == 3


def test_group_select_deletes_all(work, capsys):
    provision()
    assert cli("browse-delete", "--keys", "g j j g confirm") == 0
    assert "deleted: 3" in capsys.readouterr().out


def test_attack_exit_codes(work, capsys):
    assert cli("attack", "direct_write") == 0
    sc = canned_scenarios()[0]
    sc.expected_outcome["guesses_accepted"] = 3
    (work / "bad.json").write_text(sc.to_json())
    assert cli("attack", "bad.json") == 1
    assert "diff: guesses_accepted" in capsys.readouterr().out


def test_all_canned_attacks_exit_zero(work):
    codes = [main(["--state", f"s-{s.id}", "attack", s.id]) for s in canned_scenarios()]
    assert codes == [0] * 8


def test_recover_after_ransomware(work, capsys):
    assert cli("attack", "persistent_ransomware", "--persist") == 0
    sim = state.load(work / "st")
    attack_lines = [l for l in sim.transcript if l.startswith("attack\t")]
    assert attack_lines[-1].endswith("verdict\tmatch")
    assert cli("recover", "out") == 0
    exported = {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in (work / "out").iterdir()}
    assert cli("recover", "out") == 0
    again = {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in (work / "out").iterdir()}
    assert exported == again
    assert len(exported) == 30


def test_no_command_prints_credential(work, capsys):
    provision()
    cli("commit")
    cli("report")
    cli("recover", "out")
    cli("attack", "credential_theft")
    out = capsys.readouterr()
    cred = ground_truth(state.load(work / "st")).sed_credential
    text = out.out + out.err + (work / "st" / "state.json").read_text()
    assert cred.hex() not in text and cred.hex().upper() not in text


def test_advance_time_fires_schedule(work, capsys):
    provision()
    (work / "wl.txt").write_text("write f0.bin 100\n")
    cli("workload", "wl.txt")
    capsys.readouterr()
    assert cli("advance-time", str(8 * 3600)) == 0
    assert "scheduled commits: 1" in capsys.readouterr().out


def test_deterministic_given_seed(work):
    for d in ("a", "b"):
        main(["--state", d, "--seed", "3", "--now", "50", "provision", "f0.bin",
              "--policy", "pol.txt"])
        main(["--state", d, "commit", "--advance", "10"])
    assert state.digest(work / "a") == state.digest(work / "b")


def test_report_summary(work, capsys):
    provision()
    capsys.readouterr()
    assert cli("report") == 0
    out = capsys.readouterr().out
    assert "write-locked" in out and "protected\t3 live\t0 history" in out
    assert "seed=0" in out


def test_clock_cannot_go_back(work, capsys):
    provision(now=500)
    with pytest.raises(SystemExit):
        cli("--now", "10", "commit")
