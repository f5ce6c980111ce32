import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from inuksuk.errors import CorruptFs, Exists, NoSpace, NotFound, TooSmall
from inuksuk.sed import SedDevice
from inuksuk.vaultfs import MAX_REQUEST_SECTORS, FsImage

from oracles import cursor_probes, mark_and_sweep, naive_probes


def make(num_clusters=64, cluster_size=1024, dir_slots=16):
    need = FsImage.required_sectors(num_clusters, cluster_size, dir_slots)
    dev = SedDevice(need + 10)
    fs = FsImage.format(dev, 10, need, num_clusters, cluster_size, dir_slots)
    return dev, fs


def test_create_read_round_trip():
    _, fs = make()
    data = bytes(range(256)) * 10
    fs.create_write("a.txt", data, 5)
    assert fs.read_file("a.txt") == data
    e = fs.stat("a.txt")
    assert (e.size, e.created, e.modified) == (len(data), 5, 5)


def test_empty_file():
    _, fs = make()
    fs.create_write("empty", b"", 1)
    assert fs.read_file("empty") == b""


def test_too_small_region():
    dev = SedDevice(100)
    with pytest.raises(TooSmall):
        FsImage.format(dev, 0, 10, num_clusters=64, cluster_size=1024, dir_slots=16)


def test_exact_fit_then_no_space():
    _, fs = make(num_clusters=4)
    fs.create_write("full", b"x" * 4096, 1)
    with pytest.raises(NoSpace):
        fs.create_write("more", b"y", 2)
    assert fs.free_clusters == 0


def test_exists_and_not_found():
    _, fs = make()
    fs.create_write("a", b"1", 1)
    with pytest.raises(Exists):
        fs.create_write("a", b"2", 1)
    with pytest.raises(NotFound):
        fs.read_file("b")


@pytest.mark.parametrize("bad", ["", "a/b", "a\\b", "x\x00", "t\tab", "n\nl", "r" * 256])
def test_bad_names(bad):
    _, fs = make()
    with pytest.raises(ValueError):
        fs.create_write(bad, b"1", 1)


def test_mount_sees_same_state():
    dev, fs = make()
    fs.create_write("a", b"alpha" * 500, 1)
    fs.create_write("b", b"beta", 2, hidden=True, generation=4, created=1)
    fs.rename("a", "c")
    again = FsImage.mount(dev, 10, fs.length)
    assert again.listing_text() == fs.listing_text()
    assert again.read_file("c") == b"alpha" * 500
    assert again.stat("b").generation == 4
    assert [e.name for e in again.list()] == ["c"]
    assert again.free_clusters == fs.free_clusters


def test_mount_rejects_garbage():
    dev = SedDevice(200)
    with pytest.raises(CorruptFs):
        FsImage.mount(dev, 0, 200)


def test_delete_frees_without_zeroing():
    dev, fs = make()
    fs.create_write("a", b"Z" * 1024, 1)
    lba = fs.data_lba + fs.stat("a").first_cluster * fs.spc
    fs.delete("a")
    assert not fs.exists("a")
    assert fs.free_clusters == fs.num_clusters
    assert dev.read_sectors(lba, 1) == b"Z" * 512


def test_overwrite_grow_and_shrink():
    _, fs = make()
    fs.create_write("a", b"1" * 3000, 1)
    fs.overwrite("a", b"2" * 9000, 2)
    assert fs.read_file("a") == b"2" * 9000
    fs.overwrite("a", b"3" * 10, 3)
    assert fs.read_file("a") == b"3" * 10
    assert fs.free_clusters == fs.num_clusters - 1


def test_naive_probe_closed_form():
    _, fs = make(num_clusters=128)
    fs.create_write("a", b"x" * 10 * 1024, 1, "naive")
    assert fs.probe_counter == naive_probes(10, 128)


def test_cursor_matches_reference_scan():
    rng = random.Random(5)
    _, fs = make(num_clusters=200, dir_slots=64)
    for i in range(40):
        if fs.list() and rng.random() < 0.35:
            fs.delete(rng.choice(fs.list()).name)
            continue
        k = rng.randint(1, 8)
        if k > fs.free_clusters:
            continue
        table = [int(v) for v in fs.table]
        expect_probes, expect = cursor_probes(table, fs.alloc_cursor, k)
        before = fs.probe_counter
        e = fs.create_write(f"f{i}", rng.randbytes(k * 1024), i)
        assert fs.probe_counter - before == expect_probes
        assert fs.chain(e.first_cluster) == expect


def test_large_transfers_are_split():
    need = FsImage.required_sectors(5000, 8192, 4)
    dev = SedDevice(need)
    fs = FsImage.format(dev, 0, need, 5000, 8192, 4)
    fs.io_log.clear()
    data = np.random.default_rng(0).bytes(5000 * 8192)
    fs.create_write("big", data, 1)
    writes = [n for kind, _lba, n in fs.io_log if kind == "write"]
    assert max(writes) == MAX_REQUEST_SECTORS
    assert fs.read_file("big") == data


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["create", "delete", "overwrite", "rename"]),
                          st.integers(0, 9), st.integers(0, 6000)), max_size=40))
def test_random_ops_keep_filesystem_consistent(ops):
    dev, fs = make(num_clusters=48, dir_slots=24)
    model: dict[str, bytes] = {}
    for i, (op, idx, size) in enumerate(ops):
        name = f"n{idx}"
        data = bytes([i % 251]) * size
        try:
            if op == "create":
                fs.create_write(name, data, i)
                model[name] = data
            elif op == "delete":
                fs.delete(name)
                del model[name]
            elif op == "overwrite":
                fs.overwrite(name, data, i)
                model[name] = data
            else:
                fs.rename(name, name + "r")
                model[name + "r"] = model.pop(name)
        except (NotFound, Exists, NoSpace, KeyError):
            pass
    reachable, problems = mark_and_sweep(fs.table, fs.list(True))
    assert problems == []
    assert len(reachable) == fs.num_clusters - fs.free_clusters
    again = FsImage.mount(dev, 10, fs.length)
    assert {e.name: again.read_file(e.name) for e in again.list(True)} == model
