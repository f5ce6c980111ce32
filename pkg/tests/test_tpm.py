import hashlib
import random

import pytest
from hypothesis import given, settings, strategies as st

from inuksuk.errors import (
    AlreadyDefined,
    BadIndex,
    CorruptBlob,
    LocalityError,
    PolicyMismatch,
    Undefined,
)
from inuksuk.tpm import LAUNCH_LOCALITY, MLE_LOCALITY, SealedBlob, Tpm, TpmHandle

from oracles import pcr_chain, seal_should_open


def h(x: bytes) -> bytes:
    return hashlib.sha256(x).digest()


@pytest.fixture
def tpm():
    return Tpm(root_secret=b"r" * 32, rng=random.Random(1))


def test_pcrs_start_zero(tpm):
    assert all(tpm.pcr_read(i) == bytes(32) for i in range(24))
    with pytest.raises(BadIndex):
        tpm.pcr_read(24)


def test_extend_matches_hash_chain(tpm):
    ms = [h(b"a"), h(b"b"), h(b"c")]
    for m in ms:
        tpm.pcr_extend(10, m)
    assert tpm.pcr_read(10) == pcr_chain(ms)
    assert tpm.pcr_read(10) == h(h(h(bytes(32) + ms[0]) + ms[1]) + ms[2])


def test_dynamic_pcrs_need_locality(tpm):
    with pytest.raises(LocalityError):
        tpm.pcr_extend(17, h(b"x"))
    with pytest.raises(LocalityError):
        tpm.dynamic_reset(locality=MLE_LOCALITY)
    tpm.pcr_extend(17, h(b"x"), locality=MLE_LOCALITY)
    tpm.dynamic_reset(locality=LAUNCH_LOCALITY)
    assert tpm.pcr_read(17) == bytes(32)


def test_seal_unseal_round_trip(tpm):
    tpm.pcr_extend(10, h(b"m"))
    blob = tpm.seal(b"secret", {10: tpm.pcr_read(10)})
    assert tpm.unseal(blob) == b"secret"
    assert tpm.unseal(blob.to_bytes()) == b"secret"


def test_unseal_after_drift_fails(tpm):
    blob = tpm.seal(b"secret", {10: tpm.pcr_read(10)})
    tpm.pcr_extend(10, h(b"y"))
    with pytest.raises(PolicyMismatch):
        tpm.unseal(blob)


def test_tampered_blob_is_corrupt(tpm):
    blob = tpm.seal(b"secret", {3: tpm.pcr_read(3)})
    raw = bytearray(blob.to_bytes())
    raw[-1] ^= 1
    with pytest.raises(CorruptBlob):
        tpm.unseal(bytes(raw))
    with pytest.raises(CorruptBlob):
        tpm.unseal(b"junk")


def test_blob_from_other_tpm_does_not_open(tpm):
    other = Tpm(root_secret=b"s" * 32)
    blob = other.seal(b"secret", {3: bytes(32)})
    with pytest.raises(CorruptBlob):
        tpm.unseal(blob)


def test_blob_serialisation_round_trip(tpm):
    blob = tpm.seal(b"abc", {1: bytes(32), 5: bytes(32)})
    assert SealedBlob.from_bytes(blob.to_bytes()) == blob


def test_nvram_policy_gates_read_and_write(tpm):
    tpm.nvram_define(0x10, {7: tpm.pcr_read(7)})
    tpm.nvram_write(0x10, b"data")
    assert tpm.nvram_read(0x10) == b"data"
    tpm.pcr_extend(7, h(b"z"))
    with pytest.raises(PolicyMismatch):
        tpm.nvram_read(0x10)
    with pytest.raises(PolicyMismatch):
        tpm.nvram_write(0x10, b"other")
    with pytest.raises(AlreadyDefined):
        tpm.nvram_define(0x10)
    with pytest.raises(Undefined):
        tpm.nvram_read(0x11)


def test_reboot_resets_pcrs_not_nvram(tpm):
    tpm.pcr_extend(4, h(b"z"))
    tpm.nvram_define(1)
    tpm.nvram_write(1, b"keep")
    tpm.reset_on_boot()
    assert tpm.pcr_read(4) == bytes(32)
    assert tpm.nvram_read(1) == b"keep"


def test_handle_pins_locality(tpm):
    host = TpmHandle(tpm, 0)
    with pytest.raises(LocalityError):
        host.pcr_extend(17, h(b"a"))
    with pytest.raises(LocalityError):
        host.dynamic_reset()
    TpmHandle(tpm, MLE_LOCALITY).pcr_extend(17, h(b"a"))


def test_dict_round_trip(tpm):
    tpm.pcr_extend(2, h(b"q"))
    tpm.nvram_define(5, {2: tpm.pcr_read(2)})
    tpm.nvram_write(5, b"v")
    back = Tpm.from_dict(tpm.to_dict())
    assert back.to_dict() == tpm.to_dict()
    assert back.nvram_read(5) == b"v"


def seal_trials(seed, n):
    """Randomised seal / drift / unseal trials checked against the truth table."""
    rng = random.Random(seed)
    divergences = opened_count = 0
    for _ in range(n):
        tpm = Tpm(root_secret=rng.randbytes(32), rng=random.Random(rng.random()))
        for i in range(24):
            if rng.random() < 0.3:
                tpm.pcr_extend(i, rng.randbytes(32), locality=4)
        bound = rng.sample(range(24), rng.randint(1, 4))
        bindings = {i: tpm.pcr_read(i) for i in bound}
        blob = tpm.seal(rng.randbytes(rng.randint(1, 64)), bindings)
        # Optional drift on any register, bound or not.
        for _ in range(rng.choice([0, 0, 1, 2])):
            tpm.pcr_extend(rng.randrange(24), rng.randbytes(32), locality=4)
        if rng.random() < 0.2:
            # A dynamic reset only matters if a bound dynamic register was non-zero.
            tpm.dynamic_reset(locality=4)
        now = {i: tpm.pcr_read(i) for i in range(24)}
        try:
            tpm.unseal(blob)
            opened = True
        except PolicyMismatch:
            opened = False
        divergences += opened != seal_should_open(bindings, now)
        opened_count += opened
    return divergences, opened_count


def test_seal_truth_table_small():
    divergences, opened = seal_trials(11, 60)
    assert divergences == 0 and 0 < opened < 60


@settings(max_examples=40, deadline=None)
@given(st.binary(min_size=1, max_size=200), st.sets(st.integers(0, 23), min_size=1, max_size=5))
def test_seal_any_plaintext(data, indices):
    tpm = Tpm(root_secret=b"q" * 32, rng=random.Random(0))
    blob = tpm.seal(data, {i: tpm.pcr_read(i) for i in indices})
    assert tpm.unseal(blob) == data
