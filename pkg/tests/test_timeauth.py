import random

import pytest
from hypothesis import given, settings, strategies as st

from inuksuk.errors import BadSignature, StaleToken
from inuksuk.timeauth import TimeAuthority, TimeToken, issue, verify

from oracles import accepted_times


@pytest.fixture
def authority():
    return TimeAuthority.from_seed(b"authority", rng=random.Random(2))


def test_verify_accepts_newer(authority):
    tok = authority.issue(100)
    assert verify(tok, authority.public_key, 99) == 100


def test_stale_and_replay_rejected(authority):
    tok = authority.issue(100)
    with pytest.raises(StaleToken):
        verify(tok, authority.public_key, 100)
    with pytest.raises(StaleToken):
        verify(tok, authority.public_key, 500)


def test_forged_signature(authority):
    other = TimeAuthority.from_seed(b"someone else")
    with pytest.raises(BadSignature):
        verify(other.issue(10**9), authority.public_key, 0)


def test_altered_time_breaks_signature(authority):
    tok = authority.issue(100)
    moved = TimeToken(tok.time + 10**8, tok.nonce, tok.signature)
    with pytest.raises(BadSignature):
        verify(moved, authority.public_key, 0)


def test_hex_round_trip(authority):
    tok = authority.issue(42)
    assert TimeToken.from_hex(tok.hex()) == tok
    with pytest.raises(BadSignature):
        TimeToken.from_hex("zz")


def test_from_seed_is_deterministic():
    assert TimeAuthority.from_seed(b"s").public_key == TimeAuthority.from_seed(b"s").public_key


def monotonic_run(authority, times):
    last, accepted = 0, []
    for t in times:
        try:
            last = verify(authority.issue(t), authority.public_key, last)
            accepted.append(t)
        except StaleToken:
            pass
    return accepted


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 1000), max_size=40))
def test_acceptance_is_strictly_increasing_prefix_max(times):
    authority = TimeAuthority.from_seed(b"prop", rng=random.Random(0))
    assert monotonic_run(authority, times) == accepted_times(times)


def test_signature_covers_digest_of_time_and_nonce(authority):
    import hashlib
    import struct

    from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

    tok = authority.issue(777)
    payload = hashlib.sha256(struct.pack(">Q", 777) + tok.nonce).digest()
    Ed25519PublicKey.from_public_bytes(authority.public_key).verify(tok.signature, payload)
