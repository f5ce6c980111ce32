"""Signed time tokens standing in for an authenticated NTP service.

Wire form: 8-byte big-endian time, 16-byte nonce, then the signature.  The
signature is Ed25519 over SHA-256(time || nonce).
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .errors import BadSignature, StaleToken

SIGNATURE_SCHEME = "ed25519-sha256"
NONCE_SIZE = 16
SIGNATURE_SIZE = 64


def _payload_digest(time: int, nonce: bytes) -> bytes:
    return hashlib.sha256(struct.pack(">Q", time) + nonce).digest()


@dataclass(frozen=True)
class TimeToken:
    time: int
    nonce: bytes
    signature: bytes

    def to_bytes(self) -> bytes:
        return struct.pack(">Q", self.time) + self.nonce + self.signature

    @classmethod
    def from_bytes(cls, raw: bytes) -> "TimeToken":
        if len(raw) != 8 + NONCE_SIZE + SIGNATURE_SIZE:
            raise BadSignature("time token has the wrong length")
        (t,) = struct.unpack(">Q", raw[:8])
        return cls(t, bytes(raw[8:8 + NONCE_SIZE]), bytes(raw[8 + NONCE_SIZE:]))

    def hex(self) -> str:
        return self.to_bytes().hex()

    @classmethod
    def from_hex(cls, text: str) -> "TimeToken":
        try:
            raw = bytes.fromhex(text.strip())
        except ValueError:
            raise BadSignature("time token is not valid hex") from None
        return cls.from_bytes(raw)


def public_key_bytes(key: Ed25519PrivateKey) -> bytes:
    return key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)


def issue(authority_key: Ed25519PrivateKey, time: int, nonce: bytes | None = None) -> TimeToken:
    if nonce is None:
        nonce = os.urandom(NONCE_SIZE)
    if len(nonce) != NONCE_SIZE:
        raise ValueError(f"nonce must be {NONCE_SIZE} bytes")
    sig = authority_key.sign(_payload_digest(int(time), nonce))
    return TimeToken(int(time), bytes(nonce), sig)


def verify(token: TimeToken, public_key: bytes, last_accepted: int) -> int:
    """Return ``token.time`` if the signature holds and time moved forward."""
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(
            token.signature, _payload_digest(token.time, token.nonce))
    except (InvalidSignature, ValueError):
        raise BadSignature("time token signature does not verify") from None
    if token.time <= last_accepted:
        raise StaleToken(f"token time {token.time} not after last accepted {last_accepted}")
    return token.time


class TimeAuthority:
    """The remote signed-time service.  Holds the only signing key."""

    def __init__(self, private_key: Ed25519PrivateKey | None = None, rng=None):
        self._key = private_key or Ed25519PrivateKey.generate()
        self._rng = rng

    @classmethod
    def from_seed(cls, seed: bytes, rng=None) -> "TimeAuthority":
        return cls(Ed25519PrivateKey.from_private_bytes(hashlib.sha256(seed).digest()), rng)

    @property
    def public_key(self) -> bytes:
        return public_key_bytes(self._key)

    def issue(self, time: int) -> TimeToken:
        nonce = self._rng.randbytes(NONCE_SIZE) if self._rng is not None else None
        return issue(self._key, time, nonce)
