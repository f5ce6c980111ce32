"""Software TPM: extend-only PCRs, PCR-bound NVRAM, measurement-bound sealing.

Sealing is AES-256-GCM under a key derived from the TPM's root secret and
the policy digest, so a blob only opens on the TPM that made it and only
while the bound PCRs hold their expected values.
"""

from __future__ import annotations

import hashlib
import hmac
import random
import struct
from dataclasses import dataclass, field
from typing import Mapping

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import AlreadyDefined, BadIndex, CorruptBlob, LocalityError, PolicyMismatch, Undefined

NUM_PCRS = 24
DIGEST_SIZE = 32
LAUNCH_PCR = 17
# Dynamic-launch registers: only extendable from locality >= 2.
DYNAMIC_PCRS = frozenset({17, 18})
HOST_LOCALITY = 0
MLE_LOCALITY = 2
LAUNCH_LOCALITY = 4

_BLOB_MAGIC = b"SEAL"
_NONCE_SIZE = 12
_TAG_SIZE = 16


def policy_digest(bindings: Mapping[int, bytes]) -> bytes:
    """Digest over the sorted ``(pcr_index, expected_value)`` set."""
    h = hashlib.sha256(b"pcr-policy")
    for index in sorted(bindings):
        value = bytes(bindings[index])
        h.update(struct.pack(">B", index))
        h.update(value)
    return h.digest()


@dataclass(frozen=True)
class SealedBlob:
    pcr_indices: tuple[int, ...]
    policy_digest: bytes
    nonce: bytes
    ciphertext: bytes
    integrity_tag: bytes

    def to_bytes(self) -> bytes:
        head = _BLOB_MAGIC + struct.pack(">B", len(self.pcr_indices)) + bytes(self.pcr_indices)
        return (head + self.policy_digest + self.nonce + self.integrity_tag
                + struct.pack(">I", len(self.ciphertext)) + self.ciphertext)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "SealedBlob":
        try:
            if raw[:4] != _BLOB_MAGIC:
                raise ValueError("magic")
            n = raw[4]
            pos = 5
            indices = tuple(raw[pos:pos + n])
            pos += n
            pdig = raw[pos:pos + DIGEST_SIZE]
            pos += DIGEST_SIZE
            nonce = raw[pos:pos + _NONCE_SIZE]
            pos += _NONCE_SIZE
            tag = raw[pos:pos + _TAG_SIZE]
            pos += _TAG_SIZE
            (clen,) = struct.unpack(">I", raw[pos:pos + 4])
            pos += 4
            ct = raw[pos:pos + clen]
            if len(ct) != clen or pos + clen != len(raw) or len(tag) != _TAG_SIZE:
                raise ValueError("length")
        except (IndexError, ValueError, struct.error) as exc:
            raise CorruptBlob(f"malformed sealed blob: {exc}") from None
        return cls(indices, bytes(pdig), bytes(nonce), bytes(ct), bytes(tag))


@dataclass
class NvramSlot:
    index: int
    read_policy: dict[int, bytes] = field(default_factory=dict)
    data: bytes = b""
    defined: bool = True


class Tpm:
    """The secure element.  Methods take the caller's ``locality``."""

    def __init__(self, root_secret: bytes | None = None, rng: random.Random | None = None):
        self._rng = rng or random.Random()
        self._root = bytes(root_secret) if root_secret is not None else self._rng.randbytes(32)
        self.pcrs: list[bytes] = [bytes(DIGEST_SIZE)] * NUM_PCRS
        self.nvram: dict[int, NvramSlot] = {}

    # ------------------------------------------------------------------ PCRs

    @staticmethod
    def _check_index(index):
        if not isinstance(index, int) or not 0 <= index < NUM_PCRS:
            raise BadIndex(f"PCR index {index!r} outside 0..{NUM_PCRS - 1}")

    def pcr_read(self, index: int) -> bytes:
        self._check_index(index)
        return self.pcrs[index]

    def pcr_extend(self, index: int, measurement: bytes, *, locality: int = HOST_LOCALITY) -> bytes:
        self._check_index(index)
        if len(measurement) != DIGEST_SIZE:
            raise ValueError("measurement must be a 32-byte digest")
        if index in DYNAMIC_PCRS and locality < MLE_LOCALITY:
            raise LocalityError(f"PCR {index} is not extendable from locality {locality}")
        value = hashlib.sha256(self.pcrs[index] + bytes(measurement)).digest()
        self.pcrs[index] = value
        return value

    def dynamic_reset(self, *, locality: int) -> None:
        """Reset the dynamic-launch registers; only the launch path may do this."""
        if locality != LAUNCH_LOCALITY:
            raise LocalityError("dynamic PCR reset requires the launch locality")
        for i in DYNAMIC_PCRS:
            self.pcrs[i] = bytes(DIGEST_SIZE)

    def reset_on_boot(self) -> None:
        self.pcrs = [bytes(DIGEST_SIZE)] * NUM_PCRS

    def get_random(self, n: int) -> bytes:
        return self._rng.randbytes(n)

    def _satisfied(self, bindings: Mapping[int, bytes]) -> bool:
        return all(hmac.compare_digest(self.pcrs[i], bytes(v)) for i, v in bindings.items())

    # --------------------------------------------------------------- sealing

    def _key(self, pdig: bytes) -> bytes:
        return hmac.new(self._root, b"seal-key\x00" + pdig, hashlib.sha256).digest()

    def seal(self, plaintext: bytes, pcr_bindings: Mapping[int, bytes]) -> SealedBlob:
        if not plaintext:
            raise ValueError("plaintext must be non-empty")
        for index, value in pcr_bindings.items():
            self._check_index(index)
            if len(value) != DIGEST_SIZE:
                raise ValueError("expected PCR values are 32-byte digests")
        indices = tuple(sorted(pcr_bindings))
        pdig = policy_digest(pcr_bindings)
        nonce = self._rng.randbytes(_NONCE_SIZE)
        sealed = AESGCM(self._key(pdig)).encrypt(nonce, bytes(plaintext), pdig + bytes(indices))
        return SealedBlob(indices, pdig, nonce, sealed[:-_TAG_SIZE], sealed[-_TAG_SIZE:])

    def unseal(self, blob: SealedBlob | bytes) -> bytes:
        if not isinstance(blob, SealedBlob):
            blob = SealedBlob.from_bytes(blob)
        for i in blob.pcr_indices:
            if not 0 <= i < NUM_PCRS:
                raise CorruptBlob(f"blob references PCR {i}")
        current = policy_digest({i: self.pcrs[i] for i in blob.pcr_indices})
        if not hmac.compare_digest(current, blob.policy_digest):
            raise PolicyMismatch("bound PCR values differ from seal time")
        try:
            return AESGCM(self._key(blob.policy_digest)).decrypt(
                blob.nonce, blob.ciphertext + blob.integrity_tag,
                blob.policy_digest + bytes(blob.pcr_indices))
        except InvalidTag:
            raise CorruptBlob("integrity tag check failed") from None

    # ----------------------------------------------------------------- NVRAM

    def nvram_define(self, index: int, read_policy: Mapping[int, bytes] | None = None) -> None:
        if index in self.nvram:
            raise AlreadyDefined(f"NV index {index:#x} already defined")
        policy = dict(read_policy or {})
        for i in policy:
            self._check_index(i)
        self.nvram[index] = NvramSlot(index, policy)

    def nvram_defined(self, index: int) -> bool:
        return index in self.nvram

    def _slot(self, index) -> NvramSlot:
        slot = self.nvram.get(index)
        if slot is None or not slot.defined:
            raise Undefined(f"NV index {index:#x} is not defined")
        if not self._satisfied(slot.read_policy):
            raise PolicyMismatch(f"policy for NV index {index:#x} not satisfied")
        return slot

    def nvram_write(self, index: int, data: bytes) -> None:
        # Writes are gated by the same PCR policy as reads.
        self._slot(index).data = bytes(data)

    def nvram_read(self, index: int) -> bytes:
        return self._slot(index).data

    # ----------------------------------------------------------- persistence

    def to_dict(self) -> dict:
        return {
            "root_secret": self._root.hex(),
            "pcrs": [p.hex() for p in self.pcrs],
            "nvram": [
                {"index": s.index, "data": s.data.hex(),
                 "read_policy": {str(k): v.hex() for k, v in sorted(s.read_policy.items())}}
                for s in sorted(self.nvram.values(), key=lambda s: s.index)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict, rng: random.Random | None = None) -> "Tpm":
        tpm = cls(bytes.fromhex(d["root_secret"]), rng=rng)
        tpm.pcrs = [bytes.fromhex(p) for p in d["pcrs"]]
        for s in d["nvram"]:
            tpm.nvram[s["index"]] = NvramSlot(
                s["index"], {int(k): bytes.fromhex(v) for k, v in s["read_policy"].items()},
                bytes.fromhex(s["data"]))
        return tpm


class TpmHandle:
    """A TPM view pinned to one locality (host software or the launched program)."""

    def __init__(self, tpm: Tpm, locality: int):
        self._tpm = tpm
        self.locality = locality

    def pcr_read(self, index):
        return self._tpm.pcr_read(index)

    def pcr_extend(self, index, measurement):
        return self._tpm.pcr_extend(index, measurement, locality=self.locality)

    def dynamic_reset(self):
        return self._tpm.dynamic_reset(locality=self.locality)

    def seal(self, plaintext, pcr_bindings):
        return self._tpm.seal(plaintext, pcr_bindings)

    def unseal(self, blob):
        return self._tpm.unseal(blob)

    def nvram_define(self, index, read_policy=None):
        return self._tpm.nvram_define(index, read_policy)

    def nvram_write(self, index, data):
        return self._tpm.nvram_write(index, data)

    def nvram_read(self, index):
        return self._tpm.nvram_read(index)

    def nvram_defined(self, index):
        return self._tpm.nvram_defined(index)

    def get_random(self, n):
        return self._tpm.get_random(n)
