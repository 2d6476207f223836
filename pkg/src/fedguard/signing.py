"""ed25519 identities and signatures for participants, the control plane, and operators.

Signatures are rendered as ``ed25519:<lowercase hex>`` over canonical JSON
bytes.  Simulated identities are derived deterministically from the run seed
so that repeated runs produce byte-identical traces.
"""

from __future__ import annotations

import hashlib

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

SIG_PREFIX = "ed25519:"


class UnknownParticipantError(KeyError):
    """Raised when a signing or verification key is requested for an unregistered id."""


def derive_seed(*parts: object) -> bytes:
    """Derive a 32-byte key seed from arbitrary parts (mock identities only)."""
    h = hashlib.sha256()
    for part in parts:
        h.update(str(part).encode("utf-8"))
        h.update(b"\x1f")
    return h.digest()


class Signer:
    """An ed25519 private key bound to a participant id."""

    def __init__(self, participant_id: str, private_key: Ed25519PrivateKey):
        self.participant_id = participant_id
        self._key = private_key

    @classmethod
    def from_seed(cls, participant_id: str, seed32: bytes) -> "Signer":
        return cls(participant_id, Ed25519PrivateKey.from_private_bytes(seed32))

    @property
    def public_hex(self) -> str:
        from cryptography.hazmat.primitives import serialization

        raw = self._key.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        return raw.hex()

    def sign(self, data: bytes) -> str:
        return SIG_PREFIX + self._key.sign(data).hex()


class KeyRing:
    """Registry of participant public keys used to verify inbound signatures."""

    def __init__(self) -> None:
        self._keys: dict[str, Ed25519PublicKey] = {}

    def register(self, participant_id: str, public_hex: str) -> None:
        self._keys[participant_id] = Ed25519PublicKey.from_public_bytes(
            bytes.fromhex(public_hex)
        )

    def register_signer(self, signer: Signer) -> None:
        self.register(signer.participant_id, signer.public_hex)

    def known(self, participant_id: str) -> bool:
        return participant_id in self._keys

    def verify(self, participant_id: str, data: bytes, sig: str | None) -> bool:
        """Check ``sig`` over ``data`` under the registered key. Unknown ids raise."""
        if participant_id not in self._keys:
            raise UnknownParticipantError(participant_id)
        if not sig or not sig.startswith(SIG_PREFIX):
            return False
        try:
            raw = bytes.fromhex(sig[len(SIG_PREFIX):])
        except ValueError:
            return False
        try:
            self._keys[participant_id].verify(raw, data)
            return True
        except InvalidSignature:
            return False
