"""Canonical JSON encoding and SHA-256 helpers.

Every signed or hashed surface in the system (telemetry frames, commands,
acks, manifests, ledger records, traces) goes through the same canonical
encoding: JSON with lexicographically sorted keys, no insignificant
whitespace, explicit nulls, UTF-8 bytes.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any

ZERO_DIGEST = "0" * 64


def canonical_json_bytes(obj: Any) -> bytes:
    """Encode ``obj`` as canonical JSON bytes (sorted keys, compact, UTF-8)."""
    return json.dumps(
        obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")


def sha256_bytes(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_hex_of_json(obj: Any) -> str:
    return sha256_hex(canonical_json_bytes(obj))
