"""Per-tick metric frames: definition, signing, verification, collection, sealing.

Every participant (each Node and the Aggregator) emits one signed frame per
logical tick.  The collector enforces the admitted manifest: signature, strict
sequence-number monotonicity, and exact agreement between the frame's non-null
metric keys and the manifest's metric key set.  Accepted frames are sealed per
tick into a hash batch that feeds the audit ledger.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone
from enum import Enum
from typing import Callable, Mapping

from .canon import canonical_json_bytes, sha256_hex
from .signing import KeyRing, Signer, UnknownParticipantError

# All metric fields a frame can carry.  Back-ends that do not produce a field
# serialize it as an explicit null.
METRIC_KEYS = (
    "noiseBits",
    "levelsLeft",
    "epsilonSpent",
    "shareAuthFail",
    "lag_ms",
    "opLatency_ms",
)

_EPOCH = datetime(2025, 1, 1, tzinfo=timezone.utc)

# A node missing this many consecutive ticks is reported as a liveness fault.
MISSED_TICK_FAULT_THRESHOLD = 3


def tick_timestamp(tick: int) -> str:
    """RFC 3339 UTC timestamp for a logical tick (one tick per second)."""
    return (_EPOCH + timedelta(seconds=tick)).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class MetricFrame:
    """One participant's signed telemetry record for one tick."""

    node_id: str
    seq: int
    noiseBits: int | None
    levelsLeft: int | None
    epsilonSpent: float | None
    shareAuthFail: int | None
    lag_ms: int
    opLatency_ms: float
    timestamp: str
    sig: str | None = None

    def metric_values(self) -> dict[str, int | float | None]:
        return {key: getattr(self, key) for key in METRIC_KEYS}

    def non_null_keys(self) -> frozenset[str]:
        return frozenset(k for k, v in self.metric_values().items() if v is not None)

    def to_wire(self) -> dict:
        """Full wire form: canonical payload keys plus the signature."""
        wire = dict(_payload_dict(self))
        wire["sig"] = self.sig
        return wire

    @classmethod
    def from_wire(cls, wire: Mapping) -> "MetricFrame":
        return cls(
            node_id=wire["node_id"],
            seq=wire["seq"],
            noiseBits=wire["noiseBits"],
            levelsLeft=wire["levelsLeft"],
            epsilonSpent=wire["epsilonSpent"],
            shareAuthFail=wire["shareAuthFail"],
            lag_ms=wire["lag_ms"],
            opLatency_ms=wire["opLatency_ms"],
            timestamp=wire["timestamp"],
            sig=wire.get("sig"),
        )


def _payload_dict(frame: MetricFrame) -> dict:
    return {
        "node_id": frame.node_id,
        "seq": frame.seq,
        "noiseBits": frame.noiseBits,
        "levelsLeft": frame.levelsLeft,
        "epsilonSpent": frame.epsilonSpent,
        "shareAuthFail": frame.shareAuthFail,
        "lag_ms": frame.lag_ms,
        "opLatency_ms": frame.opLatency_ms,
        "timestamp": frame.timestamp,
    }


def canonical_frame_bytes(frame: MetricFrame) -> bytes:
    """Canonical signing bytes: sorted keys, explicit nulls, sig excluded."""
    return canonical_json_bytes(_payload_dict(frame))


def frame_hash(frame: MetricFrame) -> str:
    """SHA-256 over the full wire encoding (signature included)."""
    return sha256_hex(canonical_json_bytes(frame.to_wire()))


def sign_frame(frame: MetricFrame, signer: Signer) -> MetricFrame:
    """Return the frame with sig set; the signer must match frame.node_id."""
    if signer.participant_id != frame.node_id:
        raise UnknownParticipantError(frame.node_id)
    return replace(frame, sig=signer.sign(canonical_frame_bytes(frame)))


def verify_frame(frame: MetricFrame, keyring: KeyRing) -> bool:
    return keyring.verify(frame.node_id, canonical_frame_bytes(frame), frame.sig)


@dataclass(frozen=True)
class AlignedSnapshot:
    """Latest accepted frame per participant for one tick, with miss flags."""

    tick: int
    frames: Mapping[str, MetricFrame]
    missed: frozenset[str]

    def to_json_dict(self) -> dict:
        return {
            "tick": self.tick,
            "frames": {nid: f.to_wire() for nid, f in sorted(self.frames.items())},
            "missed": sorted(self.missed),
        }


@dataclass(frozen=True)
class SealedBatch:
    """Per-tick hash commitment over the accepted frames, in arrival order."""

    tick: int
    frame_hashes: tuple[str, ...]
    batch_hash: str

    def to_json_dict(self) -> dict:
        return {
            "tick": self.tick,
            "frame_hashes": list(self.frame_hashes),
            "batch_hash": self.batch_hash,
        }


def seal_batch(tick: int, hashes: list[str]) -> SealedBatch:
    joined = b"".join(bytes.fromhex(h) for h in hashes)
    return SealedBatch(tick=tick, frame_hashes=tuple(hashes), batch_hash=sha256_hex(joined))


class RejectReason(str, Enum):
    BAD_SIGNATURE = "bad-signature"
    REPLAY = "replay"
    SCHEMA_MISMATCH = "schema-mismatch"
    UNKNOWN_NODE = "unknown-node"
    ISOLATED_NODE = "isolated-node"


@dataclass(frozen=True)
class IngestResult:
    accepted: bool
    reason: RejectReason | None = None


class CollectorState(str, Enum):
    OPEN = "OPEN"
    WRITE = "WRITE"
    SEAL = "SEAL"


class Collector:
    """Ingests signed frames and seals one aligned snapshot per tick.

    Ingestion may be called concurrently from producer contexts; accepts are
    serialized internally.  Sealing is driven by the single control-plane tick
    context.  ``audit_sink`` receives (reason, frame) for every reject.
    """

    def __init__(
        self,
        manifest_hash: str,
        metric_keys: frozenset[str],
        participants: list[str],
        keyring: KeyRing,
        audit_sink: Callable[[RejectReason, MetricFrame], None] | None = None,
    ):
        self.manifest_hash = manifest_hash
        self.metric_keys = metric_keys
        self.participants = list(participants)
        self.keyring = keyring
        self.audit_sink = audit_sink
        self.state = CollectorState.OPEN
        self._lock = threading.Lock()
        self._last_seq: dict[str, int] = {}
        self._pending: dict[str, MetricFrame] = {}
        self._arrival: list[MetricFrame] = []
        self._isolated: set[str] = set()
        self._terminal: set[str] = set()
        self._missed_streak: dict[str, int] = {p: 0 for p in participants}
        self._liveness_faults: list[str] = []

    def mark_isolated(self, node_id: str) -> None:
        with self._lock:
            self._isolated.add(node_id)

    def mark_terminal(self, node_id: str) -> None:
        """Stop expecting frames from a participant that reached a terminal state."""
        with self._lock:
            self._terminal.add(node_id)

    def ingest(self, frame: MetricFrame) -> IngestResult:
        with self._lock:
            result = self._check(frame)
            if result.accepted:
                self._last_seq[frame.node_id] = frame.seq
                self._pending[frame.node_id] = frame
                self._arrival.append(frame)
                self.state = CollectorState.WRITE
            elif self.audit_sink is not None:
                self.audit_sink(result.reason, frame)
            return result

    def _check(self, frame: MetricFrame) -> IngestResult:
        if frame.node_id not in self.participants:
            return IngestResult(False, RejectReason.UNKNOWN_NODE)
        if frame.node_id in self._isolated:
            return IngestResult(False, RejectReason.ISOLATED_NODE)
        if not verify_frame(frame, self.keyring):
            return IngestResult(False, RejectReason.BAD_SIGNATURE)
        if frame.seq <= self._last_seq.get(frame.node_id, 0):
            return IngestResult(False, RejectReason.REPLAY)
        if frame.non_null_keys() != self.metric_keys:
            return IngestResult(False, RejectReason.SCHEMA_MISMATCH)
        return IngestResult(True)

    def expected_participants(self) -> list[str]:
        return [
            p
            for p in self.participants
            if p not in self._isolated and p not in self._terminal
        ]

    def seal(self, tick: int) -> tuple[SealedBatch, AlignedSnapshot]:
        """Close the current tick: emit the sealed batch and aligned snapshot.

        Sealing with zero accepted frames is not an error; every expected
        participant is flagged missed and the batch commits to zero hashes.
        """
        with self._lock:
            self.state = CollectorState.SEAL
            hashes = [frame_hash(f) for f in self._arrival]
            batch = seal_batch(tick, hashes)
            missed = set()
            for node_id in self.expected_participants():
                if node_id in self._pending:
                    self._missed_streak[node_id] = 0
                else:
                    missed.add(node_id)
                    streak = self._missed_streak.get(node_id, 0) + 1
                    self._missed_streak[node_id] = streak
                    if streak == MISSED_TICK_FAULT_THRESHOLD:
                        self._liveness_faults.append(node_id)
            snapshot = AlignedSnapshot(
                tick=tick, frames=dict(self._pending), missed=frozenset(missed)
            )
            self._pending = {}
            self._arrival = []
            self.state = CollectorState.OPEN
            return batch, snapshot

    def take_liveness_faults(self) -> list[str]:
        """Nodes that just crossed the consecutive-miss threshold (cleared on read)."""
        with self._lock:
            faults, self._liveness_faults = self._liveness_faults, []
            return faults
