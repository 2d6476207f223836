"""Append-only Merkle ledger: records, block commitment, proofs, chain verification.

Every command, acknowledgment, collector reject, sealed telemetry batch,
admission verdict, and operator override lands here as exactly one record.
Records are committed into per-tick blocks; each block carries a Merkle root
over the records' canonical bytes and chains to its predecessor's root, so a
single flipped byte anywhere in committed content is detectable.

File format: magic ``GFCL`` + one version byte, then a sequence of entries,
each a big-endian u32 length prefix followed by canonical JSON with an
``entry`` discriminator of ``record`` or ``block``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .canon import ZERO_DIGEST, canonical_json_bytes, sha256_bytes, sha256_hex

LEDGER_MAGIC = b"GFCL"
LEDGER_VERSION = 1

RECORD_KINDS = (
    "command",
    "ack",
    "frame-batch",
    "admission",
    "reject",
    "override",
    "state-note",
)


class LedgerError(Exception):
    pass


class LedgerClosedError(LedgerError):
    """Appending after the final commit of an ended job."""


class LedgerParseError(LedgerError):
    """The ledger file cannot be decoded (distinct from verification failure)."""


@dataclass(frozen=True)
class LedgerRecord:
    index: int
    tick: int
    kind: str
    payload_hash: str
    meta: dict[str, str] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "index": self.index,
            "tick": self.tick,
            "kind": self.kind,
            "payload_hash": self.payload_hash,
            "meta": dict(sorted(self.meta.items())),
        }


@dataclass(frozen=True)
class LedgerBlock:
    block_index: int
    start: int  # first record index covered
    end: int  # one past the last record index covered
    merkle_root: str
    prev_block_root: str

    def to_json_dict(self) -> dict:
        return {
            "block_index": self.block_index,
            "start": self.start,
            "end": self.end,
            "merkle_root": self.merkle_root,
            "prev_block_root": self.prev_block_root,
        }


@dataclass(frozen=True)
class InclusionProof:
    record_index: int
    path: tuple[tuple[str, str], ...]  # (sibling digest hex, "L" | "R")


def record_entry_bytes(record: LedgerRecord) -> bytes:
    entry = {"entry": "record", **record.to_json_dict()}
    return canonical_json_bytes(entry)


def block_entry_bytes(block: LedgerBlock) -> bytes:
    entry = {"entry": "block", **block.to_json_dict()}
    return canonical_json_bytes(entry)


def record_leaf_hash(record_bytes: bytes) -> str:
    """Merkle leaf: SHA-256 over the record's exact stored bytes."""
    return sha256_hex(record_bytes)


def merkle_root(leaves: list[str]) -> str:
    """Binary Merkle root with duplicate-last-leaf padding to a power of two.

    A single leaf is its own root; zero leaves commit to SHA-256 of the empty
    string.
    """
    if not leaves:
        return sha256_hex(b"")
    level = [bytes.fromhex(h) for h in leaves]
    while len(level) > 1:
        if len(level) % 2 == 1:
            level.append(level[-1])
        level = [sha256_bytes(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0].hex()


def merkle_path(leaves: list[str], index: int) -> tuple[tuple[str, str], ...]:
    """Sibling path for ``leaves[index]``, bottom-up, with pad duplication."""
    level = [bytes.fromhex(h) for h in leaves]
    position = index
    path: list[tuple[str, str]] = []
    while len(level) > 1:
        if len(level) % 2 == 1:
            level.append(level[-1])
        sibling = position ^ 1
        side = "L" if sibling < position else "R"
        path.append((level[sibling].hex(), side))
        level = [sha256_bytes(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
        position //= 2
    return tuple(path)


def verify_inclusion(root: str, record_bytes: bytes, proof: InclusionProof) -> bool:
    digest = sha256_bytes(record_bytes)
    for sibling_hex, side in proof.path:
        sibling = bytes.fromhex(sibling_hex)
        digest = sha256_bytes(sibling + digest if side == "L" else digest + sibling)
    return digest.hex() == root


class AuditState(str, Enum):
    APPEND = "APPEND"
    COMMIT = "COMMIT"


class Ledger:
    """Single-writer append-only ledger with per-tick block commitment."""

    def __init__(self) -> None:
        self.records: list[LedgerRecord] = []
        self.record_bytes: list[bytes] = []
        self.blocks: list[LedgerBlock] = []
        self.state = AuditState.APPEND
        self._committed_until = 0
        self._closed = False

    def append(
        self, tick: int, kind: str, payload_hash: str, meta: dict[str, str] | None = None
    ) -> int:
        if self._closed:
            raise LedgerClosedError("ledger is closed; the job has ended")
        if kind not in RECORD_KINDS:
            raise LedgerError(f"unknown record kind {kind!r}")
        record = LedgerRecord(
            index=len(self.records),
            tick=tick,
            kind=kind,
            payload_hash=payload_hash,
            meta=dict(meta or {}),
        )
        self.records.append(record)
        self.record_bytes.append(record_entry_bytes(record))
        return record.index

    def append_object(self, tick: int, kind: str, obj, meta: dict[str, str] | None = None) -> int:
        """Append a record whose payload hash covers ``obj``'s canonical JSON."""
        return self.append(tick, kind, sha256_hex(canonical_json_bytes(obj)), meta)

    @property
    def uncommitted(self) -> int:
        return len(self.records) - self._committed_until

    def commit(self, allow_empty: bool = False) -> LedgerBlock:
        """Commit all uncommitted records into the next block.

        An empty commit is only meaningful at job end, where it produces a
        block over zero records with the defined empty root.
        """
        if self.uncommitted == 0 and not allow_empty:
            raise LedgerError("nothing to commit")
        self.state = AuditState.COMMIT
        start = self._committed_until
        end = len(self.records)
        leaves = [record_leaf_hash(b) for b in self.record_bytes[start:end]]
        prev_root = self.blocks[-1].merkle_root if self.blocks else ZERO_DIGEST
        block = LedgerBlock(
            block_index=len(self.blocks),
            start=start,
            end=end,
            merkle_root=merkle_root(leaves),
            prev_block_root=prev_root,
        )
        self.blocks.append(block)
        self._committed_until = end
        self.state = AuditState.APPEND
        return block

    def close(self) -> LedgerBlock:
        """Final job-end commit (empty allowed); further appends are rejected."""
        block = self.commit(allow_empty=True)
        self._closed = True
        return block

    def prove_inclusion(self, index: int) -> InclusionProof:
        block = self._block_for(index)
        leaves = [record_leaf_hash(b) for b in self.record_bytes[block.start:block.end]]
        return InclusionProof(
            record_index=index, path=merkle_path(leaves, index - block.start)
        )

    def _block_for(self, index: int) -> LedgerBlock:
        for block in self.blocks:
            if block.start <= index < block.end:
                return block
        raise LedgerError(f"record {index} is not in any committed block")

    def block_root_for(self, index: int) -> str:
        return self._block_for(index).merkle_root

    def last_root(self) -> str:
        return self.blocks[-1].merkle_root if self.blocks else ZERO_DIGEST

    def to_json_dict(self) -> dict:
        return {
            "records": [r.to_json_dict() for r in self.records],
            "blocks": [b.to_json_dict() for b in self.blocks],
        }

    def save(self, path: str | Path) -> None:
        """Serialize records and blocks interleaved in commit order."""
        out = bytearray()
        out += LEDGER_MAGIC
        out += bytes([LEDGER_VERSION])
        cursor = 0
        for block in self.blocks:
            for raw in self.record_bytes[cursor:block.end]:
                out += struct.pack(">I", len(raw)) + raw
            out += _length_prefixed(block_entry_bytes(block))
            cursor = block.end
        for raw in self.record_bytes[cursor:]:
            out += struct.pack(">I", len(raw)) + raw
        Path(path).write_bytes(bytes(out))


def _length_prefixed(raw: bytes) -> bytes:
    return struct.pack(">I", len(raw)) + raw


@dataclass(frozen=True)
class ParsedLedger:
    records: list[dict]
    record_raw: list[bytes]
    record_spans: list[tuple[int, int]]  # byte offsets of each record entry in the file
    blocks: list[dict]


def parse_ledger_bytes(data: bytes) -> ParsedLedger:
    import json

    if data[:4] != LEDGER_MAGIC:
        raise LedgerParseError("bad magic")
    if len(data) < 5 or data[4] != LEDGER_VERSION:
        raise LedgerParseError("unsupported version")
    records: list[dict] = []
    record_raw: list[bytes] = []
    record_spans: list[tuple[int, int]] = []
    blocks: list[dict] = []
    offset = 5
    while offset < len(data):
        if offset + 4 > len(data):
            raise LedgerParseError("truncated length prefix")
        (length,) = struct.unpack(">I", data[offset:offset + 4])
        start = offset + 4
        end = start + length
        if end > len(data):
            raise LedgerParseError("truncated entry")
        raw = data[start:end]
        try:
            entry = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise LedgerParseError(f"undecodable entry at byte {start}: {exc}") from exc
        if not isinstance(entry, dict) or "entry" not in entry:
            raise LedgerParseError(f"entry at byte {start} lacks a discriminator")
        if entry["entry"] == "record":
            records.append(entry)
            record_raw.append(raw)
            record_spans.append((start, end))
        elif entry["entry"] == "block":
            blocks.append(entry)
        else:
            raise LedgerParseError(f"unknown entry type {entry['entry']!r}")
        offset = end
    return ParsedLedger(records, record_raw, record_spans, blocks)


@dataclass(frozen=True)
class ChainReport:
    ok: bool
    first_bad_block: int | None = None
    detail: str = ""


def verify_chain(data: bytes) -> ChainReport:
    """Recompute every block root and the prev-root chain from raw bytes.

    Leaf hashes are taken over the exact stored record bytes, so any content
    mutation (including metadata) breaks the containing block's root.
    """
    parsed = parse_ledger_bytes(data)
    by_index: dict[int, bytes] = {}
    for entry, raw in zip(parsed.records, parsed.record_raw):
        index = entry.get("index")
        if not isinstance(index, int) or index in by_index:
            return ChainReport(False, None, f"bad or duplicate record index {index!r}")
        by_index[index] = raw
    prev_root = ZERO_DIGEST
    for position, block in enumerate(parsed.blocks):
        for key in ("block_index", "start", "end", "merkle_root", "prev_block_root"):
            if key not in block:
                return ChainReport(False, position, f"block missing {key}")
        if block["block_index"] != position:
            return ChainReport(False, position, "block index out of order")
        if block["prev_block_root"] != prev_root:
            return ChainReport(False, position, "previous-root chain broken")
        try:
            leaves = [
                record_leaf_hash(by_index[i]) for i in range(block["start"], block["end"])
            ]
        except KeyError as exc:
            return ChainReport(False, position, f"missing record {exc.args[0]}")
        if merkle_root(leaves) != block["merkle_root"]:
            return ChainReport(False, position, "merkle root mismatch")
        prev_root = block["merkle_root"]
    return ChainReport(True)


def verify_chain_file(path: str | Path) -> ChainReport:
    return verify_chain(Path(path).read_bytes())
