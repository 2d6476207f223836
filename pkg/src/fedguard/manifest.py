"""Job manifest construction, fail-fast admission checks, and manifest hashing.

The manifest is the job's authoritative contract: plug-in opcodes, execution
provider, enabled guard-rail predicates, metric keys, and a hash pinning the
exact guard-rail config in force.  Admission rejects the job before any
world state is constructed if the provider cannot implement the plug-in or a
predicate references a metric the provider does not emit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .canon import canonical_json_bytes, sha256_hex

MANIFEST_VERSION = 1


@dataclass(frozen=True)
class EPDescriptor:
    """What one execution provider implements and measures."""

    ep_id: str
    implemented_ops: frozenset[str]
    metric_keys: frozenset[str]

    def to_json_dict(self) -> dict:
        return {
            "ep_id": self.ep_id,
            "implemented_ops": sorted(self.implemented_ops),
            "metric_keys": sorted(self.metric_keys),
        }


@dataclass(frozen=True)
class Manifest:
    job_id: str
    plugin_name: str
    dsl_ops: frozenset[str]
    ep_id: str
    predicate_ids: tuple[str, ...]
    metric_keys: frozenset[str]
    n_nodes: int
    guardrails_hash: str
    manifest_version: int = MANIFEST_VERSION

    def to_json_dict(self) -> dict:
        return {
            "manifest_version": self.manifest_version,
            "job_id": self.job_id,
            "plugin": {"name": self.plugin_name, "dsl_ops": sorted(self.dsl_ops)},
            "execution_provider": self.ep_id,
            "predicates": list(self.predicate_ids),
            "metric_keys": sorted(self.metric_keys),
            "n_nodes": self.n_nodes,
            "guardrails_hash": self.guardrails_hash,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "Manifest":
        plugin = data["plugin"]
        return cls(
            manifest_version=data["manifest_version"],
            job_id=data["job_id"],
            plugin_name=plugin["name"],
            dsl_ops=frozenset(plugin["dsl_ops"]),
            ep_id=data["execution_provider"],
            predicate_ids=tuple(data["predicates"]),
            metric_keys=frozenset(data["metric_keys"]),
            n_nodes=data["n_nodes"],
            guardrails_hash=data["guardrails_hash"],
        )


class ManifestError(ValueError):
    """Raised for configs that cannot produce a well-formed manifest."""

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        self.detail = detail
        super().__init__(f"{reason}: {detail}" if detail else reason)


@dataclass(frozen=True)
class AdmissionReason:
    """One structured admission failure."""

    kind: str  # missing-opcode | unbound-metric | unknown-ep | bad-config
    opcode: str | None = None
    predicate_id: str | None = None
    metric_key: str | None = None
    detail: str | None = None

    def to_json_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        for key in ("opcode", "predicate_id", "metric_key", "detail"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out

    def __str__(self) -> str:
        parts = [self.kind]
        if self.opcode:
            parts.append(self.opcode)
        if self.predicate_id:
            parts.append(self.predicate_id)
        if self.metric_key:
            parts.append(self.metric_key)
        if self.detail:
            parts.append(self.detail)
        return "(".join(parts[:1]) + ("(" + ", ".join(parts[1:]) + ")" if parts[1:] else "")


@dataclass(frozen=True)
class AdmissionResult:
    verdict: str  # "admitted" | "rejected"
    reasons: tuple[AdmissionReason, ...] = field(default_factory=tuple)

    @property
    def admitted(self) -> bool:
        return self.verdict == "admitted"

    def to_json_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "reasons": [r.to_json_dict() for r in self.reasons],
        }


def compile_manifest(
    plugin,
    ep_id: str,
    guardrail_config,
    n_nodes: int,
    ep_registry: dict[str, EPDescriptor],
    guardrails_text: str,
    job_id: str = "job-0",
    disabled_predicates: frozenset[str] = frozenset(),
) -> Manifest:
    """Build the manifest for (plugin, provider, guard-rail config).

    Predicates are enabled automatically by metric availability: only those
    whose referenced metric keys are all emitted by the selected provider make
    it into the manifest.  Explicitly disabled ids are dropped on top.
    """
    if not plugin.program:
        raise ManifestError("bad-config", "plugin has an empty opcode list")
    if n_nodes < 2:
        raise ManifestError("bad-config", f"n_nodes must be >= 2, got {n_nodes}")
    descriptor = ep_registry.get(ep_id)
    if descriptor is None:
        raise ManifestError("bad-config", f"unknown execution provider {ep_id!r}")
    enabled = []
    for pred in guardrail_config.predicates:
        if pred.id in disabled_predicates:
            continue
        if pred.referenced_keys() <= descriptor.metric_keys:
            enabled.append(pred.id)
    return Manifest(
        job_id=job_id,
        plugin_name=plugin.name,
        dsl_ops=frozenset(plugin.program),
        ep_id=ep_id,
        predicate_ids=tuple(enabled),
        metric_keys=descriptor.metric_keys,
        n_nodes=n_nodes,
        guardrails_hash=guardrails_hash(guardrails_text),
    )


def admission_check(
    manifest: Manifest,
    ep_registry: dict[str, EPDescriptor],
    guardrail_config,
    guardrails_text: str,
) -> AdmissionResult:
    """Fail-fast admission: reports every failing check, not just the first."""
    reasons: list[AdmissionReason] = []
    descriptor = ep_registry.get(manifest.ep_id)
    if descriptor is None:
        return AdmissionResult(
            "rejected", (AdmissionReason("unknown-ep", detail=manifest.ep_id),)
        )
    for opcode in sorted(manifest.dsl_ops - descriptor.implemented_ops):
        reasons.append(AdmissionReason("missing-opcode", opcode=opcode))
    by_id = {p.id: p for p in guardrail_config.predicates}
    for pid in manifest.predicate_ids:
        pred = by_id.get(pid)
        if pred is None:
            reasons.append(
                AdmissionReason("bad-config", predicate_id=pid, detail="predicate not configured")
            )
            continue
        for key in sorted(pred.referenced_keys() - descriptor.metric_keys):
            reasons.append(
                AdmissionReason("unbound-metric", predicate_id=pid, metric_key=key)
            )
    if manifest.guardrails_hash != guardrails_hash(guardrails_text):
        reasons.append(
            AdmissionReason("bad-config", detail="guardrails_hash does not match supplied config")
        )
    if reasons:
        return AdmissionResult("rejected", tuple(reasons))
    return AdmissionResult("admitted")


def manifest_hash(manifest: Manifest) -> str:
    """Stable digest over the manifest's canonical JSON form."""
    return sha256_hex(canonical_json_bytes(manifest.to_json_dict()))


def guardrails_hash(text: str) -> str:
    """Digest over the exact guard-rail config text in force for the job."""
    return sha256_hex(text.encode("utf-8"))


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    Path(path).write_text(json.dumps(manifest.to_json_dict(), indent=2) + "\n")


def load_manifest(path: str | Path) -> Manifest:
    return Manifest.from_json_dict(json.loads(Path(path).read_text()))


def save_ep_registry(registry: dict[str, EPDescriptor], path: str | Path) -> None:
    data = [registry[k].to_json_dict() for k in sorted(registry)]
    Path(path).write_text(json.dumps(data, indent=2) + "\n")


def load_ep_registry(path: str | Path) -> dict[str, EPDescriptor]:
    data = json.loads(Path(path).read_text())
    registry = {}
    for entry in data:
        registry[entry["ep_id"]] = EPDescriptor(
            ep_id=entry["ep_id"],
            implemented_ops=frozenset(entry["implemented_ops"]),
            metric_keys=frozenset(entry["metric_keys"]),
        )
    return registry
