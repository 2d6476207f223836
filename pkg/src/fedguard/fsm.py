"""Finite-state machines, the signed command protocol, ranking, and the safety check.

Nodes walk IDLE -> PREF -> INF -> POSTF -> DONE (any non-terminal state can
drop to ABORTED); the Aggregator walks WAIT -> MERGE -> FINALIZE / ABORTED;
the Control Engine cycles READY -> EVALUATE -> DISPATCH.  All step functions
are total and pure: unexpected (state, event) pairs are logged no-ops, which
keeps the transition relation closed for model checking.

The ranking function assigns each state its distance from safe termination;
the world rank (sum over participants) never increases along any transition
and hits zero exactly when the job has completed or aborted safely.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping

from .canon import canonical_json_bytes
from .signing import KeyRing, Signer

logger = logging.getLogger(__name__)

COMMAND_KINDS = ("A-BOOTSTRAP", "A-ABORT_JOB", "A-ISOLATE_PARTY")

# Node states considered safe at release time.  DONE is accepted by the
# safety check as well: it is only reachable strictly after a safe release.
DEFAULT_SAFE_RELEASE_STATES = frozenset({"POSTF"})


class NodeCore(str, Enum):
    IDLE = "IDLE"
    PREF = "PREF"
    INF = "INF"
    POSTF = "POSTF"
    DONE = "DONE"
    ABORTED = "ABORTED"


TERMINAL_NODE_STATES = frozenset({NodeCore.DONE, NodeCore.ABORTED})


class AggregatorCore(str, Enum):
    WAIT = "WAIT"
    MERGE = "MERGE"
    FINALIZE = "FINALIZE"
    ABORTED = "ABORTED"


TERMINAL_AGG_STATES = frozenset({AggregatorCore.FINALIZE, AggregatorCore.ABORTED})


class ControlCore(str, Enum):
    READY = "READY"
    EVALUATE = "EVALUATE"
    DISPATCH = "DISPATCH"


class NodeEvent(str, Enum):
    JOB_ADMITTED = "job-admitted"
    EP_BOUND = "ep-bound"
    PLUGIN_FINISHED = "plugin-finished"
    FINALIZE_ACK = "finalize-ack"
    CMD_BOOTSTRAP = "cmd-bootstrap"
    CMD_ABORT_JOB = "cmd-abort-job"
    CMD_ISOLATE = "cmd-isolate"


@dataclass(frozen=True)
class NodeState:
    core: NodeCore = NodeCore.IDLE
    isolated: bool = False
    bootstrap_pending: bool = False

    @property
    def terminal(self) -> bool:
        return self.core in TERMINAL_NODE_STATES

    def to_json_dict(self) -> dict:
        return {
            "state": self.core.value,
            "isolated": self.isolated,
            "bootstrap_pending": self.bootstrap_pending,
        }


def node_step(node: NodeState, event: NodeEvent) -> NodeState:
    """Total node transition function; unexpected pairs are logged no-ops."""
    core = node.core
    if node.terminal:
        if event in (NodeEvent.CMD_BOOTSTRAP, NodeEvent.CMD_ABORT_JOB, NodeEvent.CMD_ISOLATE):
            return node  # terminal states absorb re-deliveries silently
        logger.debug("ignoring %s in terminal state %s", event.value, core.value)
        return node
    if event is NodeEvent.CMD_ABORT_JOB:
        return replace(node, core=NodeCore.ABORTED, bootstrap_pending=False)
    if event is NodeEvent.CMD_ISOLATE:
        return replace(node, core=NodeCore.ABORTED, isolated=True, bootstrap_pending=False)
    if event is NodeEvent.CMD_BOOTSTRAP:
        # The budget reset itself is applied to the provider state on the next
        # data-plane slot; the lifecycle state does not change.
        return replace(node, bootstrap_pending=True)
    if core is NodeCore.IDLE and event is NodeEvent.JOB_ADMITTED:
        return replace(node, core=NodeCore.PREF)
    if core is NodeCore.PREF and event is NodeEvent.EP_BOUND:
        return replace(node, core=NodeCore.INF)
    if core is NodeCore.INF and event is NodeEvent.PLUGIN_FINISHED:
        return replace(node, core=NodeCore.POSTF)
    if core is NodeCore.POSTF and event is NodeEvent.FINALIZE_ACK:
        return replace(node, core=NodeCore.DONE)
    logger.debug("ignoring %s in state %s", event.value, core.value)
    return node


@dataclass(frozen=True)
class AggregatorView:
    """What the Aggregator can see of the world when it steps."""

    shares_complete: bool  # every non-isolated node's share arrived and verified
    quorum_met: bool
    finalize_guard: bool  # all non-isolated nodes release-safe and no fires this tick
    abort: bool = False
    isolate: bool = False


def aggregator_step(agg: AggregatorCore, view: AggregatorView) -> AggregatorCore:
    """Total aggregator transition function (one transition per tick)."""
    if agg in TERMINAL_AGG_STATES:
        return agg
    if view.abort or view.isolate or not view.quorum_met:
        return AggregatorCore.ABORTED
    if agg is AggregatorCore.WAIT and view.shares_complete:
        return AggregatorCore.MERGE
    if agg is AggregatorCore.MERGE and view.finalize_guard:
        return AggregatorCore.FINALIZE
    return agg


# ---------------------------------------------------------------------------
# Signed commands and acknowledgments


@dataclass(frozen=True)
class ACommand:
    """Signed, idempotent control command requiring acknowledgment."""

    kind: str
    job_id: str
    target: str  # node id, "all", or "aggregator"
    nonce: str
    issued_tick: int
    sig: str | None = None

    def payload_dict(self) -> dict:
        return {
            "kind": self.kind,
            "job_id": self.job_id,
            "target": self.target,
            "nonce": self.nonce,
            "issued_tick": self.issued_tick,
        }

    def canonical_bytes(self) -> bytes:
        return canonical_json_bytes(self.payload_dict())

    def to_wire(self) -> dict:
        wire = self.payload_dict()
        wire["sig"] = self.sig
        return wire


def sign_command(command: ACommand, signer: Signer) -> ACommand:
    return replace(command, sig=signer.sign(command.canonical_bytes()))


def verify_command(command: ACommand, keyring: KeyRing, control_id: str) -> bool:
    return keyring.verify(control_id, command.canonical_bytes(), command.sig)


@dataclass(frozen=True)
class Ack:
    nonce: str
    node_id: str
    tick: int
    sig: str | None = None

    def payload_dict(self) -> dict:
        return {"nonce": self.nonce, "node_id": self.node_id, "tick": self.tick}

    def canonical_bytes(self) -> bytes:
        return canonical_json_bytes(self.payload_dict())

    def to_wire(self) -> dict:
        wire = self.payload_dict()
        wire["sig"] = self.sig
        return wire


def sign_ack(ack: Ack, signer: Signer) -> Ack:
    return replace(ack, sig=signer.sign(ack.canonical_bytes()))


def verify_ack(ack: Ack, keyring: KeyRing) -> bool:
    return keyring.verify(ack.node_id, ack.canonical_bytes(), ack.sig)


@dataclass(frozen=True)
class ControlEngineState:
    """Control engine FSM core plus the in-flight acknowledgment set."""

    core: ControlCore = ControlCore.READY
    pending: frozenset[tuple[str, str]] = frozenset()  # (nonce, participant)
    next_nonce: int = 0

    @property
    def awaiting(self) -> bool:
        return bool(self.pending)


def control_step(
    control: ControlEngineState,
    fired: Iterable,
    *,
    job_id: str,
    tick: int,
    signer: Signer,
    resolve_target,
    participants_for,
) -> tuple[ControlEngineState, list[ACommand]]:
    """Evaluate fired actions and dispatch signed commands.

    One command is emitted per distinct (kind, resolved target) pair so that
    several frames crossing the same threshold in one tick produce a single
    broadcast.  ``resolve_target(action)`` maps a fired action to its wire
    target; ``participants_for(target)`` expands a target to the participant
    ids whose acks are awaited.
    """
    commands: list[ACommand] = []
    seen: set[tuple[str, str]] = set()
    pending = set(control.pending)
    nonce_counter = control.next_nonce
    for action in fired:
        target = resolve_target(action)
        dedupe_key = (action.kind, target)
        if dedupe_key in seen:
            continue
        seen.add(dedupe_key)
        command = ACommand(
            kind=action.kind,
            job_id=job_id,
            target=target,
            nonce=f"cmd-{nonce_counter:06d}",
            issued_tick=tick,
        )
        nonce_counter += 1
        commands.append(sign_command(command, signer))
        for participant in participants_for(target):
            pending.add((command.nonce, participant))
    core = ControlCore.DISPATCH if pending else ControlCore.READY
    return (
        ControlEngineState(core=core, pending=frozenset(pending), next_nonce=nonce_counter),
        commands,
    )


def control_absorb_ack(control: ControlEngineState, ack: Ack) -> ControlEngineState:
    pending = control.pending - {(ack.nonce, ack.node_id)}
    core = ControlCore.DISPATCH if pending else ControlCore.READY
    return replace(control, core=core, pending=frozenset(pending))


# ---------------------------------------------------------------------------
# Ranking and the safety invariant


_NODE_RANK = {
    NodeCore.IDLE: 3,
    NodeCore.PREF: 2,
    NodeCore.INF: 1,
    NodeCore.POSTF: 0,
    NodeCore.DONE: 0,
    NodeCore.ABORTED: 0,
}

_AGG_RANK = {
    AggregatorCore.WAIT: 2,
    AggregatorCore.MERGE: 1,
    AggregatorCore.FINALIZE: 0,
    AggregatorCore.ABORTED: 0,
}


def rank(node: NodeState | NodeCore) -> int:
    core = node.core if isinstance(node, NodeState) else node
    return _NODE_RANK[core]


def rank_agg(agg: AggregatorCore) -> int:
    return _AGG_RANK[agg]


@dataclass(frozen=True)
class WorldState:
    """The synchronous product of all machine states for one job."""

    tick: int
    nodes: Mapping[str, NodeState]
    aggregator: AggregatorCore
    control: ControlEngineState = field(default_factory=ControlEngineState)

    def to_json_dict(self) -> dict:
        return {
            "tick": self.tick,
            "nodes": {nid: st.to_json_dict() for nid, st in sorted(self.nodes.items())},
            "aggregator": self.aggregator.value,
            "control": self.control.core.value,
            "pending_acks": sorted(list(self.control.pending)),
        }


def mu(world: WorldState) -> int:
    """World progress rank: sum of node ranks plus the aggregator rank."""
    return sum(rank(n) for n in world.nodes.values()) + rank_agg(world.aggregator)


def release_safe(node: NodeState, safe_states: frozenset[str]) -> bool:
    """Whether a node satisfies the release-time quantifier.

    Isolated parties are excluded by the caller; DONE counts as safe because
    it is reachable only after a finalization that already passed the guard.
    """
    return node.core.value in safe_states or node.core is NodeCore.DONE


def check_safety(
    world: WorldState,
    fired_this_tick: bool,
    safe_states: frozenset[str] = DEFAULT_SAFE_RELEASE_STATES,
) -> bool:
    """False iff the Aggregator finalized while some non-isolated node is
    outside the safe release set or a guard-rail fired this tick."""
    if world.aggregator is not AggregatorCore.FINALIZE:
        return True
    if fired_this_tick:
        return False
    return all(
        release_safe(node, safe_states)
        for node in world.nodes.values()
        if not node.isolated
    )


def finalize_guard(
    nodes: Mapping[str, NodeState],
    fired_this_tick: bool,
    safe_states: frozenset[str] = DEFAULT_SAFE_RELEASE_STATES,
) -> bool:
    """MERGE -> FINALIZE is permitted only under these conditions."""
    if fired_this_tick:
        return False
    return all(
        release_safe(node, safe_states) for node in nodes.values() if not node.isolated
    )
