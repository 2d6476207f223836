"""Deterministic tick-driven execution of the full safety loop.

Each tick runs six ordered phases over N simulated nodes plus the Aggregator:

  1. data plane   - every non-terminal, non-silenced node applies a pending
                    budget reset or executes its next plugin opcode (fault
                    injections applied), then emits a signed frame
  2. sense        - the collector ingests and seals the tick's frames
  3. predict      - the sentinel produces the one-tick forecast
  4. act          - predicates are evaluated, commands dispatched and
                    acknowledged, receivers step their machines
  5. prove        - the audit ledger appends and commits the tick's records
  6. record       - progress rank and the safety check land in the trace

Everything is derived from the run seed: identities, latency draws, and
signatures, so one config yields one byte-identical trace.
"""

from __future__ import annotations

import concurrent.futures
import json
import random
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import audit, fsm, guardrails, manifest as manifest_mod, providers, telemetry
from .canon import canonical_json_bytes, sha256_hex
from .signing import KeyRing, Signer, derive_seed

CONTROL_PLANE_ID = "control-plane"
AGGREGATOR_ID = "aggregator"

# Fault magnitudes (injection schedules carry only tick, node, kind).
NOISE_DRAIN_BITS = 8
EXTRA_DP_EPSILON = 0.45

INJECTION_KINDS = ("invalid-share", "silence", "extra-dp-spend", "noise-drain")

# A command unacknowledged after one tick is re-sent once; after two ticks the
# target is treated as faulty and the transition is forced or escalated.
RESEND_AFTER_TICKS = 1
ESCALATE_AFTER_TICKS = 2


class SimConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Injection:
    tick: int
    node_id: str
    kind: str

    def to_json_dict(self) -> dict:
        return {"tick": self.tick, "node_id": self.node_id, "kind": self.kind}


@dataclass(frozen=True)
class SimConfig:
    n_nodes: int = 3
    seed: int = 42
    ep_id: str = "mock-fhe-ckks"
    plugin: providers.PluginDescriptor = providers.DEMO_PLUGIN
    guardrails_text: str = guardrails.DEFAULT_GUARDRAILS_YAML
    scenario: str = "none"
    max_ticks: int = 200
    injections: tuple[Injection, ...] = ()
    quorum: int = 2
    concurrent_ingest: bool = False

    def __post_init__(self):
        if self.max_ticks < 1:
            raise SimConfigError("max_ticks must be >= 1")
        node_ids = {f"node-{i}" for i in range(self.n_nodes)}
        for injection in self.injections:
            if injection.kind not in INJECTION_KINDS:
                raise SimConfigError(f"unknown injection kind {injection.kind!r}")
            if injection.node_id not in node_ids:
                raise SimConfigError(f"injection references unknown node {injection.node_id!r}")
            if not 0 <= injection.tick < self.max_ticks:
                raise SimConfigError(f"injection tick {injection.tick} out of range")

    def to_json_dict(self) -> dict:
        return {
            "n_nodes": self.n_nodes,
            "seed": self.seed,
            "ep_id": self.ep_id,
            "plugin": self.plugin.to_json_dict(),
            "scenario": self.scenario,
            "max_ticks": self.max_ticks,
            "injections": [i.to_json_dict() for i in self.injections],
            "quorum": self.quorum,
            "guardrails_hash": manifest_mod.guardrails_hash(self.guardrails_text),
        }


def scenario_a(n_nodes: int = 3, seed: int = 42) -> SimConfig:
    """Noise exhaustion: drains push one node's budget toward the threshold;
    the bootstrap broadcast repairs every node and the job still finalizes."""
    config = guardrails.parse_guardrails(guardrails.DEFAULT_GUARDRAILS_YAML)
    text = guardrails.render_guardrails(config.with_target("p1", "all"))
    return SimConfig(
        n_nodes=n_nodes,
        seed=seed,
        ep_id="mock-fhe-ckks",
        plugin=providers.FHE_PLUGIN,
        guardrails_text=text,
        scenario="A",
        injections=(
            Injection(4, "node-1", "noise-drain"),
            Injection(5, "node-1", "noise-drain"),
        ),
    )


def scenario_b(n_nodes: int = 3, seed: int = 42) -> SimConfig:
    """Privacy budget overflow: extra spends push one node over the limit,
    forcing a deterministic job abort."""
    return SimConfig(
        n_nodes=n_nodes,
        seed=seed,
        ep_id="mock-dp",
        plugin=providers.DP_PLUGIN,
        scenario="B",
        injections=(
            Injection(5, "node-2", "extra-dp-spend"),
            Injection(6, "node-2", "extra-dp-spend"),
        ),
    )


def scenario_c(n_nodes: int = 3, seed: int = 42) -> SimConfig:
    """Malformed shares: repeated invalid proofs from one party trigger its
    isolation; the remaining quorum finalizes."""
    return SimConfig(
        n_nodes=n_nodes,
        seed=seed,
        ep_id="mock-mpc",
        plugin=providers.MPC_PLUGIN,
        scenario="C",
        injections=(
            Injection(5, "node-1", "invalid-share"),
            Injection(6, "node-1", "invalid-share"),
        ),
    )


SCENARIOS = {"A": scenario_a, "B": scenario_b, "C": scenario_c}


def scenario_config(name: str, n_nodes: int = 3, seed: int = 42, ep_id: str | None = None) -> SimConfig:
    if name in SCENARIOS:
        return SCENARIOS[name](n_nodes=n_nodes, seed=seed)
    if name and name != "none":
        raise SimConfigError(f"unknown scenario {name!r}")
    return SimConfig(
        n_nodes=n_nodes, seed=seed, ep_id=ep_id or "mock-fhe-ckks",
        plugin=providers.DEMO_PLUGIN, scenario="none",
    )


# ---------------------------------------------------------------------------
# Trace


@dataclass
class Trace:
    config: dict
    manifest: dict
    manifest_hash: str
    admission: dict
    participants: list[str]
    initial: dict
    ticks: list[dict] = field(default_factory=list)
    verdict: str = "REJECTED"
    final_progress_rank: int | None = None
    ledger_root: str | None = None

    def body_dict(self) -> dict:
        return {
            "config": self.config,
            "manifest": self.manifest,
            "manifest_hash": self.manifest_hash,
            "admission": self.admission,
            "participants": self.participants,
            "initial": self.initial,
            "ticks": self.ticks,
            "verdict": self.verdict,
            "final_progress_rank": self.final_progress_rank,
            "ledger_root": self.ledger_root,
        }

    @property
    def trace_hash(self) -> str:
        return sha256_hex(canonical_json_bytes(self.body_dict()))

    def to_json_dict(self) -> dict:
        body = self.body_dict()
        body["trace_hash"] = self.trace_hash
        return body

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(canonical_json_bytes(self.to_json_dict()) + b"\n")

    @classmethod
    def load(cls, path: str | Path) -> "Trace":
        return cls.from_json_dict(json.loads(Path(path).read_text()))

    @classmethod
    def from_json_dict(cls, data: dict) -> "Trace":
        trace = cls(
            config=data["config"],
            manifest=data["manifest"],
            manifest_hash=data["manifest_hash"],
            admission=data["admission"],
            participants=data["participants"],
            initial=data["initial"],
            ticks=data["ticks"],
            verdict=data["verdict"],
            final_progress_rank=data["final_progress_rank"],
            ledger_root=data["ledger_root"],
        )
        recorded = data.get("trace_hash")
        if recorded is not None and recorded != trace.trace_hash:
            raise ValueError("trace hash does not match trace body")
        return trace


# ---------------------------------------------------------------------------
# Per-participant runtime


class _NodeRuntime:
    def __init__(self, node_id: str, signer: Signer, provider: providers.ExecutionProvider,
                 program: tuple[str, ...]):
        self.node_id = node_id
        self.signer = signer
        self.provider = provider
        self.program = program
        self.state = fsm.NodeState()
        self.ep_state = provider.fresh_state()
        self.pc = 0
        self.seq = 0
        self.seen_nonces: set[str] = set()
        self.share_sent = False
        self.share_ok = False

    @property
    def terminal(self) -> bool:
        return self.state.terminal


class _DispatchRequest:
    """A pending decision to issue one command this tick."""

    def __init__(self, kind: str, target: str, predicate_id: str | None = None,
                 reason: str | None = None, operator_id: str | None = None):
        self.kind = kind
        self.target = target
        self.predicate_id = predicate_id
        self.reason = reason
        self.operator_id = operator_id


class Session:
    """One admitted job: world construction plus the per-tick loop."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.rng = random.Random(config.seed)
        self.guardrail_config = guardrails.parse_guardrails(config.guardrails_text)
        self.job_id = f"job-{config.seed}"
        self.tick_index = 0
        self.prev_snapshot: AlignedSnapshotOrNone = None
        self.verdict: str | None = None
        self.safe_states = fsm.DEFAULT_SAFE_RELEASE_STATES
        self._injections: dict[tuple[int, str], list[str]] = {}
        for injection in config.injections:
            self._injections.setdefault((injection.tick, injection.node_id), []).append(
                injection.kind
            )
        self._override_queue: list[_DispatchRequest] = []
        self._abort_all_sent = False
        self._finalize_acked = False

        self.manifest = manifest_mod.compile_manifest(
            config.plugin,
            config.ep_id,
            self.guardrail_config,
            config.n_nodes,
            providers.DEFAULT_EP_REGISTRY,
            config.guardrails_text,
            job_id=self.job_id,
        )
        self.manifest_hash = manifest_mod.manifest_hash(self.manifest)
        self.admission = manifest_mod.admission_check(
            self.manifest,
            providers.DEFAULT_EP_REGISTRY,
            self.guardrail_config,
            config.guardrails_text,
        )

        self.ledger = audit.Ledger()
        self.ledger.append_object(
            0,
            "admission",
            {"result": self.admission.to_json_dict(), "manifest_hash": self.manifest_hash},
            meta={"verdict": self.admission.verdict, "manifest_hash": self.manifest_hash},
        )
        self.ledger.commit()

        self.nodes: list[_NodeRuntime] = []
        self.keyring = KeyRing()
        self.control_signer = Signer.from_seed(
            CONTROL_PLANE_ID, derive_seed(config.seed, CONTROL_PLANE_ID)
        )
        self.keyring.register_signer(self.control_signer)

        if not self.admission.admitted:
            self.verdict = "REJECTED"
            self.trace = self._empty_trace()
            return

        provider = providers.bind_ep(self.manifest)
        node_ids = [f"node-{i}" for i in range(config.n_nodes)]
        for node_id in node_ids:
            signer = Signer.from_seed(node_id, derive_seed(config.seed, node_id))
            self.keyring.register_signer(signer)
            self.nodes.append(
                _NodeRuntime(node_id, signer, providers.bind_ep(self.manifest), config.plugin.program)
            )
        self.agg_signer = Signer.from_seed(AGGREGATOR_ID, derive_seed(config.seed, AGGREGATOR_ID))
        self.keyring.register_signer(self.agg_signer)
        self.agg_provider = provider
        self.agg_state = fsm.AggregatorCore.WAIT
        self.agg_seq = 0
        self.agg_seen_nonces: set[str] = set()
        self._agg_abort_flag = False
        self._agg_isolate_flag = False

        self.control = fsm.ControlEngineState()
        self._pending_meta: dict[tuple[str, str], dict] = {}  # (nonce, target) -> info
        self._commands_by_nonce: dict[str, fsm.ACommand] = {}

        self.participants = node_ids + [AGGREGATOR_ID]
        self.collector = telemetry.Collector(
            manifest_hash=self.manifest_hash,
            metric_keys=self.manifest.metric_keys,
            participants=self.participants,
            keyring=self.keyring,
            audit_sink=self._record_reject,
        )
        self._tick_rejects: list[dict] = []

        self.trace = Trace(
            config=config.to_json_dict(),
            manifest=self.manifest.to_json_dict(),
            manifest_hash=self.manifest_hash,
            admission=self.admission.to_json_dict(),
            participants=list(self.participants),
            initial=self._world_view_dict(),
        )

    # -- helpers ------------------------------------------------------------

    def _empty_trace(self) -> Trace:
        return Trace(
            config=self.config.to_json_dict(),
            manifest=self.manifest.to_json_dict(),
            manifest_hash=self.manifest_hash,
            admission=self.admission.to_json_dict(),
            participants=[],
            initial={},
            verdict="REJECTED",
        )

    @property
    def admitted(self) -> bool:
        return self.admission.admitted

    @property
    def terminal(self) -> bool:
        if self.verdict in ("REJECTED",):
            return True
        if not hasattr(self, "agg_state"):
            return True
        return self.agg_state in fsm.TERMINAL_AGG_STATES and all(
            n.terminal for n in self.nodes
        )

    def world_state(self) -> fsm.WorldState:
        return fsm.WorldState(
            tick=self.tick_index,
            nodes={n.node_id: n.state for n in self.nodes},
            aggregator=self.agg_state,
            control=self.control,
        )

    def progress_rank(self) -> int:
        return fsm.mu(self.world_state())

    def _world_view_dict(self) -> dict:
        world = self.world_state()
        return {
            "states": {n.node_id: n.state.to_json_dict() for n in self.nodes},
            "aggregator": self.agg_state.value,
            "control": self.control.core.value,
            "pending_kinds": sorted(
                {self._commands_by_nonce[nonce].kind for nonce, _ in self.control.pending}
            ),
            "progress_rank": fsm.mu(world),
        }

    def _record_reject(self, reason: telemetry.RejectReason, frame: telemetry.MetricFrame) -> None:
        self.ledger.append_object(
            self.tick_index,
            "reject",
            frame.to_wire(),
            meta={"reason": reason.value, "node_id": frame.node_id},
        )
        self._tick_rejects.append({"node_id": frame.node_id, "reason": reason.value})

    def _faults_for(self, node_id: str) -> providers.FaultFlags:
        kinds = self._injections.get((self.tick_index, node_id), [])
        return providers.FaultFlags(
            invalid_share="invalid-share" in kinds,
            extra_epsilon=EXTRA_DP_EPSILON if "extra-dp-spend" in kinds else 0.0,
            noise_drain_bits=NOISE_DRAIN_BITS if "noise-drain" in kinds else 0,
        )

    def _silenced(self, node_id: str) -> bool:
        return "silence" in self._injections.get((self.tick_index, node_id), [])

    # -- overrides (gateway feedback path) ----------------------------------

    def enqueue_override(self, operator_id: str, kind: str, target: str, nonce: str) -> bool:
        """Queue an operator command for the next act phase; ledger the intent."""
        if self.terminal:
            return False
        self.ledger.append_object(
            self.tick_index,
            "override",
            {"operator_id": operator_id, "kind": kind, "target": target, "nonce": nonce},
            meta={"operator_id": operator_id, "kind": kind, "target": target, "nonce": nonce},
        )
        self._override_queue.append(
            _DispatchRequest(kind, target, operator_id=operator_id)
        )
        return True

    # -- tick phases ---------------------------------------------------------

    def tick(self) -> dict:
        assert not self.terminal, "tick() on a terminal world"
        tick = self.tick_index
        self._tick_rejects = []

        frames = self._data_plane_phase(tick)
        self._sense_ingest(frames)
        batch, snapshot = self.collector.seal(tick)
        self.ledger.append_object(
            tick, "frame-batch", batch.to_json_dict(),
            meta={"batch_hash": batch.batch_hash, "frames": str(len(batch.frame_hashes))},
        )

        fc = guardrails.forecast(self.prev_snapshot, snapshot)
        fired = guardrails.select_actions(self.guardrail_config, self.manifest, snapshot, fc)

        commands, acks = self._act_phase(tick, fired)

        if self.ledger.uncommitted:
            self.ledger.commit()

        world = self.world_state()
        safety_ok = fsm.check_safety(world, bool(fired), self.safe_states)
        record = {
            "tick": tick,
            **self._world_view_dict(),
            "snapshot": snapshot.to_json_dict(),
            "forecast": fc.to_json_dict(),
            "fired": [f.to_json_dict() for f in fired],
            "commands": [c.to_wire() for c in commands],
            "acks": [a.to_wire() for a in acks],
            "rejects": list(self._tick_rejects),
            "safety_ok": safety_ok,
            "world_digest": sha256_hex(canonical_json_bytes(world.to_json_dict())),
        }
        self.trace.ticks.append(record)
        self.prev_snapshot = snapshot
        self.tick_index += 1
        if self.terminal:
            self._finish()
        elif self.tick_index >= self.config.max_ticks:
            self.verdict = "max-ticks-exceeded"
            self._finish()
        return record

    def _finish(self) -> None:
        if self.verdict is None:
            self.verdict = (
                "FINALIZE" if self.agg_state is fsm.AggregatorCore.FINALIZE else "ABORTED"
            )
        self.ledger.close()
        self.trace.verdict = self.verdict
        self.trace.final_progress_rank = self.progress_rank()
        self.trace.ledger_root = self.ledger.last_root()

    def run(self) -> Trace:
        if not self.admitted:
            return self.trace
        while self.verdict is None:
            self.tick()
        return self.trace

    # -- phase 1: data plane --------------------------------------------------

    def _data_plane_phase(self, tick: int) -> list[telemetry.MetricFrame]:
        frames = []
        for node in self.nodes:
            if node.terminal or self._silenced(node.node_id):
                continue
            self._step_node_data_plane(node)
            frames.append(self._emit_frame(node, tick))
        if self.agg_state not in fsm.TERMINAL_AGG_STATES:
            frames.append(self._emit_aggregator_frame(tick))
        return frames

    def _step_node_data_plane(self, node: _NodeRuntime) -> None:
        faults = self._faults_for(node.node_id)
        if node.state.core is fsm.NodeCore.IDLE:
            node.state = fsm.node_step(node.state, fsm.NodeEvent.JOB_ADMITTED)
        elif node.state.core is fsm.NodeCore.PREF:
            node.state = fsm.node_step(node.state, fsm.NodeEvent.EP_BOUND)
        elif node.state.bootstrap_pending:
            # The budget reset occupies this data-plane slot; the program resumes
            # on the next tick.
            node.ep_state = node.provider.bootstrap(node.ep_state)
            node.state = fsm.NodeState(
                core=node.state.core, isolated=node.state.isolated, bootstrap_pending=False
            )
        elif node.state.core is fsm.NodeCore.INF and node.pc < len(node.program):
            opcode = node.program[node.pc]
            node.ep_state = node.provider.execute(node.ep_state, opcode, faults)
            advance = True
            if opcode == providers.OP_SEND:
                node.share_sent = True
                if providers.OP_VERIFY_SHARE not in node.program:
                    node.share_ok = True
            elif opcode == providers.OP_VERIFY_SHARE:
                if faults.invalid_share:
                    advance = False  # rejected share: retry next tick
                else:
                    node.share_ok = True
            if advance:
                node.pc += 1
            if node.pc >= len(node.program):
                node.share_ok = True  # nothing further to contribute
                node.state = fsm.node_step(node.state, fsm.NodeEvent.PLUGIN_FINISHED)
        # Injected faults that act on the provider state directly apply to any
        # non-terminal node, whether or not it executed an opcode this tick.
        node.ep_state = node.provider.apply_faults(node.ep_state, faults)

    def _emit_frame(self, node: _NodeRuntime, tick: int) -> telemetry.MetricFrame:
        node.seq += 1
        metrics = node.provider.metrics(node.ep_state, self.rng)
        return telemetry.sign_frame(self._build_frame(node.node_id, node.seq, tick, metrics), node.signer)

    def _emit_aggregator_frame(self, tick: int) -> telemetry.MetricFrame:
        self.agg_seq += 1
        metrics = self.agg_provider.metrics(self.agg_provider.fresh_state(), self.rng)
        return telemetry.sign_frame(
            self._build_frame(AGGREGATOR_ID, self.agg_seq, tick, metrics), self.agg_signer
        )

    def _build_frame(self, node_id: str, seq: int, tick: int, metrics: dict) -> telemetry.MetricFrame:
        values = {key: metrics.get(key) for key in telemetry.METRIC_KEYS}
        return telemetry.MetricFrame(
            node_id=node_id,
            seq=seq,
            noiseBits=values["noiseBits"],
            levelsLeft=values["levelsLeft"],
            epsilonSpent=values["epsilonSpent"],
            shareAuthFail=values["shareAuthFail"],
            lag_ms=values["lag_ms"],
            opLatency_ms=values["opLatency_ms"],
            timestamp=telemetry.tick_timestamp(tick),
        )

    # -- phase 2: sense --------------------------------------------------------

    def _sense_ingest(self, frames: list[telemetry.MetricFrame]) -> None:
        if self.config.concurrent_ingest:
            with concurrent.futures.ThreadPoolExecutor(max_workers=4) as pool:
                list(pool.map(self.collector.ingest, frames))
        else:
            for frame in frames:
                self.collector.ingest(frame)

    # -- phase 4: act ------------------------------------------------------------

    def _act_phase(self, tick: int, fired: list[guardrails.FiredAction]):
        commands: list[fsm.ACommand] = []
        acks: list[fsm.Ack] = []

        requests: list[_DispatchRequest] = self._handle_overdue_commands(tick, acks)

        for action in fired:
            pred = self.guardrail_config.predicate(action.predicate_id)
            target = {
                "firing-node": action.node_id,
                "all": "all",
                "aggregator": AGGREGATOR_ID,
            }[pred.target]
            requests.append(_DispatchRequest(action.kind, target, predicate_id=action.predicate_id))
        for node_id in self.collector.take_liveness_faults():
            requests.append(
                _DispatchRequest("A-ISOLATE_PARTY", node_id, reason="liveness-fault")
            )
        requests.extend(self._override_queue)
        self._override_queue = []

        commands += self._dispatch(tick, requests, acks)

        self._step_aggregator(bool(fired))

        if (
            self.agg_state is fsm.AggregatorCore.ABORTED
            and not self._abort_all_sent
            and any(not n.terminal for n in self.nodes)
        ):
            commands += self._dispatch(
                tick,
                [_DispatchRequest("A-ABORT_JOB", "all", reason="aggregator-aborted")],
                acks,
            )

        if self.agg_state is fsm.AggregatorCore.FINALIZE and not self._finalize_acked:
            self._finalize_acked = True
            for node in self.nodes:
                node.state = fsm.node_step(node.state, fsm.NodeEvent.FINALIZE_ACK)
        for node in self.nodes:
            if node.terminal:
                self.collector.mark_terminal(node.node_id)
        return commands, acks

    def _dispatch(self, tick: int, requests: list[_DispatchRequest], acks: list[fsm.Ack]):
        if not requests:
            return []
        self.control, commands = fsm.control_step(
            self.control,
            requests,
            job_id=self.job_id,
            tick=tick,
            signer=self.control_signer,
            resolve_target=lambda request: request.target,
            participants_for=self._participants_for,
        )
        meta_by_key = {}
        for request in requests:
            key = (request.kind, request.target)
            meta_by_key.setdefault(key, request)
        for command in commands:
            if command.kind == "A-ABORT_JOB" and command.target == "all":
                self._abort_all_sent = True
            request = meta_by_key[(command.kind, command.target)]
            meta = {"kind": command.kind, "target": command.target, "nonce": command.nonce}
            if request.predicate_id:
                meta["predicate_id"] = request.predicate_id
            if request.reason:
                meta["reason"] = request.reason
            if request.operator_id:
                meta["operator_id"] = request.operator_id
            self.ledger.append_object(tick, "command", command.to_wire(), meta=meta)
            self._commands_by_nonce[command.nonce] = command
            for participant in self._participants_for(command.target):
                self._pending_meta[(command.nonce, participant)] = {"issued": tick, "resent": False}
            self._deliver(command, tick, acks)
        return commands

    def _participants_for(self, target: str) -> tuple[str, ...]:
        if target == "all":
            return tuple(self.participants)
        return (target,)

    def _deliver(self, command: fsm.ACommand, tick: int, acks: list[fsm.Ack]) -> None:
        for participant in self._participants_for(command.target):
            if participant == AGGREGATOR_ID:
                self._deliver_to_aggregator(command, tick, acks)
            else:
                node = self._node(participant)
                if self._silenced(node.node_id):
                    continue  # no delivery; the command stays pending
                if command.nonce in node.seen_nonces:
                    continue  # idempotent re-delivery, no second ack
                node.seen_nonces.add(command.nonce)
                self._apply_command_to_node(node, command)
                acks.append(self._ack(command, node.node_id, tick, node.signer))

    def _deliver_to_aggregator(self, command: fsm.ACommand, tick: int, acks: list[fsm.Ack]) -> None:
        if command.nonce in self.agg_seen_nonces:
            return
        self.agg_seen_nonces.add(command.nonce)
        if command.kind == "A-ABORT_JOB":
            self._agg_abort_flag = True
        elif command.kind == "A-ISOLATE_PARTY" and command.target == AGGREGATOR_ID:
            self._agg_isolate_flag = True
        acks.append(self._ack(command, AGGREGATOR_ID, tick, self.agg_signer))

    def _apply_command_to_node(self, node: _NodeRuntime, command: fsm.ACommand) -> None:
        if command.kind == "A-BOOTSTRAP":
            node.state = fsm.node_step(node.state, fsm.NodeEvent.CMD_BOOTSTRAP)
        elif command.kind == "A-ABORT_JOB":
            node.state = fsm.node_step(node.state, fsm.NodeEvent.CMD_ABORT_JOB)
        elif command.kind == "A-ISOLATE_PARTY":
            if command.target == node.node_id:
                node.state = fsm.node_step(node.state, fsm.NodeEvent.CMD_ISOLATE)
                self.collector.mark_isolated(node.node_id)

    def _ack(self, command: fsm.ACommand, participant: str, tick: int, signer: Signer) -> fsm.Ack:
        ack = fsm.sign_ack(fsm.Ack(command.nonce, participant, tick), signer)
        self.ledger.append_object(
            tick, "ack", ack.to_wire(), meta={"nonce": ack.nonce, "node_id": participant}
        )
        self.control = fsm.control_absorb_ack(self.control, ack)
        self._pending_meta.pop((command.nonce, participant), None)
        return ack

    def _handle_overdue_commands(self, tick: int, acks: list[fsm.Ack]) -> list[_DispatchRequest]:
        """Re-send once after one tick; treat the target as faulty after two.

        Stale aborts and isolations are forced locally (the ledger records the
        forced transition); a stale bootstrap escalates to isolating its target.
        """
        requests: list[_DispatchRequest] = []
        for (nonce, participant), info in sorted(self._pending_meta.items()):
            command = self._commands_by_nonce[nonce]
            age = tick - info["issued"]
            if age >= ESCALATE_AFTER_TICKS:
                escalation = self._escalate(command, participant, tick)
                if escalation is not None:
                    requests.append(escalation)
            elif age >= RESEND_AFTER_TICKS and not info["resent"]:
                info["resent"] = True
                self._redeliver(command, participant, tick, acks)
        return requests

    def _redeliver(self, command: fsm.ACommand, participant: str, tick: int, acks: list[fsm.Ack]) -> None:
        if participant == AGGREGATOR_ID:
            self._deliver_to_aggregator(command, tick, acks)
            return
        node = self._node(participant)
        if self._silenced(node.node_id) or command.nonce in node.seen_nonces:
            return
        node.seen_nonces.add(command.nonce)
        self._apply_command_to_node(node, command)
        acks.append(self._ack(command, node.node_id, tick, node.signer))

    def _escalate(
        self, command: fsm.ACommand, participant: str, tick: int
    ) -> _DispatchRequest | None:
        self._pending_meta.pop((command.nonce, participant), None)
        self.control = fsm.control_absorb_ack(
            self.control, fsm.Ack(command.nonce, participant, tick)
        )
        if participant == AGGREGATOR_ID:
            if command.kind == "A-ABORT_JOB":
                self._agg_abort_flag = True
            return None
        if command.kind == "A-BOOTSTRAP":
            return _DispatchRequest("A-ISOLATE_PARTY", participant, reason="missed-ack")
        node = self._node(participant)
        if command.kind == "A-ABORT_JOB":
            node.state = fsm.node_step(node.state, fsm.NodeEvent.CMD_ABORT_JOB)
            note = "forced-abort"
        else:
            node.state = fsm.node_step(node.state, fsm.NodeEvent.CMD_ISOLATE)
            self.collector.mark_isolated(node.node_id)
            note = "forced-isolation"
        self.ledger.append_object(
            tick,
            "state-note",
            {"node_id": participant, "nonce": command.nonce, "note": note},
            meta={"node_id": participant, "note": note, "nonce": command.nonce},
        )
        return None

    def _node(self, node_id: str) -> _NodeRuntime:
        for node in self.nodes:
            if node.node_id == node_id:
                return node
        raise KeyError(node_id)

    def _step_aggregator(self, fired_this_tick: bool) -> None:
        non_isolated = [n for n in self.nodes if not n.state.isolated]
        view = fsm.AggregatorView(
            shares_complete=bool(non_isolated)
            and all(n.share_ok for n in non_isolated),
            quorum_met=len(non_isolated) >= self.config.quorum,
            finalize_guard=fsm.finalize_guard(
                {n.node_id: n.state for n in self.nodes}, fired_this_tick, self.safe_states
            ),
            abort=self._agg_abort_flag,
            isolate=self._agg_isolate_flag,
        )
        self.agg_state = fsm.aggregator_step(self.agg_state, view)
        self._agg_abort_flag = False
        self._agg_isolate_flag = False

    # -- gateway projection ----------------------------------------------------

    def state_view(self) -> dict:
        """Read-only projection for operators; payload blobs never appear."""
        last_tick = self.trace.ticks[-1] if self.trace.ticks else None
        nodes = []
        for node in self.nodes:
            metrics = {}
            if last_tick:
                frame = last_tick["snapshot"]["frames"].get(node.node_id)
                if frame:
                    metrics = {
                        k: frame[k]
                        for k in telemetry.METRIC_KEYS
                        if frame[k] is not None
                    }
            nodes.append(
                {
                    "id": node.node_id,
                    "state": node.state.core.value,
                    "isolated": node.state.isolated,
                    "metrics": metrics,
                }
            )
        return {
            "job_id": self.job_id,
            "tick": self.tick_index - 1,
            "nodes": nodes,
            "aggregator": self.agg_state.value if hasattr(self, "agg_state") else None,
            "progress_rank": self.progress_rank() if self.admitted else None,
            "fired": last_tick["fired"] if last_tick else [],
            "last_ledger_root": self.ledger.last_root(),
            "terminal": self.terminal,
            "verdict": self.verdict,
        }


AlignedSnapshotOrNone = telemetry.AlignedSnapshot | None


def run_scenario(config: SimConfig) -> Trace:
    """Run a config to termination; identical configs yield identical traces."""
    return Session(config).run()


def run_scenario_timed(config: SimConfig) -> tuple[Trace, float]:
    start = time.monotonic()
    trace = run_scenario(config)
    return trace, time.monotonic() - start
