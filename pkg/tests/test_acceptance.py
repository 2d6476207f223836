"""End-to-end acceptance suite.

Each test implements one acceptance criterion at its stated tolerance and
prints one PASS line on success (run with ``pytest -s`` to see them).  The
randomized criteria share a single batch of 1,000 simulations across all
three providers with up to five injected faults each.
"""

import json
import random
import time

import pytest

from fedguard import providers
from fedguard.audit import parse_ledger_bytes, verify_chain
from fedguard.cli import dispatch
from fedguard.guardrails import DEFAULT_GUARDRAILS_YAML
from fedguard.manifest import Manifest, guardrails_hash, save_ep_registry, save_manifest
from fedguard.providers import DEFAULT_EP_REGISTRY
from fedguard.simulator import (
    Injection,
    Session,
    SimConfig,
    run_scenario,
    run_scenario_timed,
    scenario_a,
    scenario_b,
    scenario_c,
)
from fedguard.verifier import explore

THETA_FHE = 10
EPSILON_MAX = 1.0

RANDOM_RUNS = 1000
RANDOM_RUN_BUDGET_S = 60.0
SCENARIO_BUDGET_S = 1.0
MODELCHECK_BUDGET_S = 30.0


def report(criterion: int, text: str) -> None:
    print(f"[PASS] criterion {criterion}: {text}")


def tick_commands(trace, kind):
    return [
        (t["tick"], c)
        for t in trace.ticks
        for c in t["commands"]
        if c["kind"] == kind
    ]


# ---------------------------------------------------------------------------
# Criterion 1: Scenario A golden trace


def test_criterion_1_scenario_a():
    trace, elapsed = run_scenario_timed(scenario_a(n_nodes=3, seed=42))
    assert elapsed < SCENARIO_BUDGET_S

    crossing_ticks = []
    prev = {}
    for record in trace.ticks:
        for node_id, frame in record["snapshot"]["frames"].items():
            noise = frame["noiseBits"]
            if noise is None:
                continue
            previous = prev.get(node_id)
            projected = noise if previous is None else max(0, noise + (noise - previous))
            if noise < THETA_FHE or projected < THETA_FHE:
                crossing_ticks.append(record["tick"])
            prev[node_id] = noise
    first_crossing = min(crossing_ticks)

    bootstraps = tick_commands(trace, "A-BOOTSTRAP")
    assert bootstraps, "no bootstrap dispatched"
    assert bootstraps[0][0] == first_crossing

    nonce = bootstraps[0][1]["nonce"]
    ack_ticks = [
        t["tick"] for t in trace.ticks for a in t["acks"] if a["nonce"] == nonce
    ]
    assert ack_ticks and max(ack_ticks) <= first_crossing + 1

    following = next(t for t in trace.ticks if t["tick"] == first_crossing + 1)
    for frame in following["snapshot"]["frames"].values():
        if frame["node_id"] != "aggregator":
            assert frame["noiseBits"] == providers.FHE_INITIAL_NOISE_BITS

    assert trace.verdict == "FINALIZE"
    assert tick_commands(trace, "A-ABORT_JOB") == []
    report(1, f"bootstrap at tick {first_crossing}, budgets restored, FINALIZE, "
              f"no aborts, {elapsed * 1000:.0f} ms")


# ---------------------------------------------------------------------------
# Criterion 2: Scenario B golden trace


def test_criterion_2_scenario_b():
    config = scenario_b(n_nodes=3, seed=42)
    start = time.monotonic()
    session = Session(config)
    trace = session.run()
    elapsed = time.monotonic() - start
    assert elapsed < SCENARIO_BUDGET_S

    overflow_tick = next(
        t["tick"]
        for t in trace.ticks
        if any(
            (f["epsilonSpent"] or 0.0) > EPSILON_MAX
            for f in t["snapshot"]["frames"].values()
        )
    )
    aborts = tick_commands(trace, "A-ABORT_JOB")
    assert [t for t, _ in aborts] == [overflow_tick]

    last = trace.ticks[-1]
    assert last["tick"] <= overflow_tick + 2
    assert all(s["state"] == "ABORTED" for s in last["states"].values())
    assert last["aggregator"] == "ABORTED"
    assert trace.verdict == "ABORTED"

    abort_records = [
        r for r in session.ledger.records
        if r.kind == "command" and r.meta.get("kind") == "A-ABORT_JOB"
    ]
    assert len(abort_records) == 1
    assert abort_records[0].meta["predicate_id"] == "p2"
    report(2, f"abort at tick {overflow_tick}, all terminal by {last['tick']}, "
              f"single p2 abort record, {elapsed * 1000:.0f} ms")


# ---------------------------------------------------------------------------
# Criterion 3: Scenario C golden trace


def test_criterion_3_scenario_c():
    trace, elapsed = run_scenario_timed(scenario_c(n_nodes=3, seed=42))
    assert elapsed < SCENARIO_BUDGET_S

    isolations = tick_commands(trace, "A-ISOLATE_PARTY")
    assert len(isolations) == 1
    assert isolations[0][1]["target"] == "node-1"
    assert trace.verdict == "FINALIZE"
    final = trace.ticks[-1]["states"]
    assert final["node-1"]["state"] == "ABORTED" and final["node-1"]["isolated"]
    assert final["node-0"]["state"] == "DONE" and not final["node-0"]["isolated"]
    report(3, f"isolated exactly node-1 at tick {isolations[0][0]}, FINALIZE, "
              f"{elapsed * 1000:.0f} ms")


# ---------------------------------------------------------------------------
# Criteria 4-6: randomized battery (safety, liveness, rank monotonicity)


PLUGIN_FOR = {
    "mock-fhe-ckks": providers.FHE_PLUGIN,
    "mock-dp": providers.DP_PLUGIN,
    "mock-mpc": providers.MPC_PLUGIN,
}
FAULTS_FOR = {
    "mock-fhe-ckks": ("noise-drain", "silence"),
    "mock-dp": ("extra-dp-spend", "silence"),
    "mock-mpc": ("invalid-share", "silence"),
}


def random_config(rng: random.Random) -> SimConfig:
    ep_id = rng.choice(list(PLUGIN_FOR))
    n_nodes = rng.choice((3, 3, 4))
    injections = tuple(
        Injection(
            tick=rng.randrange(0, 14),
            node_id=f"node-{rng.randrange(n_nodes)}",
            kind=rng.choice(FAULTS_FOR[ep_id]),
        )
        for _ in range(rng.randrange(0, 6))
    )
    return SimConfig(
        n_nodes=n_nodes,
        seed=rng.getrandbits(48),
        ep_id=ep_id,
        plugin=PLUGIN_FOR[ep_id],
        injections=injections,
    )


@pytest.fixture(scope="module")
def random_battery():
    rng = random.Random(0xFEDC0DE)
    traces = []
    start = time.monotonic()
    for _ in range(RANDOM_RUNS):
        traces.append(run_scenario(random_config(rng)))
    return traces, time.monotonic() - start


def test_criterion_4_safety_invariant_random_battery(random_battery):
    traces, elapsed = random_battery
    assert elapsed < RANDOM_RUN_BUDGET_S, f"battery took {elapsed:.1f}s"
    violations = sum(
        1 for trace in traces for t in trace.ticks if not t["safety_ok"]
    )
    assert violations == 0
    report(4, f"{len(traces)} randomized runs, 0 safety violations, {elapsed:.1f} s")


def test_criterion_5_liveness_random_battery(random_battery):
    traces, _ = random_battery
    for trace in traces:
        assert trace.verdict in ("FINALIZE", "ABORTED"), trace.verdict
        assert len(trace.ticks) <= 200
        assert trace.final_progress_rank == 0
    report(5, f"{len(traces)} runs all terminal within 200 ticks, final rank 0")


def test_criterion_6_rank_monotonicity(random_battery):
    traces, _ = random_battery
    goldens = [run_scenario(make()) for make in (scenario_a, scenario_b, scenario_c)]
    for trace in list(traces) + goldens:
        ranks = [trace.initial["progress_rank"]] + [
            t["progress_rank"] for t in trace.ticks
        ]
        assert all(b <= a for a, b in zip(ranks, ranks[1:])), ranks
    assert goldens[0].initial["progress_rank"] == 11
    report(6, "rank non-increasing in every trace; initial rank 11 for 3 nodes")


# ---------------------------------------------------------------------------
# Criterion 7: model checking with mutation sensitivity


def test_criterion_7_model_checking():
    start = time.monotonic()
    clean = explore(n_nodes=2, depth=60, fire_budget=2)
    assert clean.ok
    assert clean.safety_violations == [] and clean.stuck_states == []

    mutated_fsm = explore(n_nodes=2, depth=60, fire_budget=2, mutate="inf-to-pref")
    assert mutated_fsm.monotonicity_violations, "mutated transition table not caught"
    mutated_guard = explore(
        n_nodes=2, depth=60, fire_budget=2, mutate="finalize-ignores-fires"
    )
    assert mutated_guard.safety_violations, "mutated finalize guard not caught"
    elapsed = time.monotonic() - start
    assert elapsed < MODELCHECK_BUDGET_S
    report(7, f"{clean.explored_states} states, 0 violations, 0 stuck; both "
              f"mutations produce counterexamples, {elapsed:.1f} s")


# ---------------------------------------------------------------------------
# Criterion 8: admission fail-fast through the CLI


def test_criterion_8_admission_fail_fast(tmp_path, capsys):
    guardrails_path = tmp_path / "guardrails.yaml"
    guardrails_path.write_text(DEFAULT_GUARDRAILS_YAML)
    eps_path = tmp_path / "eps.json"
    save_ep_registry(DEFAULT_EP_REGISTRY, eps_path)

    def manifest_file(name, **overrides):
        fields = dict(
            job_id="job-acc",
            plugin_name="fed-aggregate",
            dsl_ops=frozenset({"LOAD", "AGG_SUM", "SEND", "MERGE", "RELEASE"}),
            ep_id="mock-fhe-ckks",
            predicate_ids=("p1",),
            metric_keys=frozenset({"noiseBits", "levelsLeft", "lag_ms", "opLatency_ms"}),
            n_nodes=3,
            guardrails_hash=guardrails_hash(DEFAULT_GUARDRAILS_YAML),
        )
        fields.update(overrides)
        path = tmp_path / name
        save_manifest(Manifest(**fields), path)
        return path

    def admit(path):
        code = dispatch(
            ["--json", "admit", str(path), "--ep-registry", str(eps_path),
             "--guardrails", str(guardrails_path)]
        )
        return code, json.loads(capsys.readouterr().out)

    code, body = admit(manifest_file(
        "p1-dp.json",
        ep_id="mock-dp",
        metric_keys=frozenset({"epsilonSpent", "lag_ms", "opLatency_ms"}),
    ))
    assert code == 1
    assert {"kind": "unbound-metric", "predicate_id": "p1", "metric_key": "noiseBits"} in body["reasons"]

    code, body = admit(manifest_file(
        "bootstrap-dp.json",
        ep_id="mock-dp",
        dsl_ops=frozenset({"LOAD", "BOOTSTRAP", "RELEASE"}),
        metric_keys=frozenset({"epsilonSpent", "lag_ms", "opLatency_ms"}),
        predicate_ids=("p2",),
    ))
    assert code == 1
    assert {"kind": "missing-opcode", "opcode": "BOOTSTRAP"} in body["reasons"]

    code, body = admit(manifest_file("fhe.json"))
    assert code == 0 and body["verdict"] == "admitted"
    report(8, "both malformed manifests rejected with structured reasons; "
              "well-formed FHE manifest admitted; exit codes 1/1/0")


# ---------------------------------------------------------------------------
# Criterion 9: telemetry hardening


def test_criterion_9_telemetry_hardening():
    from dataclasses import replace

    from fedguard.telemetry import Collector, RejectReason, sign_frame
    from fedguard.signing import KeyRing, Signer, derive_seed
    from fedguard.audit import Ledger
    from .conftest import make_frame

    signer = Signer.from_seed("node-0", derive_seed("acc", "node-0"))
    ring = KeyRing()
    ring.register_signer(signer)
    ledger = Ledger()
    collector = Collector(
        manifest_hash="11" * 32,
        metric_keys=frozenset({"noiseBits", "levelsLeft", "lag_ms", "opLatency_ms"}),
        participants=["node-0"],
        keyring=ring,
        audit_sink=lambda reason, frame: ledger.append_object(
            0, "reject", frame.to_wire(), meta={"reason": reason.value, "node_id": frame.node_id}
        ),
    )

    good = sign_frame(make_frame(seq=1), signer)
    assert collector.ingest(good).accepted

    replayed = collector.ingest(good)
    assert replayed.reason is RejectReason.REPLAY

    flipped = replace(sign_frame(make_frame(seq=2), signer), noiseBits=28)
    assert collector.ingest(flipped).reason is RejectReason.BAD_SIGNATURE

    deviating = sign_frame(make_frame(seq=3, epsilonSpent=0.5), signer)
    assert collector.ingest(deviating).reason is RejectReason.SCHEMA_MISMATCH

    reasons = [r.meta["reason"] for r in ledger.records if r.kind == "reject"]
    assert reasons == ["replay", "bad-signature", "schema-mismatch"]
    report(9, "replay, flipped-byte, schema-deviation each rejected and ledgered")


# ---------------------------------------------------------------------------
# Criterion 10: exhaustive ledger tamper evidence


def test_criterion_10_ledger_tamper_evidence(tmp_path):
    ledger_path = tmp_path / "scenario-c.ledger"
    assert dispatch(["run", "--scenario", "C", "--ledger", str(ledger_path)]) == 0
    data = ledger_path.read_bytes()
    assert verify_chain(data).ok

    parsed = parse_ledger_bytes(data)
    committed_end = max(b["end"] for b in parsed.blocks)
    committed_spans = [
        span
        for index, span in enumerate(parsed.record_spans)
        if parsed.records[index]["index"] < committed_end
    ]
    flips = 0
    for start, end in committed_spans:
        for offset in range(start, end):
            mutated = bytearray(data)
            mutated[offset] ^= 1
            try:
                result = verify_chain(bytes(mutated))
                detected = not result.ok
            except Exception:
                detected = True  # undecodable is detected too
            assert detected, f"flip at byte {offset} went unnoticed"
            flips += 1
    assert flips == sum(end - start for start, end in committed_spans)
    report(10, f"{flips} single-byte record mutations all detected; untouched ledger ok")


# ---------------------------------------------------------------------------
# Criterion 11: determinism


def test_criterion_11_determinism(tmp_path):
    paths = []
    for i in (1, 2):
        path = tmp_path / f"trace-{i}.json"
        assert dispatch(
            ["run", "--scenario", "A", "--nodes", "3", "--seed", "42", "--out", str(path)]
        ) == 0
        paths.append(path)
    first, second = (p.read_bytes() for p in paths)
    assert first == second
    assert json.loads(first)["trace_hash"] == json.loads(second)["trace_hash"]
    report(11, "same config twice: byte-identical trace.json")


# ---------------------------------------------------------------------------
# Criterion 12: backend swap


def test_criterion_12_backend_swap():
    sequences = {}
    for ep_id in ("mock-fhe-ckks", "mock-dp", "mock-mpc"):
        trace = run_scenario(
            SimConfig(n_nodes=3, seed=6, ep_id=ep_id, plugin=providers.DEMO_PLUGIN)
        )
        assert trace.verdict == "FINALIZE"
        sequences[ep_id] = [
            tuple(sorted((nid, s["state"]) for nid, s in t["states"].items()))
            for t in trace.ticks
        ]
    assert len({tuple(s) for s in sequences.values()}) == 1
    report(12, "demo plugin: identical node state sequences under all three providers")
