"""Transition tables, command protocol, ranking, and the safety check."""

import itertools

import pytest

from fedguard.fsm import (
    Ack,
    ACommand,
    AggregatorCore,
    AggregatorView,
    ControlCore,
    ControlEngineState,
    NodeCore,
    NodeEvent,
    NodeState,
    WorldState,
    aggregator_step,
    check_safety,
    control_absorb_ack,
    control_step,
    finalize_guard,
    mu,
    node_step,
    rank,
    rank_agg,
    sign_ack,
    sign_command,
    verify_ack,
    verify_command,
)
from fedguard.guardrails import FiredAction
from fedguard.signing import KeyRing, Signer, derive_seed


def node(core, isolated=False, pending=False):
    return NodeState(core=core, isolated=isolated, bootstrap_pending=pending)


# ---------------------------------------------------------------------------
# Node FSM


def test_nominal_lifecycle():
    state = NodeState()
    state = node_step(state, NodeEvent.JOB_ADMITTED)
    assert state.core is NodeCore.PREF
    state = node_step(state, NodeEvent.EP_BOUND)
    assert state.core is NodeCore.INF
    state = node_step(state, NodeEvent.PLUGIN_FINISHED)
    assert state.core is NodeCore.POSTF
    state = node_step(state, NodeEvent.FINALIZE_ACK)
    assert state.core is NodeCore.DONE


def test_bootstrap_marks_pending_without_leaving_inf():
    state = node(NodeCore.INF)
    stepped = node_step(state, NodeEvent.CMD_BOOTSTRAP)
    assert stepped.core is NodeCore.INF and stepped.bootstrap_pending


def test_abort_from_any_non_terminal():
    for core in (NodeCore.IDLE, NodeCore.PREF, NodeCore.INF, NodeCore.POSTF):
        stepped = node_step(node(core), NodeEvent.CMD_ABORT_JOB)
        assert stepped.core is NodeCore.ABORTED and not stepped.isolated


def test_isolate_sets_flag():
    stepped = node_step(node(NodeCore.INF), NodeEvent.CMD_ISOLATE)
    assert stepped.core is NodeCore.ABORTED and stepped.isolated


def test_terminal_states_absorb_everything():
    for core in (NodeCore.DONE, NodeCore.ABORTED):
        for event in NodeEvent:
            assert node_step(node(core), event).core is core


def test_unexpected_pairs_are_noops():
    for core in NodeCore:
        for event in NodeEvent:
            before = node(core)
            after = node_step(before, event)
            assert isinstance(after, NodeState)
            # Transition or no-op, the rank never increases.
            assert rank(after) <= rank(before)


def test_command_idempotent_on_every_state():
    for core in NodeCore:
        for event in (NodeEvent.CMD_BOOTSTRAP, NodeEvent.CMD_ABORT_JOB, NodeEvent.CMD_ISOLATE):
            once = node_step(node(core), event)
            twice = node_step(once, event)
            assert once == twice


# ---------------------------------------------------------------------------
# Aggregator FSM


def quorum_view(**kwargs):
    defaults = dict(shares_complete=False, quorum_met=True, finalize_guard=False)
    defaults.update(kwargs)
    return AggregatorView(**defaults)


def test_wait_to_merge_on_quorum_of_valid_shares():
    assert aggregator_step(AggregatorCore.WAIT, quorum_view(shares_complete=True)) is AggregatorCore.MERGE


def test_quorum_loss_aborts():
    assert aggregator_step(AggregatorCore.WAIT, quorum_view(quorum_met=False)) is AggregatorCore.ABORTED
    assert aggregator_step(AggregatorCore.MERGE, quorum_view(quorum_met=False)) is AggregatorCore.ABORTED


def test_merge_holds_until_guard():
    assert aggregator_step(AggregatorCore.MERGE, quorum_view()) is AggregatorCore.MERGE
    assert (
        aggregator_step(AggregatorCore.MERGE, quorum_view(finalize_guard=True))
        is AggregatorCore.FINALIZE
    )


def test_terminal_aggregator_absorbs():
    for core in (AggregatorCore.FINALIZE, AggregatorCore.ABORTED):
        assert aggregator_step(core, quorum_view(abort=True)) is core


def test_finalize_guard_rules():
    nodes = {"a": node(NodeCore.POSTF), "b": node(NodeCore.POSTF)}
    assert finalize_guard(nodes, fired_this_tick=False)
    assert not finalize_guard(nodes, fired_this_tick=True)
    nodes["b"] = node(NodeCore.INF)
    assert not finalize_guard(nodes, fired_this_tick=False)
    nodes["b"] = node(NodeCore.ABORTED, isolated=True)
    assert finalize_guard(nodes, fired_this_tick=False)


# ---------------------------------------------------------------------------
# Control engine and the command protocol


@pytest.fixture
def control_signer():
    return Signer.from_seed("control-plane", derive_seed("t", "control-plane"))


PARTICIPANTS = ("node-a", "node-b", "aggregator")


def run_control(fired, control=None, signer=None, tick=3):
    def resolve_target(action):
        return action.node_id if action.kind == "A-BOOTSTRAP" else "all"

    def participants_for(target):
        if target == "all":
            return PARTICIPANTS
        return (target,)

    return control_step(
        control or ControlEngineState(),
        fired,
        job_id="job-t",
        tick=tick,
        signer=signer,
        resolve_target=resolve_target,
        participants_for=participants_for,
    )


def test_broadcast_awaits_all_participants(control_signer):
    fired = [FiredAction("p2", "node-b", "A-ABORT_JOB", 3)]
    control, commands = run_control(fired, signer=control_signer)
    assert len(commands) == 1
    assert commands[0].target == "all"
    assert control.core is ControlCore.DISPATCH
    assert control.pending == {(commands[0].nonce, p) for p in PARTICIPANTS}


def test_duplicate_fires_coalesce_into_one_command(control_signer):
    fired = [
        FiredAction("p2", "node-a", "A-ABORT_JOB", 3),
        FiredAction("p2", "node-b", "A-ABORT_JOB", 3),
    ]
    _, commands = run_control(fired, signer=control_signer)
    assert len(commands) == 1


def test_no_fires_returns_to_ready(control_signer):
    control, commands = run_control([], signer=control_signer)
    assert commands == [] and control.core is ControlCore.READY


def test_acks_empty_pending(control_signer):
    fired = [FiredAction("p1", "node-a", "A-BOOTSTRAP", 3)]
    control, commands = run_control(fired, signer=control_signer)
    assert control.core is ControlCore.DISPATCH
    control = control_absorb_ack(control, Ack(commands[0].nonce, "node-a", 3))
    assert control.core is ControlCore.READY and not control.pending


def test_nonces_unique_across_ticks(control_signer):
    control, first = run_control([FiredAction("p1", "node-a", "A-BOOTSTRAP", 1)], signer=control_signer)
    control, second = run_control(
        [FiredAction("p1", "node-a", "A-BOOTSTRAP", 2)], control=control, signer=control_signer
    )
    assert first[0].nonce != second[0].nonce


def test_command_signature_roundtrip(control_signer):
    ring = KeyRing()
    ring.register_signer(control_signer)
    command = sign_command(ACommand("A-ABORT_JOB", "job-t", "all", "cmd-1", 0), control_signer)
    assert verify_command(command, ring, "control-plane")
    tampered = ACommand("A-ABORT_JOB", "job-t", "node-a", "cmd-1", 0, sig=command.sig)
    assert not verify_command(tampered, ring, "control-plane")


def test_ack_signature_roundtrip():
    signer = Signer.from_seed("node-a", derive_seed("t", "node-a"))
    ring = KeyRing()
    ring.register_signer(signer)
    ack = sign_ack(Ack("cmd-1", "node-a", 4), signer)
    assert verify_ack(ack, ring)


# ---------------------------------------------------------------------------
# Ranking and safety


def test_rank_values():
    assert rank(NodeCore.IDLE) == 3
    assert rank(NodeCore.PREF) == 2
    assert rank(NodeCore.INF) == 1
    assert rank(NodeCore.POSTF) == 0
    assert rank(NodeCore.DONE) == 0
    assert rank(NodeCore.ABORTED) == 0


def test_rank_agg_values():
    assert rank_agg(AggregatorCore.WAIT) == 2
    assert rank_agg(AggregatorCore.MERGE) == 1
    assert rank_agg(AggregatorCore.FINALIZE) == 0
    assert rank_agg(AggregatorCore.ABORTED) == 0


def world(nodes, agg, tick=0):
    return WorldState(tick=tick, nodes=nodes, aggregator=agg)


def test_mu_initial_world_three_nodes():
    nodes = {f"node-{i}": node(NodeCore.IDLE) for i in range(3)}
    assert mu(world(nodes, AggregatorCore.WAIT)) == 11


def test_mu_terminal_world_is_zero():
    nodes = {f"node-{i}": node(NodeCore.DONE) for i in range(3)}
    assert mu(world(nodes, AggregatorCore.FINALIZE)) == 0


def test_mu_mixed_world():
    nodes = {
        "a": node(NodeCore.INF),
        "b": node(NodeCore.POSTF),
        "c": node(NodeCore.ABORTED),
    }
    assert mu(world(nodes, AggregatorCore.MERGE)) == 2


def test_safety_holds_on_clean_finalize():
    nodes = {"a": node(NodeCore.POSTF), "b": node(NodeCore.POSTF)}
    assert check_safety(world(nodes, AggregatorCore.FINALIZE), fired_this_tick=False)


def test_safety_violated_by_unsafe_node():
    nodes = {"a": node(NodeCore.POSTF), "b": node(NodeCore.INF)}
    assert not check_safety(world(nodes, AggregatorCore.FINALIZE), fired_this_tick=False)


def test_safety_violated_by_fire_at_finalize():
    nodes = {"a": node(NodeCore.POSTF)}
    assert not check_safety(world(nodes, AggregatorCore.FINALIZE), fired_this_tick=True)


def test_safety_ignores_isolated_nodes():
    nodes = {"a": node(NodeCore.POSTF), "b": node(NodeCore.ABORTED, isolated=True)}
    assert check_safety(world(nodes, AggregatorCore.FINALIZE), fired_this_tick=False)


def test_safety_vacuous_before_finalize():
    nodes = {"a": node(NodeCore.IDLE)}
    for agg in (AggregatorCore.WAIT, AggregatorCore.MERGE, AggregatorCore.ABORTED):
        assert check_safety(world(nodes, agg), fired_this_tick=True)


def test_done_counts_as_release_safe():
    nodes = {"a": node(NodeCore.DONE), "b": node(NodeCore.POSTF)}
    assert check_safety(world(nodes, AggregatorCore.FINALIZE), fired_this_tick=False)


def test_node_transitions_never_increase_rank_exhaustive():
    for core, event in itertools.product(NodeCore, NodeEvent):
        before = node(core)
        assert rank(node_step(before, event)) <= rank(before)


def test_aggregator_transitions_never_increase_rank_exhaustive():
    views = [
        AggregatorView(shares_complete=s, quorum_met=q, finalize_guard=f, abort=a)
        for s in (False, True)
        for q in (False, True)
        for f in (False, True)
        for a in (False, True)
    ]
    for core in AggregatorCore:
        for view in views:
            assert rank_agg(aggregator_step(core, view)) <= rank_agg(core)
