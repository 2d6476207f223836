"""Explicit-state exploration of the synchronous machine product.

Metric dynamics are abstracted away: each enabled predicate may fire
nondeterministically whenever the job is live, bounded by a per-predicate
fire budget (faults are finite).  The explorer walks every reachable
abstract state, checking the release-safety invariant and rank monotonicity
on every transition, and bounded liveness (every reachable state can still
reach rank zero).  Counterexample paths are reconstructed on violation.

The same transition rules double as a component-wise admissibility judge
used to replay recorded simulation traces through the abstract relation.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from itertools import combinations, product

NODE_CORES = ("IDLE", "PREF", "INF", "POSTF", "DONE", "ABORTED")
NODE_RANK = {"IDLE": 3, "PREF": 2, "INF": 1, "POSTF": 0, "DONE": 0, "ABORTED": 0}
AGG_RANK = {"WAIT": 2, "MERGE": 1, "FINALIZE": 0, "ABORTED": 0}
TERMINAL_NODE = ("DONE", "ABORTED")
TERMINAL_AGG = ("FINALIZE", "ABORTED")
ADVANCE = {"IDLE": "PREF", "PREF": "INF", "INF": "POSTF"}
SAFE_RELEASE = ("POSTF", "DONE")

# Predicate kinds in the fixed exploration order: repair, abort, isolate.
FIRE_KINDS = ("bootstrap", "abort", "isolate")

MUTATIONS = ("inf-to-pref", "finalize-ignores-fires")


@dataclass(frozen=True)
class AbstractWorld:
    """One explored state: per-node (core, isolated), aggregator core, and
    remaining fire budgets per predicate kind."""

    nodes: tuple[tuple[str, bool], ...]
    agg: str
    budgets: tuple[int, int, int]

    def rank(self) -> int:
        return sum(NODE_RANK[core] for core, _ in self.nodes) + AGG_RANK[self.agg]

    def describe(self) -> str:
        nodes = ",".join(
            core + ("*" if isolated else "") for core, isolated in self.nodes
        )
        return f"[{nodes}] agg={self.agg} budgets={self.budgets}"


@dataclass
class Violation:
    kind: str  # "safety" | "monotonicity"
    detail: str
    path: list[str]

    def to_json_dict(self) -> dict:
        return {"kind": self.kind, "detail": self.detail, "path": self.path}


@dataclass
class CheckReport:
    explored_states: int = 0
    safety_violations: list[Violation] = field(default_factory=list)
    monotonicity_violations: list[Violation] = field(default_factory=list)
    liveness: str = "ok"  # "ok" | "stuck-states" | "inconclusive"
    stuck_states: list[str] = field(default_factory=list)
    max_rank: int = 0
    divergences: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return (
            not self.safety_violations
            and not self.monotonicity_violations
            and self.liveness == "ok"
            and not self.divergences
        )

    def to_json_dict(self) -> dict:
        return {
            "explored_states": self.explored_states,
            "safety_violations": [v.to_json_dict() for v in self.safety_violations],
            "monotonicity_violations": [
                v.to_json_dict() for v in self.monotonicity_violations
            ],
            "liveness": self.liveness,
            "stuck_states": self.stuck_states,
            "max_rank": self.max_rank,
            "divergences": self.divergences,
            "ok": self.ok,
        }

    def summary(self) -> str:
        lines = [
            f"explored states:          {self.explored_states}",
            f"max rank observed:        {self.max_rank}",
            f"safety violations:        {len(self.safety_violations)}",
            f"monotonicity violations:  {len(self.monotonicity_violations)}",
            f"liveness:                 {self.liveness}",
        ]
        if self.divergences:
            lines.append(f"divergences:              {len(self.divergences)}")
        for violation in (self.safety_violations + self.monotonicity_violations)[:3]:
            lines.append(f"counterexample ({violation.kind}): {violation.detail}")
            for step in violation.path:
                lines.append(f"  {step}")
        if self.stuck_states:
            lines.append("stuck states (no path back to rank 0):")
            for state in self.stuck_states[:5]:
                lines.append(f"  {state}")
        lines.append("RESULT: " + ("ok" if self.ok else "VIOLATIONS FOUND"))
        return "\n".join(lines)


def _fire_choices(state: AbstractWorld):
    """All fire subsets permitted by budgets and feasibility this tick.

    Yields ((bootstrap, abort, victims), remaining budgets); predicates can
    only fire while the job is live.
    """
    if state.agg in TERMINAL_AGG:
        yield (False, False, ()), state.budgets
        return
    b1, b2, b3 = state.budgets
    live = [
        i
        for i, (core, isolated) in enumerate(state.nodes)
        if core not in TERMINAL_NODE and not isolated
    ]
    bootstrap_options = (False, True) if b1 > 0 else (False,)
    abort_options = (False, True) if b2 > 0 else (False,)
    victim_sets = [()]
    for size in range(1, min(b3, len(live)) + 1):
        victim_sets.extend(combinations(live, size))
    for fire_bootstrap in bootstrap_options:
        for fire_abort in abort_options:
            for victims in victim_sets:
                budgets = (
                    b1 - (1 if fire_bootstrap else 0),
                    b2 - (1 if fire_abort else 0),
                    b3 - len(victims),
                )
                yield (fire_bootstrap, fire_abort, victims), budgets


def _progress_options(core: str, isolated: bool, mutate: str | None):
    if core in TERMINAL_NODE or isolated:
        return (core,)
    options = [core]
    if core in ADVANCE:
        options.append(ADVANCE[core])
    if mutate == "inf-to-pref" and core == "INF":
        options.append("PREF")
    return tuple(options)


def _agg_options(
    agg: str,
    nodes: tuple[tuple[str, bool], ...],
    any_fire: bool,
    abort_fired: bool,
    quorum: int,
    mutate: str | None,
):
    if agg in TERMINAL_AGG:
        return (agg,)
    live = [(core, isolated) for core, isolated in nodes if not isolated]
    if abort_fired or len(live) < quorum:
        return ("ABORTED",)
    options = [agg]
    if agg == "WAIT" and live and all(core in ("INF", "POSTF") for core, _ in live):
        options.append("MERGE")
    if agg == "MERGE":
        guard_nodes = all(core in SAFE_RELEASE for core, _ in live)
        guard_fires = (not any_fire) or mutate == "finalize-ignores-fires"
        if guard_nodes and guard_fires:
            options.append("FINALIZE")
    return tuple(options)


def _successors(state: AbstractWorld, quorum: int, mutate: str | None):
    """Yield (label, next_state, fires_this_tick) for one synchronous tick."""
    results = {}
    progress_lists = [
        _progress_options(core, isolated, mutate) for core, isolated in state.nodes
    ]
    for progressed in product(*progress_lists):
        moved = tuple(
            (core, isolated)
            for core, (_, isolated) in zip(progressed, state.nodes)
        )
        for (fire_bootstrap, fire_abort, victims), budgets in _fire_choices(state):
            nodes = list(moved)
            if fire_abort:
                nodes = [
                    ("ABORTED", isolated) if core not in TERMINAL_NODE else (core, isolated)
                    for core, isolated in nodes
                ]
            for victim in victims:
                core, _ = nodes[victim]
                if core not in TERMINAL_NODE:
                    nodes[victim] = ("ABORTED", True)
            any_fire = fire_bootstrap or fire_abort or bool(victims)
            for agg_next in _agg_options(
                state.agg, tuple(nodes), any_fire, fire_abort, quorum, mutate
            ):
                base = tuple(nodes)
                death_variants = [base]
                if agg_next == "ABORTED":
                    alive = [
                        i for i, (core, isolated) in enumerate(base)
                        if core not in TERMINAL_NODE
                    ]
                    for size in range(1, len(alive) + 1):
                        for subset in combinations(alive, size):
                            variant = list(base)
                            for i in subset:
                                variant[i] = ("ABORTED", variant[i][1])
                            death_variants.append(tuple(variant))
                for variant in death_variants:
                    final_nodes = variant
                    if agg_next == "FINALIZE":
                        final_nodes = tuple(
                            ("DONE", isolated) if core == "POSTF" else (core, isolated)
                            for core, isolated in variant
                        )
                    nxt = AbstractWorld(final_nodes, agg_next, budgets)
                    fire_names = []
                    if fire_bootstrap:
                        fire_names.append("bootstrap")
                    if fire_abort:
                        fire_names.append("abort")
                    fire_names.extend(f"isolate(n{v})" for v in victims)
                    label = f"fires={'+'.join(fire_names) or 'none'} -> {nxt.describe()}"
                    results.setdefault((nxt, any_fire), label)
    for (nxt, any_fire), label in results.items():
        yield label, nxt, any_fire


def _safety_ok(state: AbstractWorld, fired_this_tick: bool) -> bool:
    if state.agg != "FINALIZE":
        return True
    if fired_this_tick:
        return False
    return all(
        core in SAFE_RELEASE for core, isolated in state.nodes if not isolated
    )


def _trace_back(parents, state) -> list[str]:
    path = []
    cursor = state
    while cursor is not None:
        prev = parents.get(cursor)
        if prev is None:
            path.append(f"init: {cursor.describe()}")
            break
        parent_state, label = prev
        path.append(label)
        cursor = parent_state
    path.reverse()
    return path


def explore(
    n_nodes: int,
    depth: int = 60,
    fire_budget: int = 2,
    quorum: int = 2,
    mutate: str | None = None,
    max_violations: int = 5,
) -> CheckReport:
    """Breadth-first reachability over the abstract relation.

    Checks at every transition: rank monotonicity and the release-safety
    invariant.  After exploration, every reachable state must still have a
    path to rank zero (bounded liveness); states without one are stuck.
    """
    if not 1 <= n_nodes <= 4:
        raise ValueError("n_nodes must be between 1 and 4")
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if mutate is not None and mutate not in MUTATIONS:
        raise ValueError(f"unknown mutation {mutate!r}; known: {MUTATIONS}")

    initial = AbstractWorld(
        nodes=tuple(("IDLE", False) for _ in range(n_nodes)),
        agg="WAIT",
        budgets=(fire_budget, fire_budget, fire_budget),
    )
    report = CheckReport()
    seen = {initial: 0}
    parents: dict[AbstractWorld, tuple[AbstractWorld, str] | None] = {initial: None}
    edges: dict[AbstractWorld, set[AbstractWorld]] = {}
    queue = deque([initial])
    depth_exhausted = False

    while queue:
        state = queue.popleft()
        level = seen[state]
        if level >= depth:
            depth_exhausted = True
            continue
        rank_here = state.rank()
        report.max_rank = max(report.max_rank, rank_here)
        for label, nxt, any_fire in _successors(state, quorum, mutate):
            edges.setdefault(state, set()).add(nxt)
            is_new = nxt not in seen
            if is_new:
                seen[nxt] = level + 1
                parents[nxt] = (state, label)
                queue.append(nxt)
            if nxt.rank() > rank_here and len(report.monotonicity_violations) < max_violations:
                path = _trace_back(parents, state) + [label]
                report.monotonicity_violations.append(
                    Violation(
                        "monotonicity",
                        f"rank {rank_here} -> {nxt.rank()}",
                        path,
                    )
                )
            if not _safety_ok(nxt, any_fire) and len(report.safety_violations) < max_violations:
                path = _trace_back(parents, state) + [label]
                report.safety_violations.append(
                    Violation(
                        "safety",
                        f"FINALIZE reached with fires or unsafe nodes: {nxt.describe()}",
                        path,
                    )
                )

    report.explored_states = len(seen)

    # Bounded liveness: backward closure from rank-zero states.
    reachable_zero = {s for s in seen if s.rank() == 0}
    closure = set(reachable_zero)
    changed = True
    while changed:
        changed = False
        for state, nexts in edges.items():
            if state not in closure and nexts & closure:
                closure.add(state)
                changed = True
    stuck = [s for s in seen if s not in closure]
    if depth_exhausted and stuck:
        report.liveness = "inconclusive"
        report.stuck_states = [s.describe() for s in stuck[:10]]
    elif stuck:
        report.liveness = "stuck-states"
        report.stuck_states = [s.describe() for s in stuck[:10]]
    return report


# ---------------------------------------------------------------------------
# Trace replay: an independent recomputation of rank and safety, plus a
# component-wise admissibility judge for every recorded transition.


def _tick_states(record: dict) -> dict:
    return {nid: (s["state"], s["isolated"]) for nid, s in record["states"].items()}


def _judge_node_move(
    before: tuple[str, bool],
    after: tuple[str, bool],
    context: dict,
) -> bool:
    (core_a, iso_a), (core_b, iso_b) = before, after
    if iso_a and not iso_b:
        return False  # isolation never clears
    if core_a in TERMINAL_NODE:
        return core_b == core_a and iso_b == iso_a
    if core_b == core_a and iso_b == iso_a:
        return True
    if core_b == "ABORTED" and iso_b:
        return True  # isolation: predicate, escalation, or operator driven
    if core_b == "ABORTED":
        # A job abort must be in evidence: a broadcast this tick or an already
        # aborted aggregator whose shutdown is still propagating.
        return context["abort_cmd"] or context["prev_agg"] == "ABORTED"
    if ADVANCE.get(core_a) == core_b:
        return True
    if core_a in ("INF", "POSTF") and core_b == "DONE":
        # A node may finish its program and receive the finalize ack within
        # the same tick the aggregator finalizes.
        return context["next_agg"] == "FINALIZE"
    return False


def _judge_agg_move(prev_agg: str, next_agg: str, context: dict) -> str | None:
    if prev_agg in TERMINAL_AGG:
        return None if next_agg == prev_agg else f"aggregator left terminal {prev_agg}"
    if next_agg == prev_agg:
        return None
    live = [s for s in context["next_states"].values() if not s[1]]
    if next_agg == "ABORTED":
        if context["abort_cmd"] or context["isolate_agg_cmd"] or len(live) < context["quorum"]:
            return None
        return "aggregator aborted without cause"
    if prev_agg == "WAIT" and next_agg == "MERGE":
        if live and all(core in ("INF", "POSTF", "DONE") for core, _ in live):
            return None
        return "merge before every live node could have contributed"
    if prev_agg == "MERGE" and next_agg == "FINALIZE":
        if context["fired"]:
            return "finalize while a predicate fired"
        if all(core in SAFE_RELEASE for core, _ in live):
            return None
        return "finalize with a live node outside the safe release set"
    return f"illegal aggregator move {prev_agg} -> {next_agg}"


def transition_admissible(
    prev_states: dict,
    prev_agg: str,
    record: dict,
    quorum: int,
) -> list[str]:
    """Check one recorded tick against the abstract relation; returns problems."""
    problems = []
    next_states = _tick_states(record)
    commands = record["commands"]
    context = {
        "abort_cmd": any(c["kind"] == "A-ABORT_JOB" for c in commands),
        "isolate_agg_cmd": any(
            c["kind"] == "A-ISOLATE_PARTY" and c["target"] == "aggregator"
            for c in commands
        ),
        "prev_agg": prev_agg,
        "next_agg": record["aggregator"],
        "next_states": next_states,
        "fired": record["fired"],
        "quorum": quorum,
    }
    for node_id, before in prev_states.items():
        after = next_states[node_id]
        if not _judge_node_move(before, after, context):
            problems.append(
                f"tick {record['tick']}: node {node_id} moved {before} -> {after}"
            )
    agg_problem = _judge_agg_move(prev_agg, record["aggregator"], context)
    if agg_problem:
        problems.append(f"tick {record['tick']}: {agg_problem}")
    if record["fired"] and prev_agg in TERMINAL_AGG:
        problems.append(f"tick {record['tick']}: predicate fired after termination")
    return problems


def check_trace(trace_dict: dict) -> CheckReport:
    """Replay a recorded trace independently of the simulator's bookkeeping.

    Recomputes the progress rank from the recorded machine states, re-evaluates
    the release-safety condition, re-checks monotonicity, and validates every
    transition against the abstract relation.
    """
    report = CheckReport()
    ticks = trace_dict.get("ticks", [])
    if not ticks:
        return report
    enabled = set(trace_dict["manifest"]["predicates"])
    quorum = trace_dict["config"].get("quorum", 2)

    prev_states = {
        nid: (s["state"], s["isolated"])
        for nid, s in trace_dict["initial"]["states"].items()
    }
    prev_agg = trace_dict["initial"]["aggregator"]
    prev_rank = trace_dict["initial"]["progress_rank"]
    recomputed = sum(NODE_RANK[c] for c, _ in prev_states.values()) + AGG_RANK[prev_agg]
    if recomputed != prev_rank:
        report.divergences.append(
            f"initial rank recorded {prev_rank}, recomputed {recomputed}"
        )
    report.explored_states = len(ticks)

    for record in ticks:
        states = _tick_states(record)
        rank_value = sum(NODE_RANK[c] for c, _ in states.values()) + AGG_RANK[record["aggregator"]]
        report.max_rank = max(report.max_rank, rank_value)
        if rank_value != record["progress_rank"]:
            report.divergences.append(
                f"tick {record['tick']}: rank recorded {record['progress_rank']},"
                f" recomputed {rank_value}"
            )
        if rank_value > prev_rank:
            report.monotonicity_violations.append(
                Violation(
                    "monotonicity",
                    f"tick {record['tick']}: rank {prev_rank} -> {rank_value}",
                    [],
                )
            )
        safety = True
        if record["aggregator"] == "FINALIZE":
            safety = not record["fired"] and all(
                core in SAFE_RELEASE
                for core, isolated in states.values()
                if not isolated
            )
        if safety != record["safety_ok"]:
            report.divergences.append(
                f"tick {record['tick']}: safety recorded {record['safety_ok']},"
                f" recomputed {safety}"
            )
        if not safety:
            report.safety_violations.append(
                Violation("safety", f"tick {record['tick']} violates release safety", [])
            )
        for fired in record["fired"]:
            if fired["predicate_id"] not in enabled:
                report.divergences.append(
                    f"tick {record['tick']}: fired predicate {fired['predicate_id']}"
                    " is not enabled in the manifest"
                )
        for problem in transition_admissible(prev_states, prev_agg, record, quorum):
            report.divergences.append(problem)
        prev_states, prev_agg, prev_rank = states, record["aggregator"], rank_value
    return report
