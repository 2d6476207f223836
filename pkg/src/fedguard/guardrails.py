"""Declarative guard-rail policy: parsing, one-tick forecasting, evaluation.

Predicates are Boolean expressions over the current metric frame (``m.<key>``)
and the one-tick forecast (``mhat.<key>``), bound to a control command and a
target.  The config lives in a versioned YAML file; expressions are parsed
into a typed tree at load time so evaluation can never fail at runtime.

Grammar::

    expr := or ; or := and ('||' and)* ; and := not ('&&' not)* ;
    not := '!'? cmp ; cmp := sum (('<'|'<='|'>'|'>='|'=='|'!=') sum)? ;
    sum := term (('+'|'-') term)* ; term := atom (('*'|'/') atom)* ;
    atom := number | constant-name | 'm.'key | 'mhat.'key | '(' expr ')'
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Mapping

import yaml

from .telemetry import METRIC_KEYS, AlignedSnapshot, MetricFrame

ACTIONS = ("A-BOOTSTRAP", "A-ABORT_JOB", "A-ISOLATE_PARTY")
TARGETS = ("firing-node", "all", "aggregator")

# Metrics that can never go negative; forecasts are clamped at zero.
NON_NEGATIVE_KEYS = frozenset(METRIC_KEYS)


class GuardrailParseError(ValueError):
    """Config or expression error, with a character position when applicable."""

    def __init__(self, message: str, position: int | None = None):
        self.position = position
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)


# ---------------------------------------------------------------------------
# Expression trees


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class MetricRef:
    source: str  # "m" | "mhat"
    key: str


@dataclass(frozen=True)
class Unary:
    op: str  # "!"
    operand: object


@dataclass(frozen=True)
class Binary:
    op: str
    left: object
    right: object


_COMPARISONS = {"<", "<=", ">", ">=", "==", "!="}
_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<metric>m(?:hat)?\.[A-Za-z_]\w*)"
    r"|(?P<number>\d+(?:\.\d+)?)"
    r"|(?P<name>[A-Za-z_]\w*)"
    r"|(?P<op>\|\||&&|<=|>=|==|!=|[!<>+\-*/()])"
    r")"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            if text[pos:].strip() == "":
                break
            raise GuardrailParseError(
                f"unexpected character {text[pos:].strip()[0]!r}", position=pos
            )
        kind = match.lastgroup
        tokens.append((kind, match.group(kind), match.start(kind)))
        pos = match.end()
    return tokens


class _Parser:
    def __init__(self, text: str, constants: Mapping[str, float]):
        self.text = text
        self.tokens = _tokenize(text)
        self.constants = constants
        self.index = 0

    def peek(self):
        return self.tokens[self.index] if self.index < len(self.tokens) else None

    def take(self):
        token = self.peek()
        if token is None:
            raise GuardrailParseError("unexpected end of input", position=len(self.text))
        self.index += 1
        return token

    def expect_op(self, op: str):
        token = self.take()
        if token[0] != "op" or token[1] != op:
            raise GuardrailParseError(f"expected {op!r}", position=token[2])

    def parse(self):
        tree, kind = self.parse_or()
        if self.peek() is not None:
            raise GuardrailParseError("trailing input", position=self.peek()[2])
        if kind != "bool":
            raise GuardrailParseError("expression must be Boolean at the root")
        return tree

    def parse_or(self):
        left, kind = self.parse_and()
        while self._at_op("||"):
            pos = self.take()[2]
            right, rkind = self.parse_and()
            self._require_bool(kind, rkind, pos)
            left, kind = Binary("||", left, right), "bool"
        return left, kind

    def parse_and(self):
        left, kind = self.parse_not()
        while self._at_op("&&"):
            pos = self.take()[2]
            right, rkind = self.parse_not()
            self._require_bool(kind, rkind, pos)
            left, kind = Binary("&&", left, right), "bool"
        return left, kind

    def parse_not(self):
        if self._at_op("!"):
            pos = self.take()[2]
            operand, kind = self.parse_not()
            if kind != "bool":
                raise GuardrailParseError("'!' needs a Boolean operand", position=pos)
            return Unary("!", operand), "bool"
        return self.parse_cmp()

    def parse_cmp(self):
        left, kind = self.parse_sum()
        token = self.peek()
        if token and token[0] == "op" and token[1] in _COMPARISONS:
            op = self.take()
            if kind != "num":
                raise GuardrailParseError("comparison needs numeric operands", position=op[2])
            right, rkind = self.parse_sum()
            if rkind != "num":
                raise GuardrailParseError("comparison needs numeric operands", position=op[2])
            return Binary(op[1], left, right), "bool"
        return left, kind

    def parse_sum(self):
        left, kind = self.parse_term()
        while self._at_op("+") or self._at_op("-"):
            op = self.take()
            right, rkind = self.parse_term()
            self._require_num(kind, rkind, op[2])
            left, kind = Binary(op[1], left, right), "num"
        return left, kind

    def parse_term(self):
        left, kind = self.parse_atom()
        while self._at_op("*") or self._at_op("/"):
            op = self.take()
            right, rkind = self.parse_atom()
            self._require_num(kind, rkind, op[2])
            left, kind = Binary(op[1], left, right), "num"
        return left, kind

    def parse_atom(self):
        token = self.take()
        kind, value, pos = token
        if kind == "number":
            return Num(float(value)), "num"
        if kind == "metric":
            source, key = value.split(".", 1)
            if key not in METRIC_KEYS:
                raise GuardrailParseError(f"unknown metric key {key!r}", position=pos)
            return MetricRef(source, key), "num"
        if kind == "name":
            if value not in self.constants:
                raise GuardrailParseError(f"unknown constant {value!r}", position=pos)
            return Num(float(self.constants[value])), "num"
        if kind == "op" and value == "(":
            tree, tkind = self.parse_or()
            self.expect_op(")")
            return tree, tkind
        raise GuardrailParseError(f"unexpected token {value!r}", position=pos)

    def _at_op(self, op: str) -> bool:
        token = self.peek()
        return token is not None and token[0] == "op" and token[1] == op

    @staticmethod
    def _require_bool(lkind, rkind, pos):
        if lkind != "bool" or rkind != "bool":
            raise GuardrailParseError("logical operator needs Boolean operands", position=pos)

    @staticmethod
    def _require_num(lkind, rkind, pos):
        if lkind != "num" or rkind != "num":
            raise GuardrailParseError("arithmetic needs numeric operands", position=pos)


def parse_expression(text: str, constants: Mapping[str, float]):
    """Parse one predicate expression; the root must be Boolean."""
    return _Parser(text, constants).parse()


def _collect_keys(node, out: set[str]) -> None:
    if isinstance(node, MetricRef):
        out.add(node.key)
    elif isinstance(node, Unary):
        _collect_keys(node.operand, out)
    elif isinstance(node, Binary):
        _collect_keys(node.left, out)
        _collect_keys(node.right, out)


@dataclass(frozen=True)
class Predicate:
    id: str
    expr_text: str
    expr: object
    action: str
    target: str

    def referenced_keys(self) -> frozenset[str]:
        keys: set[str] = set()
        _collect_keys(self.expr, keys)
        return frozenset(keys)


@dataclass(frozen=True)
class GuardrailConfig:
    version: int
    constants: dict[str, float]
    predicates: tuple[Predicate, ...]

    def predicate(self, pid: str) -> Predicate:
        for pred in self.predicates:
            if pred.id == pid:
                return pred
        raise KeyError(pid)

    def with_target(self, pid: str, target: str) -> "GuardrailConfig":
        """Copy of the config with one predicate's target replaced."""
        if target not in TARGETS:
            raise GuardrailParseError(f"unknown target {target!r}")
        updated = tuple(
            replace(p, target=target) if p.id == pid else p for p in self.predicates
        )
        return replace(self, predicates=updated)


def parse_guardrails(text: str) -> GuardrailConfig:
    """Parse and validate a guardrails YAML document."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise GuardrailParseError(f"invalid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise GuardrailParseError("config must be a mapping")
    version = data.get("version")
    if not isinstance(version, int):
        raise GuardrailParseError("missing integer 'version'")
    constants = data.get("constants") or {}
    for name, value in constants.items():
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise GuardrailParseError(f"constant {name!r} must be a number")
    predicates = []
    seen_ids: set[str] = set()
    for entry in data.get("predicates") or []:
        pid = entry.get("id")
        if not pid or pid in seen_ids:
            raise GuardrailParseError(f"missing or duplicate predicate id {pid!r}")
        seen_ids.add(pid)
        action = entry.get("action")
        if action not in ACTIONS:
            raise GuardrailParseError(f"{pid}: unknown action {action!r}")
        target = entry.get("target", "firing-node")
        if target not in TARGETS:
            raise GuardrailParseError(f"{pid}: unknown target {target!r}")
        expr_text = entry.get("expr")
        if not isinstance(expr_text, str):
            raise GuardrailParseError(f"{pid}: 'expr' must be a string")
        expr = parse_expression(expr_text, constants)
        predicates.append(Predicate(pid, expr_text, expr, action, target))
    return GuardrailConfig(
        version=version, constants=dict(constants), predicates=tuple(predicates)
    )


def render_guardrails(config: GuardrailConfig) -> str:
    """Render a config back to YAML text (the text is what gets hashed)."""
    doc = {
        "version": config.version,
        "constants": dict(config.constants),
        "predicates": [
            {"id": p.id, "expr": p.expr_text, "action": p.action, "target": p.target}
            for p in config.predicates
        ],
    }
    return yaml.safe_dump(doc, sort_keys=False)


DEFAULT_GUARDRAILS_YAML = """\
# Guard-rail policy: Boolean expressions over the current metric frame (m.*)
# and the one-tick forecast (mhat.*), each bound to a control command.
version: 1
constants:
  theta_fhe: 10
  epsilon_max: 1.0
  quorum_fail_threshold: 2
predicates:
  - id: p1
    expr: m.noiseBits < theta_fhe || mhat.noiseBits < theta_fhe
    action: A-BOOTSTRAP
    target: firing-node
  - id: p2
    expr: m.epsilonSpent > epsilon_max
    action: A-ABORT_JOB
    target: all
  - id: p3
    expr: m.shareAuthFail >= quorum_fail_threshold
    action: A-ISOLATE_PARTY
    target: firing-node
"""


# ---------------------------------------------------------------------------
# Forecasting


@dataclass(frozen=True)
class Forecast:
    """One-tick-ahead metric predictions per (node, key)."""

    tick: int
    values: Mapping[tuple[str, str], float]

    def for_node(self, node_id: str) -> dict[str, float]:
        return {key: v for (nid, key), v in self.values.items() if nid == node_id}

    def to_json_dict(self) -> dict:
        out: dict[str, dict[str, float]] = {}
        for (nid, key), value in sorted(self.values.items()):
            out.setdefault(nid, {})[key] = value
        return out


def forecast(prev: AlignedSnapshot | None, curr: AlignedSnapshot) -> Forecast:
    """Linear extrapolation from the last two frames, zero-order hold fallback.

    For a node present in both snapshots, each numeric metric is projected as
    ``curr + (curr - prev)``; inherently non-negative metrics are clamped at
    zero.  At job start or after a missed tick the current value is held.
    """
    values: dict[tuple[str, str], float] = {}
    for node_id, frame in curr.frames.items():
        prev_frame = prev.frames.get(node_id) if prev is not None else None
        for key, value in frame.metric_values().items():
            if value is None:
                continue
            prev_value = getattr(prev_frame, key) if prev_frame is not None else None
            if prev_value is None:
                predicted = float(value)
            else:
                predicted = float(value) + (float(value) - float(prev_value))
            if key in NON_NEGATIVE_KEYS:
                predicted = max(0.0, predicted)
            values[(node_id, key)] = predicted
    return Forecast(tick=curr.tick + 1, values=values)


# ---------------------------------------------------------------------------
# Evaluation


class _NullMetric(Exception):
    pass


def _eval(node, frame: MetricFrame, node_forecast: Mapping[str, float]):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, MetricRef):
        if node.source == "m":
            value = getattr(frame, node.key)
        else:
            value = node_forecast.get(node.key)
        if value is None:
            raise _NullMetric(node.key)
        return float(value)
    if isinstance(node, Unary):
        return not _eval(node.operand, frame, node_forecast)
    assert isinstance(node, Binary)
    op = node.op
    if op == "&&":
        return bool(_eval(node.left, frame, node_forecast)) and bool(
            _eval(node.right, frame, node_forecast)
        )
    if op == "||":
        return bool(_eval(node.left, frame, node_forecast)) or bool(
            _eval(node.right, frame, node_forecast)
        )
    left = _eval(node.left, frame, node_forecast)
    right = _eval(node.right, frame, node_forecast)
    if op == "+":
        return left + right
    if op == "-":
        return left - right
    if op == "*":
        return left * right
    if op == "/":
        if right == 0:
            raise _NullMetric("division by zero")
        return left / right
    if op == "<":
        return left < right
    if op == "<=":
        return left <= right
    if op == ">":
        return left > right
    if op == ">=":
        return left >= right
    if op == "==":
        return left == right
    assert op == "!="
    return left != right


def evaluate(
    pred: Predicate, frame: MetricFrame, node_forecast: Mapping[str, float]
) -> bool:
    """Evaluate a predicate over one frame and its forecast.

    Any sub-expression touching a null metric (or dividing by zero) makes the
    whole predicate false: a predicate over metrics the back-end does not
    produce is simply not applicable.
    """
    try:
        return bool(_eval(pred.expr, frame, node_forecast))
    except _NullMetric:
        return False


@dataclass(frozen=True)
class FiredAction:
    predicate_id: str
    node_id: str
    kind: str
    tick: int

    def to_json_dict(self) -> dict:
        return {
            "predicate_id": self.predicate_id,
            "node_id": self.node_id,
            "kind": self.kind,
            "tick": self.tick,
        }


def select_actions(
    config: GuardrailConfig,
    manifest,
    snapshot: AlignedSnapshot,
    fc: Forecast,
) -> list[FiredAction]:
    """Evaluate every enabled predicate against every participant frame.

    Results come back in (predicate config order, node id lexicographic)
    order; a (predicate, node) pair can fire at most once per tick.
    """
    fired: list[FiredAction] = []
    enabled = set(manifest.predicate_ids)
    for pred in config.predicates:
        if pred.id not in enabled:
            continue
        for node_id in sorted(snapshot.frames):
            frame = snapshot.frames[node_id]
            if evaluate(pred, frame, fc.for_node(node_id)):
                fired.append(FiredAction(pred.id, node_id, pred.action, snapshot.tick))
    return fired
