"""Mock execution providers with backend-specific metric dynamics.

Three behavioral mocks implement the shared opcode vocabulary: an FHE
provider that burns noise budget and ciphertext levels, a DP provider that
accumulates privacy spend, and an MPC provider that counts failed share
verifications.  Payloads are opaque; only the safety metrics and validity
flags are modeled.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace

from .manifest import EPDescriptor

OP_LOAD = "LOAD"
OP_MAP = "MAP"
OP_AGG_SUM = "AGG_SUM"
OP_AGG_COUNT = "AGG_COUNT"
OP_SEND = "SEND"
OP_VERIFY_SHARE = "VERIFY_SHARE"
OP_MERGE = "MERGE"
OP_BOOTSTRAP = "BOOTSTRAP"
OP_ADD_NOISE = "ADD_NOISE"
OP_RELEASE = "RELEASE"

ALL_OPCODES = (
    OP_LOAD,
    OP_MAP,
    OP_AGG_SUM,
    OP_AGG_COUNT,
    OP_SEND,
    OP_VERIFY_SHARE,
    OP_MERGE,
    OP_BOOTSTRAP,
    OP_ADD_NOISE,
    OP_RELEASE,
)

# Defaults chosen so that a handful of homomorphic ops lands on a 29-bit
# margin and nine noise additions land on a 0.72 spend, both easy to check
# by hand in golden traces.
FHE_INITIAL_NOISE_BITS = 41
FHE_INITIAL_LEVELS = 5
FHE_NOISE_COST_PER_OP = 4
DP_EPSILON_STEP = 0.08

_LAG_RANGE_MS = (50, 200)
_OP_LATENCY_RANGE_MS = (1.0, 5.0)


class PluginError(ValueError):
    pass


@dataclass(frozen=True)
class PluginDescriptor:
    """A job's program: an ordered list of opcodes."""

    name: str
    program: tuple[str, ...]

    def __post_init__(self):
        if not self.program:
            raise PluginError("plugin program must be non-empty")
        for op in self.program:
            if op not in ALL_OPCODES:
                raise PluginError(f"unknown opcode {op!r}")
        if OP_MERGE in self.program and OP_SEND in self.program:
            if self.program.index(OP_SEND) > self.program.index(OP_MERGE):
                raise PluginError("SEND must precede MERGE")
        if OP_RELEASE in self.program and self.program[-1] != OP_RELEASE:
            raise PluginError("RELEASE must be the last opcode")

    def to_json_dict(self) -> dict:
        return {"name": self.name, "dsl_ops": list(self.program)}


@dataclass(frozen=True)
class FheState:
    noiseBits: int = FHE_INITIAL_NOISE_BITS
    levelsLeft: int = FHE_INITIAL_LEVELS
    initial_noise: int = FHE_INITIAL_NOISE_BITS
    initial_levels: int = FHE_INITIAL_LEVELS
    noise_cost: int = FHE_NOISE_COST_PER_OP


@dataclass(frozen=True)
class DpState:
    epsilonSpent: float = 0.0
    epsilon_step: float = DP_EPSILON_STEP


@dataclass(frozen=True)
class MpcState:
    shareAuthFail: int = 0
    last_share_valid: bool = True


@dataclass(frozen=True)
class FaultFlags:
    """Injected per-tick fault effects the provider reacts to."""

    invalid_share: bool = False
    extra_epsilon: float = 0.0
    noise_drain_bits: int = 0


def _latency_metrics(rng: random.Random) -> dict:
    return {
        "lag_ms": rng.randint(*_LAG_RANGE_MS),
        "opLatency_ms": round(rng.uniform(*_OP_LATENCY_RANGE_MS), 3),
    }


class ExecutionProvider:
    """Shared provider behavior: state stepping plus metric emission."""

    descriptor: EPDescriptor

    def fresh_state(self):
        raise NotImplementedError

    def execute(self, state, opcode: str, faults: FaultFlags):
        """Apply one opcode to the provider state; returns the new state."""
        raise NotImplementedError

    def apply_faults(self, state, faults: FaultFlags):
        """Apply injected fault effects that act on the state directly."""
        return state

    def bootstrap(self, state):
        """Budget reset triggered by a bootstrap command; default no-op."""
        return state

    def metrics(self, state, rng: random.Random) -> dict:
        """Emit exactly this provider's metric keys for the current tick."""
        raise NotImplementedError

    def ep_execute(self, state, opcode: str, faults: FaultFlags, rng: random.Random):
        """One opcode step plus metric emission, as a single operation."""
        assert opcode in self.descriptor.implemented_ops, (
            f"{self.descriptor.ep_id} cannot execute {opcode}; admission must prevent this"
        )
        new_state = self.execute(state, opcode, faults)
        return new_state, self.metrics(new_state, rng)


class FheProvider(ExecutionProvider):
    """CKKS-style mock: compute ops burn noise budget, MAP burns a level."""

    descriptor = EPDescriptor(
        ep_id="mock-fhe-ckks",
        implemented_ops=frozenset(
            {OP_LOAD, OP_MAP, OP_AGG_SUM, OP_AGG_COUNT, OP_SEND, OP_MERGE, OP_BOOTSTRAP, OP_RELEASE}
        ),
        metric_keys=frozenset({"noiseBits", "levelsLeft", "lag_ms", "opLatency_ms"}),
    )

    def fresh_state(self) -> FheState:
        return FheState()

    def execute(self, state: FheState, opcode: str, faults: FaultFlags) -> FheState:
        if opcode == OP_BOOTSTRAP:
            return self.bootstrap(state)
        if opcode in (OP_MAP, OP_AGG_SUM, OP_AGG_COUNT):
            noise = max(0, state.noiseBits - state.noise_cost)
            levels = state.levelsLeft
            if opcode == OP_MAP:
                levels = max(0, levels - 1)
            return replace(state, noiseBits=noise, levelsLeft=levels)
        return state  # LOAD/SEND/MERGE/RELEASE touch latency only

    def apply_faults(self, state: FheState, faults: FaultFlags) -> FheState:
        if faults.noise_drain_bits:
            return replace(state, noiseBits=max(0, state.noiseBits - faults.noise_drain_bits))
        return state

    def bootstrap(self, state: FheState) -> FheState:
        return replace(state, noiseBits=state.initial_noise, levelsLeft=state.initial_levels)

    def metrics(self, state: FheState, rng: random.Random) -> dict:
        return {
            "noiseBits": state.noiseBits,
            "levelsLeft": state.levelsLeft,
            **_latency_metrics(rng),
        }


class DpProvider(ExecutionProvider):
    """Privacy accountant mock: every noise addition or release spends budget."""

    descriptor = EPDescriptor(
        ep_id="mock-dp",
        implemented_ops=frozenset(
            {OP_LOAD, OP_MAP, OP_AGG_SUM, OP_AGG_COUNT, OP_SEND, OP_MERGE, OP_ADD_NOISE, OP_RELEASE}
        ),
        metric_keys=frozenset({"epsilonSpent", "lag_ms", "opLatency_ms"}),
    )

    def fresh_state(self) -> DpState:
        return DpState()

    def execute(self, state: DpState, opcode: str, faults: FaultFlags) -> DpState:
        if opcode in (OP_ADD_NOISE, OP_RELEASE):
            return replace(state, epsilonSpent=state.epsilonSpent + state.epsilon_step)
        return state

    def apply_faults(self, state: DpState, faults: FaultFlags) -> DpState:
        if faults.extra_epsilon:
            return replace(state, epsilonSpent=state.epsilonSpent + faults.extra_epsilon)
        return state

    def metrics(self, state: DpState, rng: random.Random) -> dict:
        return {
            "epsilonSpent": round(state.epsilonSpent, 6),
            **_latency_metrics(rng),
        }


class MpcProvider(ExecutionProvider):
    """Share-verification mock: invalid proofs bump the party's failure count."""

    descriptor = EPDescriptor(
        ep_id="mock-mpc",
        implemented_ops=frozenset(
            {OP_LOAD, OP_AGG_SUM, OP_SEND, OP_VERIFY_SHARE, OP_MERGE, OP_RELEASE}
        ),
        metric_keys=frozenset({"shareAuthFail", "lag_ms", "opLatency_ms"}),
    )

    def fresh_state(self) -> MpcState:
        return MpcState()

    def execute(self, state: MpcState, opcode: str, faults: FaultFlags) -> MpcState:
        if opcode == OP_VERIFY_SHARE:
            if faults.invalid_share:
                return replace(
                    state, shareAuthFail=state.shareAuthFail + 1, last_share_valid=False
                )
            return replace(state, last_share_valid=True)
        return state

    def metrics(self, state: MpcState, rng: random.Random) -> dict:
        return {
            "shareAuthFail": state.shareAuthFail,
            **_latency_metrics(rng),
        }


_PROVIDERS = {
    FheProvider.descriptor.ep_id: FheProvider,
    DpProvider.descriptor.ep_id: DpProvider,
    MpcProvider.descriptor.ep_id: MpcProvider,
}

DEFAULT_EP_REGISTRY: dict[str, EPDescriptor] = {
    ep_id: cls.descriptor for ep_id, cls in _PROVIDERS.items()
}


def bind_ep(manifest, registry: dict[str, EPDescriptor] | None = None) -> ExecutionProvider:
    """Instantiate the provider named by an admitted manifest."""
    registry = DEFAULT_EP_REGISTRY if registry is None else registry
    assert manifest.ep_id in registry, (
        f"unknown provider {manifest.ep_id}; admission must prevent this"
    )
    cls = _PROVIDERS.get(manifest.ep_id)
    assert cls is not None, f"no implementation registered for {manifest.ep_id}"
    return cls()


# Demo plugins.  The aggregate demo runs unchanged under all three providers.
DEMO_PLUGIN = PluginDescriptor(
    "fed-aggregate", (OP_LOAD, OP_AGG_SUM, OP_SEND, OP_MERGE, OP_RELEASE)
)
FHE_PLUGIN = PluginDescriptor(
    "fhe-aggregate",
    (OP_LOAD, OP_MAP, OP_AGG_SUM, OP_AGG_SUM, OP_AGG_SUM, OP_SEND, OP_MERGE, OP_RELEASE),
)
DP_PLUGIN = PluginDescriptor(
    "dp-aggregate",
    (OP_LOAD, OP_MAP, OP_AGG_SUM, OP_ADD_NOISE, OP_ADD_NOISE, OP_SEND, OP_MERGE, OP_RELEASE),
)
MPC_PLUGIN = PluginDescriptor(
    "mpc-aggregate",
    (OP_LOAD, OP_AGG_SUM, OP_SEND, OP_VERIFY_SHARE, OP_MERGE, OP_RELEASE),
)

PLUGINS = {p.name: p for p in (DEMO_PLUGIN, FHE_PLUGIN, DP_PLUGIN, MPC_PLUGIN)}
