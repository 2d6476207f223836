import random

import pytest

from fedguard.guardrails import DEFAULT_GUARDRAILS_YAML, parse_guardrails
from fedguard.signing import KeyRing, Signer, derive_seed
from fedguard.telemetry import MetricFrame, sign_frame, tick_timestamp


@pytest.fixture
def default_config():
    return parse_guardrails(DEFAULT_GUARDRAILS_YAML)


@pytest.fixture
def signer():
    return Signer.from_seed("node-0", derive_seed(42, "node-0"))


@pytest.fixture
def keyring(signer):
    ring = KeyRing()
    ring.register_signer(signer)
    return ring


def make_frame(
    node_id="node-0",
    seq=1,
    tick=0,
    noiseBits=29,
    levelsLeft=3,
    epsilonSpent=None,
    shareAuthFail=None,
    lag_ms=135,
    opLatency_ms=2.3,
):
    return MetricFrame(
        node_id=node_id,
        seq=seq,
        noiseBits=noiseBits,
        levelsLeft=levelsLeft,
        epsilonSpent=epsilonSpent,
        shareAuthFail=shareAuthFail,
        lag_ms=lag_ms,
        opLatency_ms=opLatency_ms,
        timestamp=tick_timestamp(tick),
    )


def signed_frame(signer, **kwargs):
    kwargs.setdefault("node_id", signer.participant_id)
    return sign_frame(make_frame(**kwargs), signer)


@pytest.fixture
def rng():
    return random.Random(7)
