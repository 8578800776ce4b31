"""Shared fixtures and instance builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from moeperf import ExpertWeights, Gating, ModelConfig
from moeperf.linalg import DTYPE

settings.register_profile(
    "ci",
    max_examples=50,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")

# Populated by tests/test_acceptance.py; echoed after the run so the
# criterion verdicts are visible even under captured output.
ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(1234))


def make_instance(
    seed: int,
    num_experts: int = 4,
    top_k: int = 2,
    hidden_dim: int = 8,
    ffn_dim: int = 12,
    batch: int = 9,
    gating: Gating = Gating.SOFTMAX,
):
    """Build ``(config, tokens, router_weight, weights)`` reproducibly."""
    config = ModelConfig(
        num_experts=num_experts,
        top_k=top_k,
        hidden_dim=hidden_dim,
        ffn_dim=ffn_dim,
        gating=gating,
    )
    gen = np.random.Generator(np.random.PCG64(seed))
    tokens = gen.standard_normal((batch, hidden_dim)).astype(DTYPE)
    router_weight = gen.standard_normal((hidden_dim, num_experts)).astype(DTYPE)
    weights = ExpertWeights.random(config, gen)
    return config, tokens, router_weight, weights
