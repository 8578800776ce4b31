"""Skew harness: Zipf sampling, imbalance metrics, routing interchange."""

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from moeperf.errors import AllZero, InvalidSpec, ShapeMismatch
from moeperf.linalg import DTYPE
from moeperf.model import ModelConfig, preset
from moeperf.scheduler import expert_histogram
from moeperf.skew import (
    SkewSpec,
    imbalance_metrics,
    load_routing,
    routing_from_dict,
    routing_to_dict,
    save_routing,
    spec_config_from_dict,
    synthesize_routing,
    zipf_probabilities,
)

# Frozen Zipf popularity oracle: E=4, alpha=2 -> weights 1, 1/4, 1/9, 1/16
# normalized by 205/144.
ZIPF_4_2 = [
    0.7024390243902439,
    0.17560975609756097,
    0.07804878048780488,
    0.043902439024390244,
]

SMALL = ModelConfig(num_experts=16, top_k=4, hidden_dim=8, ffn_dim=8)


def test_zipf_probabilities_frozen():
    np.testing.assert_allclose(zipf_probabilities(4, 2.0), ZIPF_4_2, rtol=1e-12)


@given(
    st.integers(min_value=1, max_value=300),
    st.floats(min_value=0.1, max_value=4.0, allow_nan=False),
)
def test_zipf_probabilities_properties(num_experts, alpha):
    probs = zipf_probabilities(num_experts, alpha)
    assert np.isclose(probs.sum(), 1.0, atol=1e-12)
    assert (np.diff(probs) < 0).all() or num_experts == 1  # rank 0 most popular
    assert (probs > 0).all()


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(distribution="normal", alpha=None),
        dict(distribution="zipf", alpha=None),
        dict(distribution="zipf", alpha=0.0),
        dict(distribution="zipf", alpha=-1.2),
        dict(distribution="uniform", alpha=1.0),
        dict(distribution="uniform", alpha=None, num_tokens=-1),
        dict(distribution="uniform", alpha=None, seed=-2),
    ],
)
def test_skew_spec_rejects_bad_combinations(kwargs):
    defaults = dict(
        distribution="uniform", alpha=None, seed=0, num_tokens=8, config=SMALL
    )
    defaults.update(kwargs)
    with pytest.raises(InvalidSpec):
        SkewSpec(**defaults)


def test_synthesis_is_deterministic_and_distinct():
    spec = SkewSpec(
        distribution="zipf", alpha=1.2, seed=77, num_tokens=64, config=SMALL
    )
    a = synthesize_routing(spec)
    b = synthesize_routing(spec)
    assert np.array_equal(a.indices, b.indices)
    assert np.array_equal(a.weights, b.weights)
    for row in a.indices:
        assert len(set(row.tolist())) == SMALL.top_k
    other = synthesize_routing(
        SkewSpec(distribution="zipf", alpha=1.2, seed=78, num_tokens=64, config=SMALL)
    )
    assert not np.array_equal(a.indices, other.indices)


def test_weights_are_exactly_one_over_k():
    spec = SkewSpec(
        distribution="uniform", alpha=None, seed=3, num_tokens=32, config=SMALL
    )
    routing = synthesize_routing(spec)
    assert (routing.weights == DTYPE(1.0 / SMALL.top_k)).all()


def test_budget_fixed_across_distributions():
    specs = [
        SkewSpec(distribution="uniform", alpha=None, seed=5, num_tokens=50, config=SMALL),
        SkewSpec(distribution="zipf", alpha=1.2, seed=5, num_tokens=50, config=SMALL),
        SkewSpec(distribution="zipf", alpha=2.0, seed=5, num_tokens=50, config=SMALL),
    ]
    for spec in specs:
        counts = expert_histogram(
            synthesize_routing(spec), SMALL.num_experts
        )
        assert counts.sum() == 50 * SMALL.top_k


def test_zipf_concentrates_load_on_low_ranks():
    spec = SkewSpec(
        distribution="zipf", alpha=2.0, seed=11, num_tokens=256, config=SMALL
    )
    counts = expert_histogram(synthesize_routing(spec), SMALL.num_experts)
    assert counts[:4].sum() > counts[4:].sum()


def test_imbalance_metrics_balanced_and_hot():
    balanced = imbalance_metrics(np.full(8, 5))
    assert balanced.max_over_mean == 1.0
    assert abs(balanced.gini) < 1e-12
    assert balanced.active_experts == 8
    hot = np.zeros(8, dtype=np.int64)
    hot[3] = 40
    metrics = imbalance_metrics(hot)
    assert metrics.max_over_mean == 8.0
    assert np.isclose(metrics.gini, 7 / 8, atol=1e-12)
    assert metrics.active_experts == 1


def test_imbalance_metrics_errors():
    with pytest.raises(AllZero):
        imbalance_metrics(np.zeros(4, dtype=np.int64))
    with pytest.raises(ValueError):
        imbalance_metrics(np.array([3, -1]))
    with pytest.raises(ShapeMismatch):
        imbalance_metrics(np.zeros((2, 2)))


@given(st.lists(st.integers(min_value=0, max_value=100), min_size=1, max_size=64))
def test_gini_bounds(counts):
    counts = np.asarray(counts, dtype=np.int64)
    if counts.sum() == 0:
        with pytest.raises(AllZero):
            imbalance_metrics(counts)
        return
    metrics = imbalance_metrics(counts)
    n = counts.size
    assert -1e-9 <= metrics.gini <= (n - 1) / n + 1e-9
    assert metrics.max_over_mean >= 1.0 - 1e-12
    assert 1 <= metrics.active_experts <= n


def test_routing_roundtrip(tmp_path):
    spec = SkewSpec(
        distribution="zipf", alpha=2.0, seed=9, num_tokens=12, config=SMALL
    )
    routing = synthesize_routing(spec)
    path = tmp_path / "routing.json"
    save_routing(path, routing, spec)
    loaded = load_routing(path)
    assert np.array_equal(loaded.indices, routing.indices)
    assert np.array_equal(loaded.weights, routing.weights)
    payload = json.loads(path.read_text())
    assert payload["spec"]["distribution"] == "zipf"
    assert payload["spec"]["model"]["num_experts"] == 16
    config = spec_config_from_dict(payload["spec"]["model"])
    assert config == SMALL


def test_routing_from_dict_validates():
    with pytest.raises(ShapeMismatch):
        routing_from_dict({"indices": [0, 1], "weights": [0.5, 0.5]})
    with pytest.raises(ShapeMismatch):
        routing_from_dict({"weights": [[0.5]]})
    with pytest.raises(ShapeMismatch):
        routing_from_dict({"indices": [[0], [1]], "weights": [[0.5]]})


def test_preset_scale_synthesis_is_fast_enough():
    config = preset("DeepSeekV3")
    spec = SkewSpec(
        distribution="zipf", alpha=2.0, seed=1, num_tokens=128, config=config
    )
    routing = synthesize_routing(spec)
    assert routing.indices.shape == (128, 8)
    counts = expert_histogram(routing, config.num_experts)
    assert counts.sum() == 1024
    # Heavy head: rank 0 is the busiest expert by construction.
    assert counts[0] == counts.max()
