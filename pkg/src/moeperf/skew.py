"""Synthetic routing-skew harness.

Token budget is fixed at ``T = num_tokens * top_k`` expanded assignments
for every distribution, so skew changes only *where* tokens land, never
how much work exists.  Combine weights are exactly ``1/k``: the harness
isolates placement effects from gate-value effects.

Sampling is pinned to a PCG64 stream seeded with ``spec.seed``.  Each slot
draws by inverse CDF on the rank distribution; a draw that repeats an
expert already chosen for the same token is rejected and redrawn, which
preserves the marginal popularity ordering while enforcing distinct
experts per token.  Zipf rank ``r`` maps to expert id ``r`` (expert 0 is
the most popular).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AllZero, InvalidSpec, ShapeMismatch
from .linalg import DTYPE
from .model import Gating, ModelConfig
from .router import RoutingResult

DISTRIBUTIONS = ("uniform", "zipf")

# Escape hatch for degenerate specs (e.g. huge alpha with k == E) where
# rejection sampling would effectively never terminate.
_MAX_DRAWS_PER_TOKEN = 100_000


@dataclass(frozen=True)
class SkewSpec:
    """Fully pins one synthetic routing draw."""

    distribution: str
    alpha: float | None
    seed: int
    num_tokens: int
    config: ModelConfig

    def __post_init__(self) -> None:
        if self.distribution not in DISTRIBUTIONS:
            raise InvalidSpec(
                f"unknown distribution {self.distribution!r}; "
                f"expected one of {DISTRIBUTIONS}"
            )
        if self.distribution == "zipf":
            if self.alpha is None or not self.alpha > 0:
                raise InvalidSpec("zipf requires alpha > 0")
        elif self.alpha is not None:
            raise InvalidSpec(f"{self.distribution} takes no alpha")
        if self.num_tokens < 0:
            raise InvalidSpec("num_tokens must be >= 0")
        if self.seed < 0:
            raise InvalidSpec("seed must be >= 0")


def zipf_probabilities(num_experts: int, alpha: float) -> np.ndarray:
    """Normalized rank popularities ``p[r] proportional to (r+1)^-alpha``."""
    if num_experts < 1:
        raise InvalidSpec("num_experts must be >= 1")
    if not alpha > 0:
        raise InvalidSpec("alpha must be > 0")
    ranks = np.arange(1, num_experts + 1, dtype=np.float64)
    weights = ranks ** (-float(alpha))
    return weights / weights.sum()


def synthesize_routing(spec: SkewSpec) -> RoutingResult:
    """Draw a routing table for ``spec`` (see module docstring for rules)."""
    config = spec.config
    num_experts, k = config.num_experts, config.top_k
    if spec.distribution == "zipf":
        probs = zipf_probabilities(num_experts, spec.alpha)
    else:
        probs = np.full(num_experts, 1.0 / num_experts)
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0  # close the interval against float round-off

    rng = np.random.Generator(np.random.PCG64(spec.seed))
    indices = np.empty((spec.num_tokens, k), dtype=np.int64)
    for t in range(spec.num_tokens):
        chosen: list[int] = []
        draws = 0
        while len(chosen) < k:
            if draws >= _MAX_DRAWS_PER_TOKEN:
                # Deterministic completion: most popular unchosen ranks.
                for e in range(num_experts):
                    if len(chosen) == k:
                        break
                    if e not in chosen:
                        chosen.append(e)
                break
            expert = int(np.searchsorted(cdf, rng.random(), side="right"))
            draws += 1
            if expert not in chosen:
                chosen.append(expert)
        indices[t] = chosen
    weights = np.full((spec.num_tokens, k), DTYPE(1.0 / k), dtype=DTYPE)
    return RoutingResult(indices=indices, weights=weights)


@dataclass(frozen=True)
class ImbalanceMetrics:
    """Distribution statistics of an expert histogram."""

    max_over_mean: float
    gini: float
    active_experts: int


def imbalance_metrics(counts) -> ImbalanceMetrics:
    """Compute load-imbalance statistics for one expert histogram.

    ``max_over_mean`` is 1.0 for a perfectly even split; ``gini`` uses the
    sorted-histogram form and reaches ``(E-1)/E`` when a single expert owns
    everything; ``active_experts`` counts experts with at least one token.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.ndim != 1 or counts.size == 0:
        raise ShapeMismatch("histogram must be a non-empty 1-D array")
    if counts.min() < 0:
        raise ValueError("histogram counts must be non-negative")
    total = int(counts.sum())
    if total == 0:
        raise AllZero("all-zero histogram has no imbalance metrics")
    num = counts.size
    mean = total / num
    sorted_counts = np.sort(counts).astype(np.float64)
    ranks = np.arange(1, num + 1, dtype=np.float64)
    gini = float(2.0 * np.sum(ranks * sorted_counts) / (num * total) - (num + 1) / num)
    return ImbalanceMetrics(
        max_over_mean=float(counts.max() / mean),
        gini=gini,
        active_experts=int(np.count_nonzero(counts)),
    )


# ---------------------------------------------------------------------------
# Routing interchange format
# ---------------------------------------------------------------------------

def routing_to_dict(routing: RoutingResult, spec: SkewSpec | None = None) -> dict:
    """Serialize a routing table (and optionally its generating spec)."""
    payload: dict = {
        "indices": routing.indices.tolist(),
        "weights": [[float(w) for w in row] for row in routing.weights],
    }
    if spec is not None:
        config = spec.config
        payload["spec"] = {
            "distribution": spec.distribution,
            "alpha": spec.alpha,
            "seed": spec.seed,
            "num_tokens": spec.num_tokens,
            "model": {
                "num_experts": config.num_experts,
                "top_k": config.top_k,
                "hidden_dim": config.hidden_dim,
                "ffn_dim": config.ffn_dim,
                "gating": config.gating.value,
                "element_bytes": config.element_bytes,
            },
        }
    return payload


def routing_from_dict(payload: dict) -> RoutingResult:
    """Deserialize a routing table; shape errors raise ShapeMismatch."""
    try:
        indices = np.asarray(payload["indices"], dtype=np.int64)
        weights = np.asarray(payload["weights"], dtype=DTYPE)
    except (KeyError, TypeError, ValueError) as exc:
        raise ShapeMismatch(f"malformed routing payload: {exc}") from exc
    if indices.ndim != 2 or weights.ndim != 2:
        raise ShapeMismatch("routing indices/weights must be 2-D")
    return RoutingResult(indices=indices, weights=weights)


def save_routing(path, routing: RoutingResult, spec: SkewSpec | None = None) -> None:
    Path(path).write_text(
        json.dumps(routing_to_dict(routing, spec), sort_keys=True, indent=2) + "\n"
    )


def load_routing(path) -> RoutingResult:
    return routing_from_dict(json.loads(Path(path).read_text()))


def spec_config_from_dict(model: dict) -> ModelConfig:
    """Rebuild a ModelConfig from the ``spec.model`` block of a dump."""
    return ModelConfig(
        num_experts=int(model["num_experts"]),
        top_k=int(model["top_k"]),
        hidden_dim=int(model["hidden_dim"]),
        ffn_dim=int(model["ffn_dim"]),
        gating=Gating(model.get("gating", "softmax")),
        element_bytes=int(model.get("element_bytes", 2)),
    )
