"""Gate scoring and top-k expert selection.

Selection is an iterative argmax: the best-scoring expert is taken, its
score is overwritten with -1.0 (strictly below any softmax or sigmoid
output, so it can never be picked again even among exact-zero scores), and
the argmax repeats k times.  ``np.argmax`` resolves ties toward the lowest
expert index, which fixes the tie-break deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IndexOutOfRange, InvalidK, ShapeMismatch
from .linalg import DTYPE, as_matrix, dense_matmul, require_finite, sigmoid
from .model import Gating, ModelConfig


@dataclass(frozen=True)
class RoutingResult:
    """Top-k routing decision for a batch of tokens.

    ``indices`` is ``(B, k)`` int64 expert ids in selection order
    (descending score); ``weights`` is the matching ``(B, k)`` float32
    combine weights.
    """

    indices: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        if self.indices.shape != self.weights.shape:
            raise ShapeMismatch(
                f"indices {self.indices.shape} and weights "
                f"{self.weights.shape} disagree"
            )
        if self.indices.ndim != 2:
            raise ShapeMismatch("routing arrays must be 2-D (B, k)")

    @property
    def num_tokens(self) -> int:
        return self.indices.shape[0]

    @property
    def top_k(self) -> int:
        return self.indices.shape[1]

    def validate(self, num_experts: int) -> None:
        """Check every expert id lies in ``[0, num_experts)``."""
        if self.indices.size and (
            self.indices.min() < 0 or self.indices.max() >= num_experts
        ):
            raise IndexOutOfRange(
                f"expert ids must lie in [0, {num_experts}), got range "
                f"[{self.indices.min()}, {self.indices.max()}]"
            )


def stable_softmax_row(row: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax of one logit row, float32 in and out."""
    row = np.asarray(row, dtype=DTYPE)
    shifted = row - row.max()
    exps = np.exp(shifted.astype(np.float64))
    return (exps / exps.sum()).astype(DTYPE)


def gate_scores(logits, mode: Gating) -> np.ndarray:
    """Normalize router logits into per-expert gate scores.

    Softmax runs max-subtracted per row; sigmoid is applied elementwise
    (per-token renormalization over the selected k happens later, in
    :func:`topk_select`).  Non-finite logits are rejected.
    """
    logits = as_matrix(logits, "logits")
    require_finite(logits, "logits")
    if mode is Gating.SOFTMAX:
        if logits.shape[0] == 0:
            return logits.copy()
        shifted = logits - logits.max(axis=1, keepdims=True)
        exps = np.exp(shifted.astype(np.float64))
        return (exps / exps.sum(axis=1, keepdims=True)).astype(DTYPE)
    return sigmoid(logits)


def topk_select(scores, k: int, mode: Gating = Gating.SOFTMAX) -> RoutingResult:
    """Pick the k best-scoring experts per token.

    For :data:`Gating.SIGMOID_NORMALIZED` the selected sigmoid scores are
    renormalized to sum to one per token; a token whose selected scores sum
    to zero falls back to uniform ``1/k`` weights.
    """
    scores = as_matrix(scores, "scores")
    num_tokens, num_experts = scores.shape
    if not 1 <= k <= num_experts:
        raise InvalidK(f"k must be in [1, {num_experts}], got {k}")

    work = scores.copy()
    rows = np.arange(num_tokens)
    indices = np.empty((num_tokens, k), dtype=np.int64)
    weights = np.empty((num_tokens, k), dtype=DTYPE)
    for j in range(k):
        best = np.argmax(work, axis=1) if num_tokens else np.empty(0, dtype=np.int64)
        indices[:, j] = best
        weights[:, j] = scores[rows, best]
        work[rows, best] = -1.0
    if mode is Gating.SIGMOID_NORMALIZED and num_tokens:
        sums = weights.sum(axis=1, keepdims=True)
        safe = np.where(sums == 0.0, DTYPE(1.0), sums)
        weights = (weights / safe).astype(DTYPE)
        weights[(sums == 0.0).ravel()] = DTYPE(1.0 / k)
    return RoutingResult(indices=indices, weights=weights)


def route(tokens, router_weight, config: ModelConfig) -> RoutingResult:
    """Full router: logits = tokens @ router_weight, normalize, top-k."""
    tokens = as_matrix(tokens, "tokens")
    router_weight = as_matrix(router_weight, "router_weight")
    if tokens.shape[1] != config.hidden_dim:
        raise ShapeMismatch(
            f"tokens are {tokens.shape}, expected hidden dim {config.hidden_dim}"
        )
    if router_weight.shape != (config.hidden_dim, config.num_experts):
        raise ShapeMismatch(
            f"router weight is {router_weight.shape}, expected "
            f"({config.hidden_dim}, {config.num_experts})"
        )
    require_finite(tokens, "tokens")
    require_finite(router_weight, "router_weight")
    logits = dense_matmul(tokens, router_weight)
    scores = gate_scores(logits, config.gating)
    return topk_select(scores, config.top_k, config.gating)
