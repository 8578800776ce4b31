"""Expert-major permutation and block-schedule construction.

The expanded token stream (token ``t``, slot ``j`` gets id ``t*k + j``) is
sorted by destination expert with a stable sort, so within one expert the
original (token, slot) order is preserved.  The block schedule then tiles
each expert's contiguous row range into fixed-height row blocks: expert
``e`` with ``n_e`` rows contributes ``ceil(n_e / block_m)`` entries
``(e, b * block_m)`` whose offsets are expert-local.  The final entry of an
expert is partial whenever ``block_m`` does not divide ``n_e``; downstream
GEMMs mask it by clamping the row count, never by padding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IndexOutOfRange, InvalidBlockM, ShapeMismatch
from .router import RoutingResult


@dataclass(frozen=True)
class ExpertOffsets:
    """Exclusive prefix sums of the expert histogram.

    ``offsets`` has ``E + 1`` entries; expert ``e`` owns permuted rows
    ``offsets[e]:offsets[e + 1]`` and ``offsets[E]`` is the expanded total
    ``T = B * k``.
    """

    offsets: np.ndarray

    def __post_init__(self) -> None:
        if self.offsets.ndim != 1 or self.offsets.size < 1:
            raise ShapeMismatch("offsets must be a 1-D array of length E + 1")

    @property
    def num_experts(self) -> int:
        return self.offsets.size - 1

    @property
    def total(self) -> int:
        return int(self.offsets[-1])

    def count(self, e: int) -> int:
        """Number of expanded rows assigned to expert ``e``."""
        return int(self.offsets[e + 1] - self.offsets[e])


@dataclass(frozen=True)
class Permutation:
    """Forward/inverse maps between expanded order and expert-major order.

    ``forward[r]`` is the expanded id (``t*k + j``) living at permuted row
    ``r``; ``inverse`` is its inverse, mapping expanded id to permuted row.
    """

    forward: np.ndarray
    inverse: np.ndarray

    def __post_init__(self) -> None:
        if self.forward.shape != self.inverse.shape or self.forward.ndim != 1:
            raise ShapeMismatch("forward/inverse must be 1-D and equal length")


@dataclass(frozen=True)
class BlockSchedule:
    """Flat list of ``(expert_id, expert-local row offset)`` tile entries."""

    entries: tuple[tuple[int, int], ...]
    block_m: int

    def __len__(self) -> int:
        return len(self.entries)


def expert_histogram(routing: RoutingResult, num_experts: int) -> np.ndarray:
    """Count expanded assignments per expert (int64, length E)."""
    routing.validate(num_experts)
    flat = routing.indices.reshape(-1)
    return np.bincount(flat, minlength=num_experts).astype(np.int64)


def expert_offsets(counts) -> ExpertOffsets:
    """Exclusive prefix-sum of a histogram into :class:`ExpertOffsets`."""
    counts = np.asarray(counts, dtype=np.int64)
    if counts.ndim != 1:
        raise ShapeMismatch("histogram must be 1-D")
    if counts.size and counts.min() < 0:
        raise IndexOutOfRange("histogram counts must be non-negative")
    offsets = np.zeros(counts.size + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return ExpertOffsets(offsets=offsets)


def build_permutation(routing: RoutingResult) -> Permutation:
    """Stable expert-major sort of the expanded token stream."""
    flat = routing.indices.reshape(-1)
    forward = np.argsort(flat, kind="stable")
    inverse = np.empty_like(forward)
    inverse[forward] = np.arange(forward.size, dtype=forward.dtype)
    return Permutation(forward=forward, inverse=inverse)


def build_block_schedule(offsets: ExpertOffsets, block_m: int) -> BlockSchedule:
    """Tile every expert's row range into ``ceil(n_e / block_m)`` entries."""
    if not isinstance(block_m, (int, np.integer)) or isinstance(block_m, bool):
        raise InvalidBlockM(f"block_m must be an integer, got {block_m!r}")
    if block_m < 1:
        raise InvalidBlockM(f"block_m must be >= 1, got {block_m}")
    entries: list[tuple[int, int]] = []
    for e in range(offsets.num_experts):
        n_e = offsets.count(e)
        for start in range(0, n_e, block_m):
            entries.append((e, start))
    return BlockSchedule(entries=tuple(entries), block_m=int(block_m))
