"""Analytical cost model: FLOPs, bytes, roofline placement, launch counts.

Two byte conventions coexist and reports always say which one they use:

* **Minimal traffic** -- every tensor moves across HBM exactly once per
  stage: activations are read/written once, and each *active* expert's
  weights are read once.  This is the idealized lower bound that feeds the
  roofline (:class:`StageStats`).
* **Tile trace** -- what the blocked executors actually count
  (:class:`moeperf.pipeline.PipelineTrace`): weights are recharged on every
  schedule-entry visit, so traffic grows as tiles shrink.

The fused/unfused activation-traffic comparison is exposed both ways: as a
closed form (:func:`activation_traffic_closed_form`) and extracted from
tile traces (:func:`traffic_from_traces`); for matching shapes the two
agree exactly, because the per-entry input reads telescope to one read per
expanded token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import DegenerateStage, ShapeMismatch
from .model import HardwareProfile, ModelConfig
from .pipeline import (
    INDEX_BYTES,
    STAGE_DOWN,
    STAGE_GATE_UP,
    STAGE_HOST_SCHEDULE,
    STAGE_PERMUTE,
    STAGE_ROUTER,
    STAGE_UNPERMUTE,
    PipelineParams,
    PipelineTrace,
    trace_from_counts,
)


class Stage(str, Enum):
    """Pipeline stages, matching the labels used in traces."""

    ROUTER = STAGE_ROUTER
    PERMUTE = STAGE_PERMUTE
    GATE_UP = STAGE_GATE_UP
    DOWN = STAGE_DOWN
    UNPERMUTE = STAGE_UNPERMUTE
    HOST_SCHEDULE = STAGE_HOST_SCHEDULE


#: Device stages in execution order (host scheduling launches nothing).
DEVICE_STAGE_ORDER = (
    Stage.ROUTER,
    Stage.PERMUTE,
    Stage.GATE_UP,
    Stage.DOWN,
    Stage.UNPERMUTE,
)


class Verdict(str, Enum):
    MEMORY_BOUND = "MemoryBound"
    COMPUTE_BOUND = "ComputeBound"


class TrafficSource(str, Enum):
    CLOSED_FORM = "ClosedForm"
    TILE_TRACE = "TileTrace"


@dataclass(frozen=True)
class StageStats:
    """Roofline placement of one stage (or an aggregate of stages)."""

    stage: str
    flops: int
    bytes: int
    arithmetic_intensity: float
    verdict: Verdict
    predicted_seconds: float


@dataclass(frozen=True)
class TrafficReport:
    """Activation bytes moved by the FFN front half, fused vs unfused."""

    unfused_bytes: int
    fused_bytes: int
    savings_bytes: int
    savings_ratio: float
    source: TrafficSource


def roofline(stage: str, flops: int, nbytes: int, hw: HardwareProfile) -> StageStats:
    """Place one stage on the roofline.

    Verdict is compute-bound iff AI >= ridge point; predicted time is the
    max of the compute and memory times.  A stage with neither FLOPs nor
    bytes has no placement and raises :class:`DegenerateStage`.
    """
    if flops == 0 and nbytes == 0:
        raise DegenerateStage(f"stage {stage!r} has zero flops and zero bytes")
    if flops < 0 or nbytes < 0:
        raise ValueError("flops and bytes must be non-negative")
    ai = flops / nbytes if nbytes > 0 else math.inf
    verdict = Verdict.COMPUTE_BOUND if ai >= hw.ridge_point else Verdict.MEMORY_BOUND
    seconds = max(flops / hw.peak_flops, nbytes / hw.mem_bandwidth)
    return StageStats(
        stage=stage,
        flops=int(flops),
        bytes=int(nbytes),
        arithmetic_intensity=ai,
        verdict=verdict,
        predicted_seconds=seconds,
    )


def activation_traffic_closed_form(
    expanded_tokens: int, ffn_dim: int, hidden_dim: int, element_bytes: int = 2
) -> TrafficReport:
    """Closed-form activation traffic for the gate+up front half.

    With T expanded tokens, F = ffn_dim, d = hidden_dim and element size s:
    unfused moves ``s*(4TF + 2Td)`` bytes (two input reads, two projection
    writes, two buffer re-reads), fused moves ``s*(TF + Td)`` (one input
    read, one intermediate write), saving ``s*(3TF + Td)``.
    """
    t, f, d, s = int(expanded_tokens), int(ffn_dim), int(hidden_dim), int(element_bytes)
    if min(t, f, d, s) < 0 or f == 0 or d == 0 or s == 0:
        raise ValueError("dimensions must be positive (tokens may be zero)")
    unfused = s * (4 * t * f + 2 * t * d)
    fused = s * (t * f + t * d)
    savings = unfused - fused
    ratio = savings / unfused if unfused else 0.0
    return TrafficReport(
        unfused_bytes=unfused,
        fused_bytes=fused,
        savings_bytes=savings,
        savings_ratio=ratio,
        source=TrafficSource.CLOSED_FORM,
    )


def traffic_from_traces(
    fused_trace: PipelineTrace, unfused_trace: PipelineTrace
) -> TrafficReport:
    """Extract the same activation-traffic comparison from tile traces.

    Only the components with closed-form counterparts are compared: input
    reads, projection-buffer writes and re-reads on the unfused side, and
    the intermediate write on the fused side.  (The unfused pipeline also
    writes its own intermediate, but that term exists on both sides of the
    comparison and is excluded here.)
    """
    gu_fused = fused_trace.stage(STAGE_GATE_UP)
    gu_unfused = unfused_trace.stage(STAGE_GATE_UP)
    if "intermediate" not in gu_fused.writes or "gate_out" in gu_fused.writes:
        raise ShapeMismatch("first trace is not from a fused run")
    if "gate_out" not in gu_unfused.writes:
        raise ShapeMismatch("second trace is not from an unfused run")
    fused = gu_fused.reads["input"] + gu_fused.writes["intermediate"]
    unfused = (
        gu_unfused.reads["input"]
        + gu_unfused.reads["buffer"]
        + gu_unfused.writes["gate_out"]
        + gu_unfused.writes["up_out"]
    )
    savings = unfused - fused
    ratio = savings / unfused if unfused else 0.0
    return TrafficReport(
        unfused_bytes=int(unfused),
        fused_bytes=int(fused),
        savings_bytes=int(savings),
        savings_ratio=ratio,
        source=TrafficSource.TILE_TRACE,
    )


# ---------------------------------------------------------------------------
# Minimal-traffic stage accounting
# ---------------------------------------------------------------------------

def balanced_counts(config: ModelConfig, batch: int) -> np.ndarray:
    """Histogram of a perfectly balanced router: T = B*k spread evenly."""
    total = batch * config.top_k
    base, rem = divmod(total, config.num_experts)
    counts = np.full(config.num_experts, base, dtype=np.int64)
    counts[:rem] += 1
    return counts


def stage_flops(stage: Stage, config: ModelConfig, batch: int) -> int:
    """FLOPs per stage; independent of the routing distribution.

    MAC = 2 FLOPs, SiLU = 4/element, elementwise multiply/add = 1/element.
    """
    d, e, f, k = config.hidden_dim, config.num_experts, config.ffn_dim, config.top_k
    total = batch * k
    if stage is Stage.ROUTER:
        return 2 * batch * d * e + 4 * batch * e
    if stage is Stage.PERMUTE or stage is Stage.HOST_SCHEDULE:
        return 0
    if stage is Stage.GATE_UP:
        return 4 * total * d * f + 5 * total * f
    if stage is Stage.DOWN:
        return 2 * total * f * d
    if stage is Stage.UNPERMUTE:
        return 2 * total * d
    raise ValueError(f"unknown stage {stage!r}")


def stage_bytes(
    stage: Stage, config: ModelConfig, batch: int, counts, fused: bool = True
) -> int:
    """Minimal-traffic bytes per stage: every tensor crosses HBM once.

    Weight traffic covers only experts with at least one routed token, so
    skewed routing that silences experts genuinely reduces weight bytes.
    Permutation indices are charged at 8 bytes each.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape != (config.num_experts,):
        raise ShapeMismatch(
            f"histogram has shape {counts.shape}, expected ({config.num_experts},)"
        )
    eb = config.element_bytes
    d, e, f, k = config.hidden_dim, config.num_experts, config.ffn_dim, config.top_k
    total = int(counts.sum())
    active = int(np.count_nonzero(counts))
    if stage is Stage.ROUTER:
        return (batch * d + d * e + batch * e + batch * k) * eb + batch * k * INDEX_BYTES
    if stage is Stage.PERMUTE:
        return 2 * total * d * eb + total * INDEX_BYTES
    if stage is Stage.GATE_UP:
        weight = 2 * active * d * f * eb
        if fused:
            return (total * d + total * f) * eb + weight
        return (2 * total * d + 5 * total * f) * eb + weight
    if stage is Stage.DOWN:
        return (total * f + total * d) * eb + active * f * d * eb
    if stage is Stage.UNPERMUTE:
        return (total * d + total + batch * d) * eb + total * INDEX_BYTES
    if stage is Stage.HOST_SCHEDULE:
        return 0
    raise ValueError(f"unknown stage {stage!r}")


def stage_stats(
    config: ModelConfig,
    batch: int,
    counts,
    hw: HardwareProfile,
    fused: bool = True,
) -> list[StageStats]:
    """Minimal-convention roofline stats for the five device stages."""
    return [
        roofline(
            stage.value,
            stage_flops(stage, config, batch),
            stage_bytes(stage, config, batch, counts, fused),
            hw,
        )
        for stage in DEVICE_STAGE_ORDER
    ]


def aggregate_stats(label: str, stats: list[StageStats], hw: HardwareProfile) -> StageStats:
    """Roofline placement of several stages taken together."""
    return roofline(
        label,
        sum(s.flops for s in stats),
        sum(s.bytes for s in stats),
        hw,
    )


# ---------------------------------------------------------------------------
# Kernel-launch accounting
# ---------------------------------------------------------------------------

def expert_gemm_launches(num_experts: int) -> int:
    """Per-expert GEMM launches of the naive loop: gate, up, down each."""
    return 3 * num_experts


def kernel_launches_naive(num_experts: int) -> int:
    """Naive loop-over-experts launch count: 3E expert GEMMs + 4 fixed
    kernels (router, permute, activation, unpermute)."""
    return expert_gemm_launches(num_experts) + 4


def kernel_launches_pipeline() -> int:
    """Block-scheduled pipeline launch count, independent of E."""
    return 5


# ---------------------------------------------------------------------------
# Whole-layer report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VariantStats:
    """Per-stage and aggregate roofline stats for one fusion variant."""

    fused: bool
    stages: tuple[StageStats, ...]
    total: StageStats
    ffn: StageStats
    total_seconds: float  # serialized sum of per-stage predicted times
    ffn_time_share: float
    permute_time_share: float
    effective_flops: float


@dataclass(frozen=True)
class LayerReport:
    """Everything the CLI reports about one (config, batch, hardware) cell."""

    config: ModelConfig
    batch: int
    hardware: HardwareProfile
    params: PipelineParams
    counts: np.ndarray
    fused: VariantStats
    unfused: VariantStats
    traffic_closed_form: TrafficReport
    traffic_tile_trace: TrafficReport
    launches_naive: int
    launches_pipeline: int
    expert_gemm: int

    def variant(self, fused: bool) -> VariantStats:
        return self.fused if fused else self.unfused


def _variant(
    config: ModelConfig,
    batch: int,
    counts,
    hw: HardwareProfile,
    fused: bool,
) -> VariantStats:
    stats = stage_stats(config, batch, counts, hw, fused)
    total = aggregate_stats("Total", stats, hw)
    by_name = {s.stage: s for s in stats}
    ffn = aggregate_stats(
        "ExpertFFN", [by_name[Stage.GATE_UP.value], by_name[Stage.DOWN.value]], hw
    )
    total_seconds = sum(s.predicted_seconds for s in stats)
    ffn_seconds = (
        by_name[Stage.GATE_UP.value].predicted_seconds
        + by_name[Stage.DOWN.value].predicted_seconds
    )
    permute_seconds = (
        by_name[Stage.PERMUTE.value].predicted_seconds
        + by_name[Stage.UNPERMUTE.value].predicted_seconds
    )
    return VariantStats(
        fused=fused,
        stages=tuple(stats),
        total=total,
        ffn=ffn,
        total_seconds=total_seconds,
        ffn_time_share=ffn_seconds / total_seconds,
        permute_time_share=permute_seconds / total_seconds,
        effective_flops=total.flops / total_seconds,
    )


def layer_report(
    config: ModelConfig,
    batch: int,
    hw: HardwareProfile,
    params: PipelineParams = PipelineParams(),
    counts=None,
) -> LayerReport:
    """Full analytical report for one layer at one batch size.

    ``counts`` defaults to a perfectly balanced histogram.  Both fusion
    variants are always computed; the tile-trace traffic comparison comes
    from the counting walk at the report's block sizes.
    """
    if batch < 1:
        raise ValueError("batch must be >= 1 for a layer report")
    if counts is None:
        counts = balanced_counts(config, batch)
    counts = np.asarray(counts, dtype=np.int64)
    expanded = batch * config.top_k
    if int(counts.sum()) != expanded:
        raise ShapeMismatch(
            f"histogram sums to {int(counts.sum())}, expected B*k = {expanded}"
        )
    fused_trace = trace_from_counts(config, batch, counts, replace(params, fused=True))
    unfused_trace = trace_from_counts(
        config, batch, counts, replace(params, fused=False)
    )
    return LayerReport(
        config=config,
        batch=batch,
        hardware=hw,
        params=params,
        counts=counts,
        fused=_variant(config, batch, counts, hw, True),
        unfused=_variant(config, batch, counts, hw, False),
        traffic_closed_form=activation_traffic_closed_form(
            expanded, config.ffn_dim, config.hidden_dim, config.element_bytes
        ),
        traffic_tile_trace=traffic_from_traces(fused_trace, unfused_trace),
        launches_naive=kernel_launches_naive(config.num_experts),
        launches_pipeline=kernel_launches_pipeline(),
        expert_gemm=expert_gemm_launches(config.num_experts),
    )


#: (num_experts, top_k, ffn_dim) ladder holding total FFN weight roughly
#: constant while expert granularity increases; hidden dim fixed at 4096.
EXPERT_SCALING_GRID: tuple[tuple[int, int, int], ...] = (
    (8, 2, 14336),
    (16, 2, 8192),
    (32, 4, 4096),
    (64, 4, 2560),
    (128, 8, 2048),
    (256, 8, 2048),
)


def expert_scaling_configs(hidden_dim: int = 4096) -> list[ModelConfig]:
    """Materialize :data:`EXPERT_SCALING_GRID` as model configs."""
    return [
        ModelConfig(num_experts=e, top_k=k, hidden_dim=hidden_dim, ffn_dim=f)
        for e, k, f in EXPERT_SCALING_GRID
    ]
