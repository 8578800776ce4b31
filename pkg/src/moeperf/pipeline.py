"""Five-stage dispatch pipeline: route, permute, gate+up, down, unpermute.

Numerics
--------
All GEMMs run through :func:`moeperf.linalg.dot_accumulate`, whose
summation order depends only on the inner dimension.  The grouped executors
therefore produce float32 outputs bit-identical to the per-token dense
oracle, for every block size.  ``block_k`` partitions the reduction loop
for accounting only; the arithmetic folds over the full inner dimension in
one pass, which is exactly the fully-unrolled k-loop.

Accounting
----------
Executors count tiles, FLOPs, and bytes inline as they run and append one
:class:`StageRecord` per stage to a :class:`PipelineTrace`.  Byte counters
follow the tile-trace convention: a weight tile is charged on every
(k-step, n-step) visit of every schedule entry, an input tile once per
k-step (it is held across the n-loop), and each output tile once.
:func:`trace_from_counts` replays the same accounting from an expert
histogram alone -- no numerics -- and must agree with an executed trace
bit-for-bit; the test suite pins that equivalence.

FLOP conventions: multiply-accumulate = 2, SiLU = 4 per element,
elementwise multiply/add = 1 per element.  Index traffic is counted at
8 bytes per entry (int64); everything else scales with
``config.element_bytes``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ScheduleMismatch, ShapeMismatch
from .linalg import DTYPE, as_matrix, dense_matmul, dot_accumulate, require_finite, silu
from .model import ExpertWeights, ModelConfig
from .router import RoutingResult, route
from .scheduler import (
    BlockSchedule,
    ExpertOffsets,
    Permutation,
    build_block_schedule,
    build_permutation,
    expert_histogram,
    expert_offsets,
)

# Canonical stage labels used in traces and reports.
STAGE_ROUTER = "Router"
STAGE_HOST_SCHEDULE = "HostSchedule"
STAGE_PERMUTE = "Permute"
STAGE_GATE_UP = "GateUp"
STAGE_DOWN = "Down"
STAGE_UNPERMUTE = "Unpermute"

DEVICE_STAGES = (STAGE_ROUTER, STAGE_PERMUTE, STAGE_GATE_UP, STAGE_DOWN, STAGE_UNPERMUTE)

INDEX_BYTES = 8  # int64 permutation/selection indices


@dataclass(frozen=True)
class PipelineParams:
    """Tile sizes and fusion switch for the blocked executors."""

    block_m: int = 64
    block_n: int = 64
    block_k: int = 64
    fused: bool = True

    def __post_init__(self) -> None:
        for name in ("block_m", "block_n", "block_k"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
                raise ValueError(f"{name} must be an integer, got {value!r}")
            if value < 1:
                raise ValueError(f"{name} must be >= 1, got {value}")


@dataclass
class StageRecord:
    """Tile, FLOP, and byte counters for one pipeline stage.

    ``reads`` and ``writes`` are byte counts keyed by tensor category
    (``input``, ``weight``, ``buffer``, ``index``, ``gate_out`` ...), so
    reports can slice activation traffic away from weight traffic.
    """

    stage: str
    tiles: int = 0
    flops: int = 0
    reads: dict[str, int] = field(default_factory=dict)
    writes: dict[str, int] = field(default_factory=dict)

    @property
    def bytes_read(self) -> int:
        return sum(self.reads.values())

    @property
    def bytes_written(self) -> int:
        return sum(self.writes.values())

    @property
    def total_bytes(self) -> int:
        return self.bytes_read + self.bytes_written


@dataclass
class PipelineTrace:
    """Ordered stage records for one forward pass."""

    element_bytes: int
    records: list[StageRecord] = field(default_factory=list)

    def add(self, record: StageRecord) -> None:
        self.records.append(record)

    def stage(self, name: str) -> StageRecord:
        for record in self.records:
            if record.stage == name:
                return record
        raise KeyError(f"no record for stage {name!r}")

    @property
    def total_flops(self) -> int:
        return sum(r.flops for r in self.records)

    @property
    def total_bytes(self) -> int:
        return sum(r.total_bytes for r in self.records)


def _num_steps(total: int, block: int) -> int:
    return math.ceil(total / block) if total else 0

def _tiles(total: int, block: int):
    """Yield ``(start, size)`` spans covering ``[0, total)``."""
    for start in range(0, total, block):
        yield start, min(block, total - start)


def _check_schedule(offsets: ExpertOffsets, schedule: BlockSchedule) -> None:
    """Verify ``schedule`` covers exactly the work implied by ``offsets``."""
    expected = build_block_schedule(offsets, schedule.block_m)
    if sorted(schedule.entries) != sorted(expected.entries):
        raise ScheduleMismatch(
            f"schedule ({len(schedule.entries)} entries) does not tile the "
            f"given offsets (expected {len(expected.entries)} entries)"
        )


def _entry_spans(offsets: ExpertOffsets, schedule: BlockSchedule):
    """Yield ``(expert, global_row_start, m_eff)`` per schedule entry."""
    for expert, local_start in schedule.entries:
        n_e = offsets.count(expert)
        m_eff = min(schedule.block_m, n_e - local_start)
        yield expert, int(offsets.offsets[expert]) + local_start, m_eff


# ---------------------------------------------------------------------------
# Stage executors
# ---------------------------------------------------------------------------

def permute_tokens(
    tokens, routing: RoutingResult, permutation: Permutation
) -> np.ndarray:
    """Gather ``T = B*k`` expert-major rows; expanded id t*k+j reads token t."""
    tokens = as_matrix(tokens, "tokens")
    batch, k = routing.indices.shape
    if tokens.shape[0] != batch:
        raise ShapeMismatch(
            f"tokens have {tokens.shape[0]} rows, routing has {batch}"
        )
    if permutation.forward.size != batch * k:
        raise ShapeMismatch(
            f"permutation covers {permutation.forward.size} rows, "
            f"expected {batch * k}"
        )
    if k == 0:
        return np.zeros((0, tokens.shape[1]), dtype=DTYPE)
    source_tokens = permutation.forward // k
    return np.ascontiguousarray(tokens[source_tokens])


def grouped_gemm(
    inp,
    weight_stack,
    schedule: BlockSchedule,
    offsets: ExpertOffsets,
    params: PipelineParams,
    trace: PipelineTrace | None = None,
    stage: str = STAGE_DOWN,
) -> np.ndarray:
    """Blocked expert-grouped GEMM over a flat ``(E*K, N)`` weight stack.

    Iterates schedule entries; the trailing entry of an expert whose row
    count is not a multiple of ``block_m`` is masked by clamping ``m_eff``.
    Experts with zero rows contribute no entries, hence no weight reads.
    """
    inp = as_matrix(inp, "input")
    weight_stack = as_matrix(weight_stack, "weights")
    total = offsets.total
    num_experts = offsets.num_experts
    if inp.shape[0] != total:
        raise ShapeMismatch(f"input has {inp.shape[0]} rows, offsets say {total}")
    k_dim = inp.shape[1]
    if weight_stack.shape[0] != num_experts * k_dim:
        raise ShapeMismatch(
            f"weight stack has {weight_stack.shape[0]} rows, expected "
            f"{num_experts} x {k_dim}"
        )
    n_dim = weight_stack.shape[1]
    _check_schedule(offsets, schedule)

    out = np.zeros((total, n_dim), dtype=DTYPE)
    k_steps = _num_steps(k_dim, params.block_k)
    n_steps = _num_steps(n_dim, params.block_n)
    tiles = 0
    input_elems = 0
    weight_elems = 0
    write_elems = 0
    flops = 0
    for expert, row0, m_eff in _entry_spans(offsets, schedule):
        a = inp[row0 : row0 + m_eff]
        w = weight_stack[expert * k_dim : (expert + 1) * k_dim]
        for n0, n_sz in _tiles(n_dim, params.block_n):
            out[row0 : row0 + m_eff, n0 : n0 + n_sz] = dot_accumulate(
                a, w[:, n0 : n0 + n_sz]
            )
        tiles += k_steps * n_steps
        input_elems += m_eff * k_dim
        weight_elems += k_dim * n_dim
        write_elems += m_eff * n_dim
        flops += 2 * m_eff * k_dim * n_dim
    if trace is not None:
        eb = trace.element_bytes
        trace.add(
            StageRecord(
                stage=stage,
                tiles=tiles,
                flops=flops,
                reads={"input": input_elems * eb, "weight": weight_elems * eb},
                writes={"output": write_elems * eb},
            )
        )
    return out


def fused_gate_up(
    inp,
    weights: ExpertWeights,
    schedule: BlockSchedule,
    offsets: ExpertOffsets,
    params: PipelineParams,
    trace: PipelineTrace | None = None,
) -> np.ndarray:
    """Fused SwiGLU front half: one input read feeds both weight streams.

    Each tile computes its gate and up partials and applies
    ``silu(gate) * up`` in registers; only the activated intermediate is
    written back.
    """
    inp = as_matrix(inp, "input")
    total = offsets.total
    num_experts = offsets.num_experts
    if inp.shape[0] != total:
        raise ShapeMismatch(f"input has {inp.shape[0]} rows, offsets say {total}")
    k_dim = inp.shape[1]
    for name, stack in (("gate", weights.gate), ("up", weights.up)):
        if stack.shape[0] != num_experts * k_dim:
            raise ShapeMismatch(
                f"{name} stack has {stack.shape[0]} rows, expected "
                f"{num_experts} x {k_dim}"
            )
    if weights.gate.shape[1] != weights.up.shape[1]:
        raise ShapeMismatch("gate and up stacks disagree on ffn dim")
    n_dim = weights.gate.shape[1]
    _check_schedule(offsets, schedule)

    out = np.zeros((total, n_dim), dtype=DTYPE)
    k_steps = _num_steps(k_dim, params.block_k)
    n_steps = _num_steps(n_dim, params.block_n)
    tiles = 0
    input_elems = 0
    weight_elems = 0
    write_elems = 0
    flops = 0
    for expert, row0, m_eff in _entry_spans(offsets, schedule):
        a = inp[row0 : row0 + m_eff]
        wg = weights.gate[expert * k_dim : (expert + 1) * k_dim]
        wu = weights.up[expert * k_dim : (expert + 1) * k_dim]
        for n0, n_sz in _tiles(n_dim, params.block_n):
            g = dot_accumulate(a, wg[:, n0 : n0 + n_sz])
            u = dot_accumulate(a, wu[:, n0 : n0 + n_sz])
            out[row0 : row0 + m_eff, n0 : n0 + n_sz] = (silu(g) * u).astype(DTYPE)
        tiles += k_steps * n_steps
        input_elems += m_eff * k_dim
        weight_elems += 2 * k_dim * n_dim
        write_elems += m_eff * n_dim
        flops += 4 * m_eff * k_dim * n_dim + 5 * m_eff * n_dim
    if trace is not None:
        eb = trace.element_bytes
        trace.add(
            StageRecord(
                stage=STAGE_GATE_UP,
                tiles=tiles,
                flops=flops,
                reads={"input": input_elems * eb, "weight": weight_elems * eb},
                writes={"intermediate": write_elems * eb},
            )
        )
    return out


def unfused_gate_up(
    inp,
    weights: ExpertWeights,
    schedule: BlockSchedule,
    offsets: ExpertOffsets,
    params: PipelineParams,
    trace: PipelineTrace | None = None,
) -> np.ndarray:
    """Baseline SwiGLU front half: two GEMMs, then a separate activation pass.

    Gate and up projections each read the input and write a full-size
    buffer; the elementwise pass then re-reads both buffers and writes the
    intermediate.  Bitwise identical to :func:`fused_gate_up` by design.
    """
    if weights.gate.shape != weights.up.shape:
        raise ShapeMismatch("gate and up stacks must have identical shapes")
    gate_out = grouped_gemm(inp, weights.gate, schedule, offsets, params)
    up_out = grouped_gemm(inp, weights.up, schedule, offsets, params)
    inter = (silu(gate_out) * up_out).astype(DTYPE)
    if trace is not None:
        eb = trace.element_bytes
        total = offsets.total
        k_dim = as_matrix(inp, "input").shape[1]
        n_dim = weights.gate.shape[1]
        k_steps = _num_steps(k_dim, params.block_k)
        n_steps = _num_steps(n_dim, params.block_n)
        tiles = 0
        input_elems = 0
        weight_elems = 0
        gemm_write_elems = 0
        gemm_flops = 0
        for _, _, m_eff in _entry_spans(offsets, schedule):
            tiles += 2 * k_steps * n_steps
            input_elems += 2 * m_eff * k_dim
            weight_elems += 2 * k_dim * n_dim
            gemm_write_elems += m_eff * n_dim
            gemm_flops += 4 * m_eff * k_dim * n_dim
        trace.add(
            StageRecord(
                stage=STAGE_GATE_UP,
                tiles=tiles,
                flops=gemm_flops + 5 * total * n_dim,
                reads={
                    "input": input_elems * eb,
                    "weight": weight_elems * eb,
                    "buffer": 2 * total * n_dim * eb,
                },
                writes={
                    "gate_out": gemm_write_elems * eb,
                    "up_out": gemm_write_elems * eb,
                    "intermediate": total * n_dim * eb,
                },
            )
        )
    return inter


def unpermute_combine(
    expert_out, routing: RoutingResult, permutation: Permutation
) -> np.ndarray:
    """Scatter permuted expert outputs back and combine k slots per token.

    Accumulation runs in ascending slot order in float32, matching the
    dense oracle's combine exactly.
    """
    expert_out = as_matrix(expert_out, "expert_out")
    batch, k = routing.indices.shape
    if permutation.inverse.size != batch * k:
        raise ShapeMismatch(
            f"permutation covers {permutation.inverse.size} rows, "
            f"expected {batch * k}"
        )
    if expert_out.shape[0] != batch * k:
        raise ShapeMismatch(
            f"expert output has {expert_out.shape[0]} rows, expected {batch * k}"
        )
    hidden = expert_out.shape[1]
    out = np.zeros((batch, hidden), dtype=DTYPE)
    if batch == 0 or k == 0:
        return out
    gathered = expert_out[permutation.inverse.reshape(batch, k)]
    for j in range(k):
        out += routing.weights[:, j : j + 1] * gathered[:, j]
    return out


# ---------------------------------------------------------------------------
# Analytic stage records (no numerics) -- must match executed traces exactly
# ---------------------------------------------------------------------------

def _router_record(config: ModelConfig, batch: int) -> StageRecord:
    eb = config.element_bytes
    d, e, k = config.hidden_dim, config.num_experts, config.top_k
    return StageRecord(
        stage=STAGE_ROUTER,
        tiles=0,
        flops=2 * batch * d * e + 4 * batch * e,
        reads={"input": batch * d * eb, "weight": d * e * eb},
        writes={
            "scores": batch * e * eb,
            "route_weights": batch * k * eb,
            "index": batch * k * INDEX_BYTES,
        },
    )


def _host_schedule_record(schedule: BlockSchedule) -> StageRecord:
    return StageRecord(stage=STAGE_HOST_SCHEDULE, tiles=len(schedule.entries))


def _permute_record(config: ModelConfig, total: int) -> StageRecord:
    eb = config.element_bytes
    d = config.hidden_dim
    return StageRecord(
        stage=STAGE_PERMUTE,
        tiles=0,
        flops=0,
        reads={"input": total * d * eb, "index": total * INDEX_BYTES},
        writes={"output": total * d * eb},
    )


def _gate_up_record(
    config: ModelConfig,
    offsets: ExpertOffsets,
    schedule: BlockSchedule,
    params: PipelineParams,
    fused: bool,
) -> StageRecord:
    eb = config.element_bytes
    k_dim, n_dim = config.hidden_dim, config.ffn_dim
    total = offsets.total
    k_steps = _num_steps(k_dim, params.block_k)
    n_steps = _num_steps(n_dim, params.block_n)
    tiles = 0
    input_elems = 0
    weight_elems = 0
    write_elems = 0
    gemm_flops = 0
    for _, _, m_eff in _entry_spans(offsets, schedule):
        streams = 1 if fused else 2
        tiles += streams * k_steps * n_steps
        input_elems += streams * m_eff * k_dim
        weight_elems += 2 * k_dim * n_dim
        write_elems += m_eff * n_dim
        gemm_flops += 4 * m_eff * k_dim * n_dim
    if fused:
        return StageRecord(
            stage=STAGE_GATE_UP,
            tiles=tiles,
            flops=gemm_flops + 5 * write_elems,
            reads={"input": input_elems * eb, "weight": weight_elems * eb},
            writes={"intermediate": write_elems * eb},
        )
    return StageRecord(
        stage=STAGE_GATE_UP,
        tiles=tiles,
        flops=gemm_flops + 5 * total * n_dim,
        reads={
            "input": input_elems * eb,
            "weight": weight_elems * eb,
            "buffer": 2 * total * n_dim * eb,
        },
        writes={
            "gate_out": write_elems * eb,
            "up_out": write_elems * eb,
            "intermediate": total * n_dim * eb,
        },
    )


def _down_record(
    config: ModelConfig,
    offsets: ExpertOffsets,
    schedule: BlockSchedule,
    params: PipelineParams,
) -> StageRecord:
    eb = config.element_bytes
    k_dim, n_dim = config.ffn_dim, config.hidden_dim
    k_steps = _num_steps(k_dim, params.block_k)
    n_steps = _num_steps(n_dim, params.block_n)
    tiles = 0
    input_elems = 0
    weight_elems = 0
    write_elems = 0
    flops = 0
    for _, _, m_eff in _entry_spans(offsets, schedule):
        tiles += k_steps * n_steps
        input_elems += m_eff * k_dim
        weight_elems += k_dim * n_dim
        write_elems += m_eff * n_dim
        flops += 2 * m_eff * k_dim * n_dim
    return StageRecord(
        stage=STAGE_DOWN,
        tiles=tiles,
        flops=flops,
        reads={"input": input_elems * eb, "weight": weight_elems * eb},
        writes={"output": write_elems * eb},
    )


def _unpermute_record(config: ModelConfig, batch: int) -> StageRecord:
    eb = config.element_bytes
    d, k = config.hidden_dim, config.top_k
    total = batch * k
    return StageRecord(
        stage=STAGE_UNPERMUTE,
        tiles=0,
        flops=2 * total * d,
        reads={
            "input": total * d * eb,
            "index": total * INDEX_BYTES,
            "route_weights": total * eb,
        },
        writes={"output": batch * d * eb},
    )


def trace_from_counts(
    config: ModelConfig,
    batch: int,
    counts,
    params: PipelineParams,
) -> PipelineTrace:
    """Replay the full pipeline accounting from an expert histogram.

    Produces the same six records an executed :func:`moe_forward` with this
    routing histogram would produce, without touching any numerics -- this
    is what makes full-scale (preset-sized) analysis tractable.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape != (config.num_experts,):
        raise ShapeMismatch(
            f"histogram has shape {counts.shape}, expected ({config.num_experts},)"
        )
    if int(counts.sum()) != batch * config.top_k:
        raise ShapeMismatch(
            f"histogram sums to {int(counts.sum())}, expected "
            f"B*k = {batch * config.top_k}"
        )
    offsets = expert_offsets(counts)
    schedule = build_block_schedule(offsets, params.block_m)
    trace = PipelineTrace(element_bytes=config.element_bytes)
    trace.add(_router_record(config, batch))
    trace.add(_host_schedule_record(schedule))
    trace.add(_permute_record(config, offsets.total))
    trace.add(_gate_up_record(config, offsets, schedule, params, params.fused))
    trace.add(_down_record(config, offsets, schedule, params))
    trace.add(_unpermute_record(config, batch))
    return trace


# ---------------------------------------------------------------------------
# Full forward passes
# ---------------------------------------------------------------------------

def moe_forward(
    tokens,
    router_weight,
    weights: ExpertWeights,
    config: ModelConfig,
    params: PipelineParams,
) -> tuple[np.ndarray, PipelineTrace]:
    """Run the full pipeline; returns ``(output, trace)``.

    The trace holds one record per device stage (Router, Permute, GateUp,
    Down, Unpermute) plus a HostSchedule record whose tile count is the
    number of schedule entries.
    """
    tokens = as_matrix(tokens, "tokens")
    weights.validate(config)
    require_finite(weights.gate, "gate weights")
    require_finite(weights.up, "up weights")
    require_finite(weights.down, "down weights")

    routing = route(tokens, router_weight, config)
    counts = expert_histogram(routing, config.num_experts)
    offsets = expert_offsets(counts)
    permutation = build_permutation(routing)
    schedule = build_block_schedule(offsets, params.block_m)

    trace = PipelineTrace(element_bytes=config.element_bytes)
    trace.add(_router_record(config, tokens.shape[0]))
    trace.add(_host_schedule_record(schedule))

    permuted = permute_tokens(tokens, routing, permutation)
    trace.add(_permute_record(config, offsets.total))

    if params.fused:
        intermediate = fused_gate_up(permuted, weights, schedule, offsets, params, trace)
    else:
        intermediate = unfused_gate_up(permuted, weights, schedule, offsets, params, trace)

    down_out = grouped_gemm(
        intermediate, weights.down, schedule, offsets, params, trace, stage=STAGE_DOWN
    )

    output = unpermute_combine(down_out, routing, permutation)
    trace.add(_unpermute_record(config, tokens.shape[0]))
    return output, trace


def dense_moe_oracle(
    tokens, router_weight, weights: ExpertWeights, config: ModelConfig
) -> np.ndarray:
    """Per-token loop-over-experts reference; no permutation, no tiling.

    Shares the router and the canonical accumulation order with the
    pipeline, so a correct pipeline matches it bitwise.
    """
    tokens = as_matrix(tokens, "tokens")
    weights.validate(config)
    routing = route(tokens, router_weight, config)
    batch = tokens.shape[0]
    out = np.zeros((batch, config.hidden_dim), dtype=DTYPE)
    for t in range(batch):
        x = tokens[t : t + 1]
        acc = np.zeros((1, config.hidden_dim), dtype=DTYPE)
        for j in range(config.top_k):
            e = int(routing.indices[t, j])
            w = routing.weights[t, j]
            gate_w, up_w, down_w = weights.slice_expert(e, config)
            g = dense_matmul(x, gate_w)
            u = dense_matmul(x, up_w)
            h = (silu(g) * u).astype(DTYPE)
            acc += w * dense_matmul(h, down_w)
        out[t] = acc[0]
    return out
