"""moeperf: exact MoE dispatch pipeline + analytical performance model.

The executable pipeline (``moeperf.pipeline``) is a CPU reference whose
float32 outputs are bit-identical across tiling and fusion choices; the
analytical model (``moeperf.perfmodel``) prices the same stages in FLOPs
and bytes at full scale.  ``moeperf.skew`` synthesizes routing-imbalance
scenarios, and ``moeperf.cli`` ties everything into a report-emitting
command-line tool.
"""

from .errors import (
    AllZero,
    DegenerateStage,
    IndexOutOfRange,
    InvalidBlockM,
    InvalidK,
    InvalidSpec,
    MissingPeakFlops,
    MoeperfError,
    NonFiniteInput,
    ScheduleMismatch,
    ShapeMismatch,
)
from .linalg import DTYPE, dense_matmul, sigmoid, silu
from .model import (
    ExpertWeights,
    Gating,
    HardwareProfile,
    MODEL_PRESETS,
    ModelConfig,
    hardware_preset,
    preset,
)
from .perfmodel import (
    EXPERT_SCALING_GRID,
    LayerReport,
    Stage,
    StageStats,
    TrafficReport,
    TrafficSource,
    VariantStats,
    Verdict,
    activation_traffic_closed_form,
    balanced_counts,
    expert_gemm_launches,
    expert_scaling_configs,
    kernel_launches_naive,
    kernel_launches_pipeline,
    layer_report,
    roofline,
    stage_bytes,
    stage_flops,
    stage_stats,
    traffic_from_traces,
)
from .pipeline import (
    PipelineParams,
    PipelineTrace,
    StageRecord,
    dense_moe_oracle,
    fused_gate_up,
    grouped_gemm,
    moe_forward,
    permute_tokens,
    trace_from_counts,
    unfused_gate_up,
    unpermute_combine,
)
from .router import RoutingResult, gate_scores, route, stable_softmax_row, topk_select
from .scheduler import (
    BlockSchedule,
    ExpertOffsets,
    Permutation,
    build_block_schedule,
    build_permutation,
    expert_histogram,
    expert_offsets,
)
from .skew import (
    ImbalanceMetrics,
    SkewSpec,
    imbalance_metrics,
    load_routing,
    routing_from_dict,
    routing_to_dict,
    save_routing,
    synthesize_routing,
    zipf_probabilities,
)

__version__ = "0.1.0"

__all__ = [
    "AllZero",
    "BlockSchedule",
    "DTYPE",
    "DegenerateStage",
    "EXPERT_SCALING_GRID",
    "ExpertOffsets",
    "ExpertWeights",
    "Gating",
    "HardwareProfile",
    "ImbalanceMetrics",
    "IndexOutOfRange",
    "InvalidBlockM",
    "InvalidK",
    "InvalidSpec",
    "LayerReport",
    "MODEL_PRESETS",
    "MissingPeakFlops",
    "ModelConfig",
    "MoeperfError",
    "NonFiniteInput",
    "Permutation",
    "PipelineParams",
    "PipelineTrace",
    "RoutingResult",
    "ScheduleMismatch",
    "ShapeMismatch",
    "SkewSpec",
    "Stage",
    "StageRecord",
    "StageStats",
    "TrafficReport",
    "TrafficSource",
    "VariantStats",
    "Verdict",
    "activation_traffic_closed_form",
    "balanced_counts",
    "build_block_schedule",
    "build_permutation",
    "dense_matmul",
    "dense_moe_oracle",
    "expert_gemm_launches",
    "expert_histogram",
    "expert_offsets",
    "expert_scaling_configs",
    "fused_gate_up",
    "gate_scores",
    "grouped_gemm",
    "hardware_preset",
    "imbalance_metrics",
    "kernel_launches_naive",
    "kernel_launches_pipeline",
    "layer_report",
    "load_routing",
    "moe_forward",
    "permute_tokens",
    "preset",
    "roofline",
    "route",
    "routing_from_dict",
    "routing_to_dict",
    "save_routing",
    "sigmoid",
    "silu",
    "stable_softmax_row",
    "stage_bytes",
    "stage_flops",
    "stage_stats",
    "synthesize_routing",
    "topk_select",
    "trace_from_counts",
    "traffic_from_traces",
    "unfused_gate_up",
    "unpermute_combine",
    "zipf_probabilities",
]
