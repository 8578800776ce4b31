"""Model and hardware configuration types plus published presets."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import MissingPeakFlops, ShapeMismatch
from .linalg import DTYPE


class Gating(str, Enum):
    """Gate-score normalization applied to router logits."""

    SOFTMAX = "softmax"
    SIGMOID_NORMALIZED = "sigmoid_normalized"


@dataclass(frozen=True)
class ModelConfig:
    """Static shape and routing parameters of one MoE layer.

    ``element_bytes`` is the stored-element width assumed by the traffic
    model (half precision by default); the executable pipeline itself runs
    in float32 regardless.
    """

    num_experts: int
    top_k: int
    hidden_dim: int
    ffn_dim: int
    gating: Gating = Gating.SOFTMAX
    element_bytes: int = 2

    def __post_init__(self) -> None:
        if self.num_experts < 1:
            raise ValueError("num_experts must be >= 1")
        if not 1 <= self.top_k <= self.num_experts:
            raise ValueError(
                f"top_k must be in [1, num_experts], got k={self.top_k} "
                f"with E={self.num_experts}"
            )
        if self.hidden_dim < 1 or self.ffn_dim < 1:
            raise ValueError("hidden_dim and ffn_dim must be >= 1")
        if self.element_bytes < 1:
            raise ValueError("element_bytes must be >= 1")


#: Published layer shapes, keyed by model name.
MODEL_PRESETS: dict[str, ModelConfig] = {
    "Mixtral8x7B": ModelConfig(8, 2, 4096, 14336, Gating.SOFTMAX),
    "Mixtral8x22B": ModelConfig(8, 2, 6144, 16384, Gating.SOFTMAX),
    "DeepSeekV3": ModelConfig(256, 8, 7168, 2048, Gating.SIGMOID_NORMALIZED),
    "Qwen2MoE57B": ModelConfig(64, 4, 3584, 2560, Gating.SOFTMAX),
}


def preset(name: str) -> ModelConfig:
    """Look up a model preset by name (raises ``KeyError`` if unknown)."""
    try:
        return MODEL_PRESETS[name]
    except KeyError:
        known = ", ".join(sorted(MODEL_PRESETS))
        raise KeyError(f"unknown model preset {name!r}; known: {known}") from None


@dataclass(frozen=True)
class HardwareProfile:
    """Peak numbers for the roofline model.

    ``mem_bandwidth`` is in bytes/s, ``peak_flops`` in FLOP/s.
    """

    name: str
    mem_bandwidth: float
    peak_flops: float

    def __post_init__(self) -> None:
        if self.mem_bandwidth <= 0 or self.peak_flops <= 0:
            raise ValueError("bandwidth and peak FLOPs must be positive")

    @property
    def ridge_point(self) -> float:
        """Arithmetic intensity (FLOP/byte) where the roofline bends."""
        return self.peak_flops / self.mem_bandwidth


# (mem_bandwidth bytes/s, peak FLOP/s or None when the part's dense peak is
# not pinned down and must be supplied by the caller)
_HW_TABLE: dict[str, tuple[float, float | None]] = {
    "A100": (2039e9, 312e12),
    "MI300X": (5.3e12, None),
}


def hardware_preset(name: str, peak_flops: float | None = None) -> HardwareProfile:
    """Build a :class:`HardwareProfile` from a named preset.

    ``peak_flops`` overrides the preset value; for presets without a pinned
    peak (MI300X) it is mandatory and omitting it raises
    :class:`MissingPeakFlops`.
    """
    try:
        bandwidth, default_peak = _HW_TABLE[name]
    except KeyError:
        known = ", ".join(sorted(_HW_TABLE))
        raise KeyError(f"unknown hardware preset {name!r}; known: {known}") from None
    peak = peak_flops if peak_flops is not None else default_peak
    if peak is None:
        raise MissingPeakFlops(
            f"hardware preset {name!r} has no default peak FLOPs; "
            "pass peak_flops explicitly"
        )
    return HardwareProfile(name=name, mem_bandwidth=bandwidth, peak_flops=peak)


@dataclass(frozen=True)
class ExpertWeights:
    """Stacked per-expert FFN weights.

    Expert ``e`` owns rows ``e*hidden_dim:(e+1)*hidden_dim`` of ``gate`` and
    ``up`` and rows ``e*ffn_dim:(e+1)*ffn_dim`` of ``down``; stacking keeps
    the grouped GEMM a single indexable buffer per projection.
    """

    gate: np.ndarray  # (E * hidden_dim, ffn_dim)
    up: np.ndarray  # (E * hidden_dim, ffn_dim)
    down: np.ndarray  # (E * ffn_dim, hidden_dim)

    def validate(self, config: ModelConfig) -> None:
        """Check all three stacks against ``config`` (raises ShapeMismatch)."""
        e, d, f = config.num_experts, config.hidden_dim, config.ffn_dim
        expected = {
            "gate": (e * d, f),
            "up": (e * d, f),
            "down": (e * f, d),
        }
        for name, want in expected.items():
            got = getattr(self, name).shape
            if tuple(got) != want:
                raise ShapeMismatch(
                    f"{name} weights have shape {tuple(got)}, expected {want}"
                )

    @classmethod
    def random(cls, config: ModelConfig, rng: np.random.Generator) -> "ExpertWeights":
        """Draw scaled-normal weights (std ``1/sqrt(fan_in)``) for testing."""
        e, d, f = config.num_experts, config.hidden_dim, config.ffn_dim
        gate = rng.standard_normal((e * d, f)) / np.sqrt(d)
        up = rng.standard_normal((e * d, f)) / np.sqrt(d)
        down = rng.standard_normal((e * f, d)) / np.sqrt(f)
        return cls(
            gate=gate.astype(DTYPE), up=up.astype(DTYPE), down=down.astype(DTYPE)
        )

    def slice_expert(self, e: int, config: ModelConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return the ``(gate, up, down)`` blocks of one expert."""
        d, f = config.hidden_dim, config.ffn_dim
        return (
            self.gate[e * d : (e + 1) * d],
            self.up[e * d : (e + 1) * d],
            self.down[e * f : (e + 1) * f],
        )
