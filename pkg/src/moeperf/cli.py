"""Command-line interface.

Subcommands
-----------
* ``verify``   -- run the executable pipeline at reduced dims against the
  dense oracle (fused and unfused, executed trace vs analytic trace).
* ``analyze``  -- analytical report for one (model, batch, hardware) cell.
* ``sweep``    -- CSV sweep over a config grid and batch sizes.
* ``skew``     -- CSV comparison of routing distributions at fixed budget.
* ``schedule`` -- dump the block schedule for a routing as JSON.

Exit codes: 0 success, 1 verification mismatch, 2 usage/config error.

Options may come from a JSON config file (``--config run.json``) whose
keys match option names with underscores; explicit command-line flags win
over file values.  All outputs are deterministic: identical invocations
produce byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidBlockM, InvalidSpec, MoeperfError
from .linalg import DTYPE
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
    LayerReport,
    Stage,
    StageStats,
    balanced_counts,
    layer_report,
)
from .pipeline import (
    PipelineParams,
    dense_moe_oracle,
    moe_forward,
    trace_from_counts,
)
from .router import RoutingResult, route
from .scheduler import build_block_schedule, expert_histogram, expert_offsets
from .skew import (
    ImbalanceMetrics,
    SkewSpec,
    imbalance_metrics,
    load_routing,
    routing_to_dict,
    save_routing,
    synthesize_routing,
)

CSV_SCHEMA = "moeperf.sweep.v1"
CSV_COLUMNS = [
    "model",
    "E",
    "k",
    "d",
    "d_ffn",
    "batch",
    "fused",
    "distribution",
    "alpha",
    "seed",
    "stage",
    "flops",
    "bytes",
    "ai",
    "verdict",
    "predicted_seconds",
    "max_over_mean",
    "gini",
    "active_experts",
    "launches_naive",
    "launches_pipeline",
]

SCHEDULE_SCHEMA = "moeperf.schedule.v1"


@dataclass(frozen=True)
class RunConfig:
    """Resolved knobs shared by the analytical subcommands."""

    models: tuple[tuple[str, ModelConfig], ...]
    hardware: HardwareProfile
    batches: tuple[int, ...]
    params: PipelineParams
    fused_modes: tuple[bool, ...]
    distribution: str
    alpha: float | None
    seed: int
    fmt: str
    out: str | None
    per_stage: bool


# ---------------------------------------------------------------------------
# Option resolution (CLI flag > config file > default)
# ---------------------------------------------------------------------------

def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    payload = json.loads(Path(path).read_text())
    if not isinstance(payload, dict):
        raise InvalidSpec("config file must contain a JSON object")
    return payload


def _resolve(args: argparse.Namespace, key: str, default):
    value = getattr(args, key, None)
    if value is not None:
        return value
    file_values = getattr(args, "_file_values", {})
    if key in file_values:
        return file_values[key]
    return default


def _parse_int_list(text: str, what: str) -> tuple[int, ...]:
    try:
        values = tuple(int(part) for part in str(text).split(",") if part != "")
    except ValueError as exc:
        raise InvalidSpec(f"bad {what} list {text!r}") from exc
    if not values:
        raise InvalidSpec(f"empty {what} list")
    return values


def parse_skew(text: str) -> tuple[str, float | None]:
    """Parse ``balanced`` | ``uniform`` | ``zipf:ALPHA``."""
    text = str(text).strip()
    if text in ("balanced", "uniform"):
        return text, None
    if text.startswith("zipf:"):
        raw = text.split(":", 1)[1]
        try:
            alpha = float(raw)
        except ValueError as exc:
            raise InvalidSpec(f"bad zipf alpha {raw!r}") from exc
        if not alpha > 0:
            raise InvalidSpec("zipf alpha must be > 0")
        return "zipf", alpha
    if text == "zipf":
        raise InvalidSpec("zipf requires an alpha, e.g. zipf:1.2")
    raise InvalidSpec(
        f"unknown distribution {text!r}; expected balanced, uniform or zipf:ALPHA"
    )


def _resolve_models(args) -> tuple[tuple[str, ModelConfig], ...]:
    custom_keys = ("experts", "top_k", "hidden_dim", "ffn_dim")
    custom = {key: _resolve(args, key, None) for key in custom_keys}
    if any(v is not None for v in custom.values()):
        missing = [k for k, v in custom.items() if v is None]
        if missing:
            raise InvalidSpec(
                f"custom model needs --experts/--top-k/--hidden-dim/--ffn-dim; "
                f"missing {missing}"
            )
        config = ModelConfig(
            num_experts=int(custom["experts"]),
            top_k=int(custom["top_k"]),
            hidden_dim=int(custom["hidden_dim"]),
            ffn_dim=int(custom["ffn_dim"]),
            gating=Gating(_resolve(args, "gating", "softmax")),
            element_bytes=int(_resolve(args, "element_bytes", 2)),
        )
        return (("custom", config),)
    names = _resolve(args, "models", None)
    if names is None:
        names = _resolve(args, "model", "Mixtral8x7B")
    pairs = []
    for name in str(names).split(","):
        name = name.strip()
        config = preset(name)
        eb = _resolve(args, "element_bytes", None)
        if eb is not None:
            config = ModelConfig(
                config.num_experts,
                config.top_k,
                config.hidden_dim,
                config.ffn_dim,
                config.gating,
                int(eb),
            )
        pairs.append((name, config))
    return tuple(pairs)


def _resolve_hardware(args) -> HardwareProfile:
    name = _resolve(args, "hardware", "A100")
    peak = _resolve(args, "peak_flops", None)
    return hardware_preset(name, None if peak is None else float(peak))


def _resolve_params(args, fused: bool = True) -> PipelineParams:
    block_m = int(_resolve(args, "block_m", 64))
    if block_m < 1:
        raise InvalidBlockM(f"block_m must be >= 1, got {block_m}")
    return PipelineParams(
        block_m=block_m,
        block_n=int(_resolve(args, "block_n", 64)),
        block_k=int(_resolve(args, "block_k", 64)),
        fused=fused,
    )


def _resolve_batches(args, default: str) -> tuple[int, ...]:
    batches = _parse_int_list(_resolve(args, "batch", default), "batch")
    for b in batches:
        if b < 1:
            raise InvalidSpec(f"batch sizes must be >= 1, got {b}")
    return batches


def _resolve_run(args, *, default_batch: str, default_format: str) -> RunConfig:
    fused_mode = str(_resolve(args, "fused", "on"))
    if fused_mode not in ("on", "off", "both"):
        raise InvalidSpec(f"--fused must be on, off or both, got {fused_mode!r}")
    fused_modes = {"on": (True,), "off": (False,), "both": (True, False)}[fused_mode]
    distribution, alpha = parse_skew(_resolve(args, "skew", "balanced"))
    fmt = str(_resolve(args, "format", default_format))
    if fmt not in ("md", "json", "csv"):
        raise InvalidSpec(f"unknown format {fmt!r}")
    seed = int(_resolve(args, "seed", 0))
    if seed < 0:
        raise InvalidSpec("seed must be >= 0")
    return RunConfig(
        models=_resolve_models(args),
        hardware=_resolve_hardware(args),
        batches=_resolve_batches(args, default_batch),
        params=_resolve_params(args),
        fused_modes=fused_modes,
        distribution=distribution,
        alpha=alpha,
        seed=seed,
        fmt=fmt,
        out=_resolve(args, "out", None),
        per_stage=bool(_resolve(args, "per_stage", False)),
    )


def _routing_counts(
    config: ModelConfig, distribution: str, alpha: float | None, seed: int, batch: int
) -> np.ndarray:
    if distribution == "balanced":
        return balanced_counts(config, batch)
    spec = SkewSpec(
        distribution=distribution,
        alpha=alpha,
        seed=seed,
        num_tokens=batch,
        config=config,
    )
    routing = synthesize_routing(spec)
    return expert_histogram(routing, config.num_experts)


# ---------------------------------------------------------------------------
# Emission helpers
# ---------------------------------------------------------------------------

def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
    else:
        Path(out).write_text(text)
        print(f"wrote {out}")


def _ffloat(x: float) -> str:
    return repr(float(x))


def _csv_text(rows: list[dict]) -> str:
    buf = io.StringIO()
    buf.write(
        f"# schema: {CSV_SCHEMA} | bytes: minimal-traffic convention | "
        "predicted_seconds: roofline max(compute, memory); Total rows sum stages\n"
    )
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def _base_row(
    name: str,
    report: LayerReport,
    fused: bool,
    distribution: str,
    alpha: float | None,
    seed: int,
    metrics: ImbalanceMetrics,
) -> dict:
    config = report.config
    return {
        "model": name,
        "E": config.num_experts,
        "k": config.top_k,
        "d": config.hidden_dim,
        "d_ffn": config.ffn_dim,
        "batch": report.batch,
        "fused": "true" if fused else "false",
        "distribution": distribution,
        "alpha": _ffloat(alpha if alpha is not None else 0.0),
        "seed": seed,
        "max_over_mean": _ffloat(metrics.max_over_mean),
        "gini": _ffloat(metrics.gini),
        "active_experts": metrics.active_experts,
        "launches_naive": report.launches_naive,
        "launches_pipeline": report.launches_pipeline,
    }


def _stat_cells(stage: str, stats: StageStats, seconds: float | None = None) -> dict:
    return {
        "stage": stage,
        "flops": stats.flops,
        "bytes": stats.bytes,
        "ai": _ffloat(stats.arithmetic_intensity),
        "verdict": stats.verdict.value,
        "predicted_seconds": _ffloat(
            stats.predicted_seconds if seconds is None else seconds
        ),
    }


def _cell_rows(
    name: str,
    report: LayerReport,
    run: RunConfig,
    distribution: str,
    alpha: float | None,
    metrics: ImbalanceMetrics,
) -> list[dict]:
    rows = []
    for fused in run.fused_modes:
        variant = report.variant(fused)
        base = _base_row(name, report, fused, distribution, alpha, run.seed, metrics)
        if run.per_stage:
            for stats in variant.stages:
                rows.append({**base, **_stat_cells(stats.stage, stats)})
        rows.append(
            {**base, **_stat_cells("Total", variant.total, variant.total_seconds)}
        )
    return rows


def _stats_dict(stats: StageStats) -> dict:
    return {
        "stage": stats.stage,
        "flops": stats.flops,
        "bytes": stats.bytes,
        "arithmetic_intensity": stats.arithmetic_intensity,
        "verdict": stats.verdict.value,
        "predicted_seconds": stats.predicted_seconds,
    }


def _traffic_dict(report) -> dict:
    return {
        "source": report.source.value,
        "unfused_bytes": report.unfused_bytes,
        "fused_bytes": report.fused_bytes,
        "savings_bytes": report.savings_bytes,
        "savings_ratio": report.savings_ratio,
    }


def _us(seconds: float) -> str:
    return f"{seconds * 1e6:.3f}"


def _mib(nbytes: int) -> str:
    return f"{nbytes / 2**20:.2f}"


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def _analyze_md(
    name: str,
    report: LayerReport,
    run: RunConfig,
    metrics: ImbalanceMetrics,
) -> str:
    config, hw = report.config, report.hardware
    lines = [
        f"# MoE layer analysis: {name}",
        "",
        f"- experts: {config.num_experts} (top-{config.top_k}), "
        f"hidden {config.hidden_dim}, ffn {config.ffn_dim}, "
        f"gating {config.gating.value}, element {config.element_bytes} B",
        f"- batch: {report.batch} tokens -> {report.batch * config.top_k} expanded rows",
        f"- hardware: {hw.name} ({hw.mem_bandwidth / 1e9:.0f} GB/s, "
        f"{hw.peak_flops / 1e12:.0f} TFLOP/s, ridge {hw.ridge_point:.1f} FLOP/B)",
        f"- routing: {run.distribution}"
        + (f" (alpha={run.alpha})" if run.alpha is not None else "")
        + f", active experts {metrics.active_experts}/{config.num_experts}, "
        f"max/mean {metrics.max_over_mean:.3f}, gini {metrics.gini:.4f}",
        f"- kernel launches: naive loop {report.launches_naive} "
        f"({report.expert_gemm} expert GEMMs) vs pipeline {report.launches_pipeline}",
        "",
        "## Stage roofline (minimal-traffic convention)",
    ]
    for variant in (report.fused, report.unfused):
        label = "fused gate+up" if variant.fused else "unfused gate+up"
        lines += [
            "",
            f"### {label}",
            "",
            "| stage | GFLOP | MiB | AI (FLOP/B) | verdict | predicted us |",
            "|---|---|---|---|---|---|",
        ]
        for stats in variant.stages:
            lines.append(
                f"| {stats.stage} | {stats.flops / 1e9:.3f} | {_mib(stats.bytes)} "
                f"| {stats.arithmetic_intensity:.2f} | {stats.verdict.value} "
                f"| {_us(stats.predicted_seconds)} |"
            )
        lines.append(
            f"| Total | {variant.total.flops / 1e9:.3f} | {_mib(variant.total.bytes)} "
            f"| {variant.total.arithmetic_intensity:.2f} | {variant.total.verdict.value} "
            f"| {_us(variant.total_seconds)} |"
        )
        lines += [
            "",
            f"- expert FFN (GateUp+Down): AI {variant.ffn.arithmetic_intensity:.2f}, "
            f"{variant.ffn.verdict.value}, {variant.ffn_time_share * 100:.2f}% of time",
            f"- permute+unpermute: {variant.permute_time_share * 100:.2f}% of time",
            f"- effective throughput: {variant.effective_flops / 1e12:.2f} TFLOP/s",
        ]
    ctf = report.traffic_closed_form
    ttt = report.traffic_tile_trace
    lines += [
        "",
        "## Gate+Up activation traffic (fused vs unfused)",
        "",
        "| source | unfused MiB | fused MiB | saved MiB | saved |",
        "|---|---|---|---|---|",
        f"| closed-form | {_mib(ctf.unfused_bytes)} | {_mib(ctf.fused_bytes)} "
        f"| {_mib(ctf.savings_bytes)} | {ctf.savings_ratio * 100:.1f}% |",
        f"| tile-trace  | {_mib(ttt.unfused_bytes)} | {_mib(ttt.fused_bytes)} "
        f"| {_mib(ttt.savings_bytes)} | {ttt.savings_ratio * 100:.1f}% |",
        "",
        f"(exact savings: closed-form {ctf.savings_bytes} B, "
        f"tile-trace {ttt.savings_bytes} B)",
        "",
    ]
    return "\n".join(lines)


def _analyze_json(
    name: str, report: LayerReport, run: RunConfig, metrics: ImbalanceMetrics
) -> str:
    payload = {
        "model": name,
        "config": {
            "num_experts": report.config.num_experts,
            "top_k": report.config.top_k,
            "hidden_dim": report.config.hidden_dim,
            "ffn_dim": report.config.ffn_dim,
            "gating": report.config.gating.value,
            "element_bytes": report.config.element_bytes,
        },
        "batch": report.batch,
        "hardware": {
            "name": report.hardware.name,
            "mem_bandwidth": report.hardware.mem_bandwidth,
            "peak_flops": report.hardware.peak_flops,
            "ridge_point": report.hardware.ridge_point,
        },
        "routing": {
            "distribution": run.distribution,
            "alpha": run.alpha,
            "seed": run.seed,
            "max_over_mean": metrics.max_over_mean,
            "gini": metrics.gini,
            "active_experts": metrics.active_experts,
        },
        "launches": {
            "naive": report.launches_naive,
            "pipeline": report.launches_pipeline,
            "expert_gemm": report.expert_gemm,
        },
        "variants": {},
        "traffic": {
            "closed_form": _traffic_dict(report.traffic_closed_form),
            "tile_trace": _traffic_dict(report.traffic_tile_trace),
        },
        "conventions": {
            "bytes": "minimal-traffic (weights once per active expert)",
            "flops": "MAC=2, SiLU=4/elem, mul/add=1/elem",
        },
    }
    for variant in (report.fused, report.unfused):
        payload["variants"]["fused" if variant.fused else "unfused"] = {
            "stages": [_stats_dict(s) for s in variant.stages],
            "total": _stats_dict(variant.total),
            "expert_ffn": _stats_dict(variant.ffn),
            "total_seconds": variant.total_seconds,
            "ffn_time_share": variant.ffn_time_share,
            "permute_time_share": variant.permute_time_share,
            "effective_flops": variant.effective_flops,
        }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def cmd_analyze(args) -> int:
    run = _resolve_run(args, default_batch="512", default_format="md")
    name, config = run.models[0]
    batch = run.batches[0]
    counts = _routing_counts(config, run.distribution, run.alpha, run.seed, batch)
    metrics = imbalance_metrics(counts)
    report = layer_report(config, batch, run.hardware, run.params, counts)
    if run.fmt == "json":
        _emit(_analyze_json(name, report, run, metrics), run.out)
    elif run.fmt == "md":
        _emit(_analyze_md(name, report, run, metrics), run.out)
    else:
        raise InvalidSpec("analyze supports --format md or json")
    return 0


# ---------------------------------------------------------------------------
# sweep / skew
# ---------------------------------------------------------------------------

def cmd_sweep(args) -> int:
    run = _resolve_run(args, default_batch="512", default_format="csv")
    if run.fmt != "csv":
        raise InvalidSpec("sweep emits CSV; use --format csv")
    grid = str(_resolve(args, "grid", "expert-scaling"))
    explicit_model = (
        _resolve(args, "models", None) is not None
        or _resolve(args, "model", None) is not None
        or any(
            _resolve(args, key, None) is not None
            for key in ("experts", "top_k", "hidden_dim", "ffn_dim")
        )
    )
    if explicit_model:
        models = run.models
    elif grid == "expert-scaling":
        from .perfmodel import expert_scaling_configs

        models = tuple(
            (f"grid_E{cfg.num_experts}", cfg) for cfg in expert_scaling_configs()
        )
    elif grid == "presets":
        models = tuple((name, MODEL_PRESETS[name]) for name in sorted(MODEL_PRESETS))
    else:
        raise InvalidSpec(f"unknown grid {grid!r}; expected expert-scaling or presets")
    rows: list[dict] = []
    for name, config in models:
        for batch in run.batches:
            counts = _routing_counts(
                config, run.distribution, run.alpha, run.seed, batch
            )
            metrics = imbalance_metrics(counts)
            report = layer_report(config, batch, run.hardware, run.params, counts)
            rows.extend(
                _cell_rows(name, report, run, run.distribution, run.alpha, metrics)
            )
    _emit(_csv_text(rows), run.out)
    return 0


def _parse_distributions(text: str) -> list[tuple[str, float | None]]:
    items = [part.strip() for part in str(text).split(",") if part.strip()]
    if not items:
        raise InvalidSpec("empty distribution list")
    return [parse_skew(item) for item in items]


def cmd_skew(args) -> int:
    run = _resolve_run(args, default_batch="128", default_format="csv")
    distributions = _parse_distributions(
        _resolve(args, "distributions", "uniform,zipf:1.2,zipf:2.0")
    )
    dump_dir = _resolve(args, "dump_routing", None)
    name, config = run.models[0]
    batch = run.batches[0]
    rows: list[dict] = []
    payloads: list[dict] = []
    for distribution, alpha in distributions:
        if distribution == "balanced":
            counts = balanced_counts(config, batch)
        else:
            spec = SkewSpec(
                distribution=distribution,
                alpha=alpha,
                seed=run.seed,
                num_tokens=batch,
                config=config,
            )
            routing = synthesize_routing(spec)
            counts = expert_histogram(routing, config.num_experts)
            if dump_dir is not None:
                label = distribution if alpha is None else f"{distribution}_{alpha}"
                Path(dump_dir).mkdir(parents=True, exist_ok=True)
                save_routing(Path(dump_dir) / f"routing_{label}.json", routing, spec)
        metrics = imbalance_metrics(counts)
        report = layer_report(config, batch, run.hardware, run.params, counts)
        rows.extend(_cell_rows(name, report, run, distribution, alpha, metrics))
        payloads.append(
            {
                "distribution": distribution,
                "alpha": alpha,
                "seed": run.seed,
                "metrics": {
                    "max_over_mean": metrics.max_over_mean,
                    "gini": metrics.gini,
                    "active_experts": metrics.active_experts,
                },
                "stages": {
                    ("fused" if fused else "unfused"): [
                        _stats_dict(s) for s in report.variant(fused).stages
                    ]
                    for fused in run.fused_modes
                },
            }
        )
    if run.fmt == "csv":
        _emit(_csv_text(rows), run.out)
    elif run.fmt == "json":
        payload = {"model": name, "batch": batch, "cells": payloads}
        _emit(json.dumps(payload, indent=2, sort_keys=True) + "\n", run.out)
    else:
        raise InvalidSpec("skew supports --format csv or json")
    return 0


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------

def cmd_schedule(args) -> int:
    run = _resolve_run(args, default_batch="512", default_format="json")
    name, config = run.models[0]
    block_m = run.params.block_m
    routing_path = _resolve(args, "routing", None)
    if routing_path is not None:
        routing = load_routing(routing_path)
        routing.validate(config.num_experts)
        if routing.top_k != config.top_k:
            raise InvalidSpec(
                f"routing file has k={routing.top_k}, model expects {config.top_k}"
            )
        batch = routing.num_tokens
        distribution, alpha = "file", None
    else:
        batch = run.batches[0]
        distribution = run.distribution if run.distribution != "balanced" else "uniform"
        alpha = run.alpha
        spec = SkewSpec(
            distribution=distribution,
            alpha=alpha,
            seed=run.seed,
            num_tokens=batch,
            config=config,
        )
        routing = synthesize_routing(spec)
    counts = expert_histogram(routing, config.num_experts)
    offsets = expert_offsets(counts)
    schedule = build_block_schedule(offsets, block_m)
    metrics = imbalance_metrics(counts) if counts.sum() else None
    payload = {
        "schema": SCHEDULE_SCHEMA,
        "model": name,
        "num_experts": config.num_experts,
        "top_k": config.top_k,
        "batch": batch,
        "block_m": block_m,
        "distribution": distribution,
        "alpha": alpha,
        "seed": run.seed,
        "histogram": counts.tolist(),
        "offsets": offsets.offsets.tolist(),
        "entries": [[int(e), int(off)] for e, off in schedule.entries],
        "entry_count": len(schedule.entries),
        "imbalance": None
        if metrics is None
        else {
            "max_over_mean": metrics.max_over_mean,
            "gini": metrics.gini,
            "active_experts": metrics.active_experts,
        },
    }
    _emit(json.dumps(payload, indent=2, sort_keys=True) + "\n", run.out)
    return 0


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def shrink_config(config: ModelConfig, base: int = 8) -> ModelConfig:
    """Scale hidden/ffn dims down, preserving their ratio and E, k."""
    factor = min(config.hidden_dim, config.ffn_dim) / base
    return ModelConfig(
        num_experts=config.num_experts,
        top_k=config.top_k,
        hidden_dim=max(1, round(config.hidden_dim / factor)),
        ffn_dim=max(1, round(config.ffn_dim / factor)),
        gating=config.gating,
        element_bytes=config.element_bytes,
    )


def _max_rel_error(a: np.ndarray, b: np.ndarray) -> float:
    if a.size == 0:
        return 0.0
    scale = max(float(np.abs(b).max()), 1e-6)
    return float(np.abs(a.astype(np.float64) - b.astype(np.float64)).max() / scale)


@dataclass
class VerifyTrial:
    index: int
    seed: int
    blocks: tuple[int, int, int]
    partial_tiles: bool
    max_rel_error: float
    bitwise_fused_unfused: bool
    trace_match: bool

    @property
    def ok(self) -> bool:
        return self.bitwise_fused_unfused and self.trace_match


def run_verify_trial(
    config: ModelConfig, batch: int, seed: int, blocks: tuple[int, int, int], index: int
) -> VerifyTrial:
    """One randomized equivalence trial at reduced dimensions."""
    rng = np.random.Generator(np.random.PCG64(seed))
    tokens = rng.standard_normal((batch, config.hidden_dim)).astype(DTYPE)
    router_w = rng.standard_normal(
        (config.hidden_dim, config.num_experts)
    ).astype(DTYPE)
    weights = ExpertWeights.random(config, rng)

    bm, bn, bk = blocks
    fused_params = PipelineParams(block_m=bm, block_n=bn, block_k=bk, fused=True)
    unfused_params = PipelineParams(block_m=bm, block_n=bn, block_k=bk, fused=False)

    out_fused, trace_fused = moe_forward(tokens, router_w, weights, config, fused_params)
    out_unfused, trace_unfused = moe_forward(
        tokens, router_w, weights, config, unfused_params
    )
    oracle = dense_moe_oracle(tokens, router_w, weights, config)

    routing = route(tokens, router_w, config)
    counts = expert_histogram(routing, config.num_experts)
    analytic_fused = trace_from_counts(config, batch, counts, fused_params)
    analytic_unfused = trace_from_counts(config, batch, counts, unfused_params)
    trace_match = (
        trace_fused.records == analytic_fused.records
        and trace_unfused.records == analytic_unfused.records
    )
    partial = bool((counts[counts > 0] % bm).any())
    return VerifyTrial(
        index=index,
        seed=seed,
        blocks=blocks,
        partial_tiles=partial,
        max_rel_error=_max_rel_error(out_fused, oracle),
        bitwise_fused_unfused=bool(np.array_equal(out_fused, out_unfused)),
        trace_match=trace_match,
    )


def cmd_verify(args) -> int:
    models = _resolve_models(args)
    name, full_config = models[0]
    batch = int(_parse_int_list(_resolve(args, "batch", "16"), "batch")[0])
    if batch < 1:
        raise InvalidSpec("batch must be >= 1 for verify")
    trials = int(_resolve(args, "trials", 5))
    if trials < 1:
        raise InvalidSpec("trials must be >= 1")
    tol = float(_resolve(args, "tol", 1e-5))
    if not tol > 0:
        raise InvalidSpec("tolerance must be > 0")
    seed = int(_resolve(args, "seed", 0))
    fmt = str(_resolve(args, "format", "md"))
    out = _resolve(args, "out", None)

    config = shrink_config(full_config)
    expanded = batch * config.top_k
    # Cycle through small odd tile sizes (likely partial tiles) and one
    # oversized block_m (partial whenever an expert holds < T rows).
    block_cycle = [(3, 4, 5), (5, 3, 2), (2, 7, 3), (max(expanded, 1), 8, 8), (1, 2, 1)]
    results = [
        run_verify_trial(config, batch, seed + t, block_cycle[t % len(block_cycle)], t)
        for t in range(trials)
    ]
    max_err = max(r.max_rel_error for r in results)
    passed = all(r.ok for r in results) and max_err <= tol
    any_partial = any(r.partial_tiles for r in results)

    if fmt == "json":
        payload = {
            "model": name,
            "reduced_dims": {
                "num_experts": config.num_experts,
                "top_k": config.top_k,
                "hidden_dim": config.hidden_dim,
                "ffn_dim": config.ffn_dim,
            },
            "batch": batch,
            "tolerance": tol,
            "max_rel_error": max_err,
            "partial_tiles_exercised": any_partial,
            "trials": [
                {
                    "index": r.index,
                    "seed": r.seed,
                    "blocks": list(r.blocks),
                    "partial_tiles": r.partial_tiles,
                    "max_rel_error": r.max_rel_error,
                    "bitwise_fused_unfused": r.bitwise_fused_unfused,
                    "trace_match": r.trace_match,
                }
                for r in results
            ],
            "status": "pass" if passed else "fail",
        }
        _emit(json.dumps(payload, indent=2, sort_keys=True) + "\n", out)
    else:
        lines = [
            f"# Pipeline verification: {name} (reduced dims)",
            "",
            f"- dims: E={config.num_experts} k={config.top_k} "
            f"d={config.hidden_dim} f={config.ffn_dim} "
            f"(from {full_config.hidden_dim}/{full_config.ffn_dim}), batch {batch}",
            f"- tolerance: {tol:g} (max relative error vs dense oracle)",
            "",
            "| trial | seed | blocks (m,n,k) | partial tiles | max rel err "
            "| fused==unfused | trace match |",
            "|---|---|---|---|---|---|---|",
        ]
        for r in results:
            lines.append(
                f"| {r.index} | {r.seed} | {r.blocks} "
                f"| {'yes' if r.partial_tiles else 'no'} | {r.max_rel_error:.3e} "
                f"| {'yes' if r.bitwise_fused_unfused else 'NO'} "
                f"| {'yes' if r.trace_match else 'NO'} |"
            )
        n_ok = sum(1 for r in results if r.ok and r.max_rel_error <= tol)
        lines += [
            "",
            f"result: {'PASS' if passed else 'FAIL'} ({n_ok}/{trials} trials, "
            f"max rel err {max_err:.3e})",
            "",
        ]
        _emit("\n".join(lines), out)
    return 0 if passed else 1


# ---------------------------------------------------------------------------
# Parser / entry points
# ---------------------------------------------------------------------------

def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON config file; flags override its values")
    sub.add_argument("--model", help="model preset name")
    sub.add_argument("--experts", type=int, help="custom model: expert count")
    sub.add_argument("--top-k", dest="top_k", type=int, help="custom model: top-k")
    sub.add_argument(
        "--hidden-dim", dest="hidden_dim", type=int, help="custom model: hidden dim"
    )
    sub.add_argument(
        "--ffn-dim", dest="ffn_dim", type=int, help="custom model: ffn dim"
    )
    sub.add_argument(
        "--gating", choices=[g.value for g in Gating], help="gate normalization"
    )
    sub.add_argument(
        "--element-bytes", dest="element_bytes", type=int, help="stored element size"
    )
    sub.add_argument("--batch", help="batch size (or comma list for sweep)")
    sub.add_argument("--seed", type=int, help="base RNG seed")
    sub.add_argument("--block-m", dest="block_m", type=int, help="row tile size")
    sub.add_argument("--block-n", dest="block_n", type=int, help="column tile size")
    sub.add_argument("--block-k", dest="block_k", type=int, help="reduction tile size")
    sub.add_argument("--out", help="output path (default: stdout)")
    sub.add_argument("--format", help="output format (md, json or csv)")


def _add_hw(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--hardware", help="hardware preset (A100, MI300X)")
    sub.add_argument(
        "--peak-flops", dest="peak_flops", type=float, help="peak FLOP/s override"
    )
    sub.add_argument("--fused", help="gate+up fusion: on, off or both")
    sub.add_argument("--skew", help="routing: balanced, uniform or zipf:ALPHA")
    sub.add_argument(
        "--per-stage",
        dest="per_stage",
        action="store_const",
        const=True,
        help="emit per-stage CSV rows in addition to Total rows",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moeperf",
        description="MoE dispatch pipeline: exact reference + analytical cost model",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_verify = sub.add_parser(
        "verify", help="check the blocked pipeline against the dense oracle"
    )
    _add_common(p_verify)
    p_verify.add_argument("--trials", type=int, help="number of randomized trials")
    p_verify.add_argument("--tol", type=float, help="max relative error allowed")
    p_verify.set_defaults(func=cmd_verify)

    p_analyze = sub.add_parser("analyze", help="analytical report for one layer")
    _add_common(p_analyze)
    _add_hw(p_analyze)
    p_analyze.set_defaults(func=cmd_analyze)

    p_sweep = sub.add_parser("sweep", help="CSV sweep over configs and batches")
    _add_common(p_sweep)
    _add_hw(p_sweep)
    p_sweep.add_argument(
        "--grid", help="config grid: expert-scaling (default) or presets"
    )
    p_sweep.add_argument("--models", help="comma list of presets (overrides --grid)")
    p_sweep.set_defaults(func=cmd_sweep)

    p_skew = sub.add_parser("skew", help="compare routing distributions")
    _add_common(p_skew)
    _add_hw(p_skew)
    p_skew.add_argument(
        "--distributions", help="comma list, e.g. uniform,zipf:1.2,zipf:2.0"
    )
    p_skew.add_argument(
        "--dump-routing", dest="dump_routing", help="directory for routing JSON dumps"
    )
    p_skew.set_defaults(func=cmd_skew)

    p_schedule = sub.add_parser("schedule", help="dump a block schedule as JSON")
    _add_common(p_schedule)
    _add_hw(p_schedule)
    p_schedule.add_argument("--routing", help="routing JSON file to schedule")
    p_schedule.set_defaults(func=cmd_schedule)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args._file_values = _load_config_file(getattr(args, "config", None))
        return args.func(args)
    except (MoeperfError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        # str(KeyError) wraps the message in quotes; unwrap for readability.
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {message}", file=sys.stderr)
        return 2


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
