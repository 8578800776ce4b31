#!/usr/bin/env python3
"""Sweep the expert-scaling grid and print effective throughput per point.

Shows how per-layer effective FLOP/s decays as expert count grows while
active parameters stay roughly fixed; ``moeperf sweep`` emits the same
data as CSV.
"""

from __future__ import annotations

import argparse

from moeperf import (
    expert_scaling_configs,
    hardware_preset,
    kernel_launches_naive,
    layer_report,
)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=512)
    parser.add_argument("--hidden-dim", type=int, default=4096)
    parser.add_argument("--hardware", default="A100")
    args = parser.parse_args()

    hw = hardware_preset(args.hardware)
    header = (
        f"{'E':>4}{'k':>4}{'d_ffn':>8}{'eff TFLOP/s':>14}"
        f"{'layer ms':>12}{'naive launches':>16}{'pipeline':>10}"
    )
    print(header)
    print("-" * len(header))
    for config in expert_scaling_configs(hidden_dim=args.hidden_dim):
        report = layer_report(config, args.batch, hw)
        variant = report.fused
        print(
            f"{config.num_experts:>4}{config.top_k:>4}{config.ffn_dim:>8}"
            f"{variant.effective_flops / 1e12:>14.3f}"
            f"{variant.total_seconds * 1e3:>12.4f}"
            f"{kernel_launches_naive(config.num_experts):>16}"
            f"{report.launches_pipeline:>10}"
        )


if __name__ == "__main__":
    main()
