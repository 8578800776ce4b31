#!/usr/bin/env python3
"""Sample routing skew across Zipf exponents and print imbalance metrics.

For each distribution the script synthesizes routing tables over a range
of seeds and reports mean imbalance, matching ``moeperf skew`` but with
seed-averaged statistics.
"""

from __future__ import annotations

import argparse
import statistics

from moeperf import (
    MODEL_PRESETS,
    SkewSpec,
    expert_histogram,
    imbalance_metrics,
    preset,
    synthesize_routing,
)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--model", default="Qwen2MoE57B", choices=sorted(MODEL_PRESETS)
    )
    parser.add_argument("--batch", type=int, default=128)
    parser.add_argument("--seeds", type=int, default=16)
    parser.add_argument(
        "--alphas", default="0.5,0.8,1.2,1.6,2.0",
        help="comma-separated Zipf exponents (uniform is always included)",
    )
    args = parser.parse_args()

    config = preset(args.model)
    cases: list[tuple[str, str, float | None]] = [("uniform", "uniform", None)]
    for raw in args.alphas.split(","):
        alpha = float(raw)
        cases.append((f"zipf:{alpha:g}", "zipf", alpha))

    header = (
        f"{'distribution':<14}{'max/mean':>10}{'gini':>8}{'active':>8}"
        f"{'of':>4}"
    )
    print(f"{args.model}: {args.batch} tokens x top-{config.top_k}, "
          f"{args.seeds} seeds each")
    print(header)
    print("-" * len(header))
    for label, dist, alpha in cases:
        moms, ginis, actives = [], [], []
        for seed in range(args.seeds):
            spec = SkewSpec(
                distribution=dist,
                alpha=alpha,
                seed=seed,
                num_tokens=args.batch,
                config=config,
            )
            counts = expert_histogram(
                synthesize_routing(spec), config.num_experts
            )
            metrics = imbalance_metrics(counts)
            moms.append(metrics.max_over_mean)
            ginis.append(metrics.gini)
            actives.append(metrics.active_experts)
        print(
            f"{label:<14}{statistics.mean(moms):>10.3f}"
            f"{statistics.mean(ginis):>8.3f}"
            f"{statistics.mean(actives):>8.1f}{config.num_experts:>4}"
        )


if __name__ == "__main__":
    main()
