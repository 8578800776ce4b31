#!/usr/bin/env python3
"""Print a per-stage roofline profile for one model configuration.

Thin wrapper over :func:`moeperf.layer_report`; equivalent to
``moeperf analyze --per-stage`` but handy for quick interactive use.
"""

from __future__ import annotations

import argparse

from moeperf import MODEL_PRESETS, hardware_preset, layer_report, preset


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--model", default="Mixtral8x7B", choices=sorted(MODEL_PRESETS)
    )
    parser.add_argument("--batch", type=int, default=512)
    parser.add_argument("--hardware", default="A100")
    args = parser.parse_args()

    report = layer_report(preset(args.model), args.batch, hardware_preset(args.hardware))
    for variant in (report.fused, report.unfused):
        label = "fused" if variant.fused else "unfused"
        print(f"\n{args.model} batch={args.batch} ({label} gate+up)")
        header = f"{'stage':<14}{'GFLOPs':>12}{'MiB':>12}{'AI':>10}  verdict"
        print(header)
        print("-" * len(header))
        for stats in variant.stages:
            print(
                f"{stats.stage:<14}{stats.flops / 1e9:>12.3f}"
                f"{stats.bytes / 2**20:>12.2f}"
                f"{stats.arithmetic_intensity:>10.2f}  {stats.verdict.value}"
            )
        print(
            f"{'Total':<14}{variant.total.flops / 1e9:>12.3f}"
            f"{variant.total.bytes / 2**20:>12.2f}"
            f"{variant.total.arithmetic_intensity:>10.2f}  "
            f"{variant.total.verdict.value}"
        )
        print(
            f"ffn time share {variant.ffn_time_share:.4f}, "
            f"permute+unpermute {variant.permute_time_share:.4f}, "
            f"effective {variant.effective_flops / 1e12:.2f} TFLOP/s"
        )


if __name__ == "__main__":
    main()
