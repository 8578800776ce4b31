"""CLI contract: subcommands, formats, determinism, exit codes."""

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

import moeperf.cli as cli
from moeperf.cli import CSV_COLUMNS, main, shrink_config
from moeperf.model import preset


def _read_csv(text: str) -> list[dict]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def run_cli(args: list[str], capsys) -> tuple[int, str, str]:
    code = main(args)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def test_verify_passes_and_reports(capsys):
    code, out, _ = run_cli(
        ["verify", "--model", "Mixtral8x7B", "--batch", "8", "--trials", "3"], capsys
    )
    assert code == 0
    assert "PASS" in out
    assert "max rel err" in out


def test_verify_json_format(capsys):
    code, out, _ = run_cli(
        ["verify", "--batch", "6", "--trials", "2", "--format", "json"], capsys
    )
    assert code == 0
    payload = json.loads(out)
    assert payload["status"] == "pass"
    assert payload["max_rel_error"] == 0.0
    assert len(payload["trials"]) == 2
    assert all(t["bitwise_fused_unfused"] for t in payload["trials"])


def test_verify_exercises_partial_tiles(capsys):
    code, out, _ = run_cli(
        ["verify", "--model", "DeepSeekV3", "--batch", "16", "--trials", "5",
         "--format", "json"],
        capsys,
    )
    assert code == 0
    payload = json.loads(out)
    assert payload["partial_tiles_exercised"] is True
    assert payload["reduced_dims"]["num_experts"] == 256
    assert payload["reduced_dims"]["top_k"] == 8


def test_verify_detects_mismatch_exit_1(capsys, monkeypatch):
    real_oracle = cli.dense_moe_oracle

    def broken_oracle(tokens, rw, weights, config):
        out = real_oracle(tokens, rw, weights, config)
        return out + np.float32(0.1)

    monkeypatch.setattr(cli, "dense_moe_oracle", broken_oracle)
    code, out, _ = run_cli(["verify", "--batch", "4", "--trials", "1"], capsys)
    assert code == 1
    assert "FAIL" in out


def test_verify_corrupted_weights_exit_2(capsys, monkeypatch):
    from moeperf.model import ExpertWeights

    real_random = ExpertWeights.random.__func__

    @classmethod
    def corrupted(cls, config, rng):
        w = real_random(cls, config, rng)
        return ExpertWeights(gate=w.gate, up=w.up, down=w.down[:-1])

    monkeypatch.setattr(ExpertWeights, "random", corrupted)
    code, _, err = run_cli(["verify", "--batch", "4", "--trials", "1"], capsys)
    assert code == 2
    assert "error:" in err


def test_shrink_config_preserves_ratio():
    reduced = shrink_config(preset("DeepSeekV3"))
    assert reduced.num_experts == 256
    assert reduced.top_k == 8
    assert reduced.ffn_dim == 8
    assert reduced.hidden_dim == 28  # 7168:2048 = 3.5:1
    reduced = shrink_config(preset("Mixtral8x7B"))
    assert (reduced.hidden_dim, reduced.ffn_dim) == (8, 28)


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def test_analyze_md_contains_anchors(capsys):
    code, out, _ = run_cli(["analyze", "--model", "Mixtral8x7B"], capsys)
    assert code == 0
    assert "# MoE layer analysis: Mixtral8x7B" in out
    assert "minimal-traffic convention" in out
    assert "96468992" in out  # exact closed-form savings at B=512
    assert "| GateUp |" in out


def test_analyze_json_structure(capsys):
    code, out, _ = run_cli(
        ["analyze", "--model", "DeepSeekV3", "--batch", "256", "--format", "json"],
        capsys,
    )
    assert code == 0
    payload = json.loads(out)
    assert payload["launches"] == {"naive": 772, "pipeline": 5, "expert_gemm": 768}
    stages = payload["variants"]["fused"]["stages"]
    assert [s["stage"] for s in stages] == [
        "Router", "Permute", "GateUp", "Down", "Unpermute",
    ]
    assert payload["variants"]["fused"]["expert_ffn"]["verdict"] == "MemoryBound"
    assert payload["traffic"]["closed_form"]["savings_bytes"] == (
        payload["traffic"]["tile_trace"]["savings_bytes"]
    )


def test_analyze_skewed_routing(capsys):
    code, out, _ = run_cli(
        ["analyze", "--model", "Qwen2MoE57B", "--batch", "64", "--skew", "zipf:2.0",
         "--seed", "4", "--format", "json"],
        capsys,
    )
    assert code == 0
    payload = json.loads(out)
    assert payload["routing"]["distribution"] == "zipf"
    assert payload["routing"]["alpha"] == 2.0
    assert payload["routing"]["active_experts"] < 64
    assert payload["routing"]["max_over_mean"] > 1.5


def test_analyze_deterministic_output(tmp_path, capsys):
    paths = [tmp_path / "a.json", tmp_path / "b.json"]
    for path in paths:
        code, _, _ = run_cli(
            ["analyze", "--model", "Mixtral8x7B", "--format", "json",
             "--out", str(path)],
            capsys,
        )
        assert code == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def test_sweep_default_grid_six_rows_monotone(capsys):
    code, out, _ = run_cli(["sweep", "--batch", "512"], capsys)
    assert code == 0
    rows = _read_csv(out)
    assert len(rows) == 6
    assert list(rows[0].keys()) == CSV_COLUMNS
    assert [int(r["E"]) for r in rows] == [8, 16, 32, 64, 128, 256]
    effective = [
        int(r["flops"]) / float(r["predicted_seconds"]) for r in rows
    ]
    assert all(a >= b for a, b in zip(effective, effective[1:]))
    assert all(r["stage"] == "Total" for r in rows)
    assert [int(r["launches_naive"]) for r in rows] == [28, 52, 100, 196, 388, 772]
    assert all(int(r["launches_pipeline"]) == 5 for r in rows)


def test_sweep_batch_axis_row_groups(capsys):
    code, out, _ = run_cli(
        ["sweep", "--model", "Mixtral8x7B", "--batch", "32,128,512,2048"], capsys
    )
    assert code == 0
    rows = _read_csv(out)
    assert [int(r["batch"]) for r in rows] == [32, 128, 512, 2048]
    seconds = [float(r["predicted_seconds"]) for r in rows]
    assert all(a < b for a, b in zip(seconds, seconds[1:]))


def test_sweep_fused_both_and_per_stage(capsys):
    code, out, _ = run_cli(
        ["sweep", "--model", "Mixtral8x7B", "--batch", "64", "--fused", "both",
         "--per-stage"],
        capsys,
    )
    assert code == 0
    rows = _read_csv(out)
    # 2 variants x (5 stages + Total)
    assert len(rows) == 12
    assert {r["fused"] for r in rows} == {"true", "false"}
    fused_rows = [r for r in rows if r["fused"] == "true"]
    assert [r["stage"] for r in fused_rows] == [
        "Router", "Permute", "GateUp", "Down", "Unpermute", "Total",
    ]
    total = sum(int(r["flops"]) for r in fused_rows[:-1])
    assert total == int(fused_rows[-1]["flops"])


def test_sweep_deterministic_bytes(tmp_path, capsys):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for path in paths:
        code, _, _ = run_cli(
            ["sweep", "--batch", "128,512", "--skew", "zipf:1.2", "--seed", "9",
             "--out", str(path)],
            capsys,
        )
        assert code == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_sweep_presets_grid(capsys):
    code, out, _ = run_cli(["sweep", "--grid", "presets", "--batch", "64"], capsys)
    assert code == 0
    rows = _read_csv(out)
    assert [r["model"] for r in rows] == [
        "DeepSeekV3", "Mixtral8x22B", "Mixtral8x7B", "Qwen2MoE57B",
    ]


# ---------------------------------------------------------------------------
# skew
# ---------------------------------------------------------------------------

def test_skew_three_rows_increasing_imbalance(capsys):
    code, out, _ = run_cli(
        ["skew", "--model", "Qwen2MoE57B", "--batch", "128", "--seed", "5"], capsys
    )
    assert code == 0
    rows = _read_csv(out)
    assert len(rows) == 3
    assert [r["distribution"] for r in rows] == ["uniform", "zipf", "zipf"]
    assert [float(r["alpha"]) for r in rows] == [0.0, 1.2, 2.0]
    mom = [float(r["max_over_mean"]) for r in rows]
    assert mom[0] < mom[1] < mom[2]
    gini = [float(r["gini"]) for r in rows]
    assert gini[0] < gini[1] < gini[2]
    # Fixed budget: identical flops in every cell.
    assert len({r["flops"] for r in rows}) == 1
    active = [int(r["active_experts"]) for r in rows]
    assert active[0] >= active[1] >= active[2]


def test_skew_dump_routing_loadable(tmp_path, capsys):
    from moeperf.skew import load_routing

    code, _, _ = run_cli(
        ["skew", "--model", "Qwen2MoE57B", "--batch", "32", "--seed", "2",
         "--distributions", "zipf:2.0", "--dump-routing", str(tmp_path)],
        capsys,
    )
    assert code == 0
    dump = tmp_path / "routing_zipf_2.0.json"
    assert dump.exists()
    routing = load_routing(dump)
    assert routing.indices.shape == (32, 4)


def test_skew_json_format(capsys):
    code, out, _ = run_cli(
        ["skew", "--batch", "16", "--format", "json", "--seed", "3"], capsys
    )
    assert code == 0
    payload = json.loads(out)
    assert len(payload["cells"]) == 3
    assert payload["cells"][0]["distribution"] == "uniform"


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------

def test_schedule_from_routing_file(tmp_path, capsys):
    # Histogram [5, 0, 7] over 3 experts with k=1 -> worked example entries.
    indices = [[0]] * 5 + [[2]] * 7
    weights = [[1.0]] * 12
    path = tmp_path / "routing.json"
    path.write_text(json.dumps({"indices": indices, "weights": weights}))
    code, out, _ = run_cli(
        ["schedule", "--experts", "3", "--top-k", "1", "--hidden-dim", "8",
         "--ffn-dim", "8", "--block-m", "4", "--routing", str(path)],
        capsys,
    )
    assert code == 0
    payload = json.loads(out)
    assert payload["histogram"] == [5, 0, 7]
    assert payload["offsets"] == [0, 5, 5, 12]
    assert payload["entries"] == [[0, 0], [0, 4], [2, 0], [2, 4]]
    assert payload["entry_count"] == 4


def test_schedule_uniform_entry_count_cross_check(capsys):
    code, out, _ = run_cli(
        ["schedule", "--model", "DeepSeekV3", "--batch", "512", "--seed", "0"],
        capsys,
    )
    assert code == 0
    payload = json.loads(out)
    histogram = payload["histogram"]
    block_m = payload["block_m"]
    expected = sum(-(-n // block_m) for n in histogram)
    assert payload["entry_count"] == expected
    assert payload["entry_count"] == len(payload["entries"])
    assert sum(histogram) == 512 * 8
    offsets = payload["offsets"]
    assert offsets[-1] == 4096
    assert all(b - a == n for a, b, n in zip(offsets, offsets[1:], histogram))


def test_schedule_routing_file_bad_expert_id(tmp_path, capsys):
    path = tmp_path / "routing.json"
    path.write_text(json.dumps({"indices": [[7]], "weights": [[1.0]]}))
    code, _, err = run_cli(
        ["schedule", "--experts", "3", "--top-k", "1", "--hidden-dim", "4",
         "--ffn-dim", "4", "--routing", str(path)],
        capsys,
    )
    assert code == 2
    assert "error:" in err


# ---------------------------------------------------------------------------
# config file, errors, entry points
# ---------------------------------------------------------------------------

def test_config_file_merging_flags_win(tmp_path, capsys):
    config_path = tmp_path / "run.json"
    config_path.write_text(json.dumps({"model": "Qwen2MoE57B", "batch": "64"}))
    code, out, _ = run_cli(
        ["analyze", "--config", str(config_path), "--format", "json"], capsys
    )
    assert code == 0
    payload = json.loads(out)
    assert payload["model"] == "Qwen2MoE57B"
    assert payload["batch"] == 64
    code, out, _ = run_cli(
        ["analyze", "--config", str(config_path), "--batch", "128",
         "--format", "json"],
        capsys,
    )
    assert code == 0
    assert json.loads(out)["batch"] == 128  # flag overrides file


@pytest.mark.parametrize(
    "argv",
    [
        ["analyze", "--model", "NoSuchModel"],
        ["analyze", "--batch", "0"],
        ["analyze", "--hardware", "H999"],
        ["analyze", "--hardware", "MI300X"],  # no peak FLOPS available
        ["analyze", "--format", "yaml"],
        ["sweep", "--skew", "zipf"],
        ["sweep", "--skew", "zipf:-1"],
        ["sweep", "--skew", "pareto"],
        ["sweep", "--grid", "nope"],
        ["skew", "--distributions", ""],
        ["schedule", "--block-m", "0"],
        ["verify", "--trials", "0"],
        ["verify", "--batch", "0"],
        ["analyze", "--experts", "4", "--top-k", "9", "--hidden-dim", "8",
         "--ffn-dim", "8"],
        ["analyze", "--experts", "4"],  # incomplete custom model
        ["analyze", "--config", "/nonexistent/run.json"],
    ],
)
def test_usage_errors_exit_2(argv, capsys):
    code, _, _ = run_cli(argv, capsys)
    assert code == 2


def test_mi300x_with_peak_flops_works(capsys):
    code, out, _ = run_cli(
        ["analyze", "--hardware", "MI300X", "--peak-flops", "1.3e15",
         "--format", "json"],
        capsys,
    )
    assert code == 0
    payload = json.loads(out)
    assert payload["hardware"]["mem_bandwidth"] == 5.3e12


def test_unknown_subcommand_exits_2(capsys):
    assert main(["frobnicate"]) == 2
    capsys.readouterr()


def test_console_script_subprocess():
    result = subprocess.run(
        [sys.executable, "-m", "moeperf", "verify", "--batch", "4", "--trials", "1"],
        capture_output=True,
        text=True,
        timeout=120,
    )
    assert result.returncode == 0
    assert "PASS" in result.stdout
