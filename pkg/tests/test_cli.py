"""CLI smoke tests: composability, manifests, determinism, diagnostics."""

import json
from pathlib import Path

import pytest

from layerqe.cli import main


def run(args):
    return main([str(a) for a in args])


def read_manifest(out_dir):
    return json.loads((Path(out_dir) / "manifest.json").read_text())


def dir_bytes(out_dir):
    return {p.name: p.read_bytes() for p in sorted(Path(out_dir).iterdir())}


@pytest.fixture(scope="module")
def segments_file(tmp_path_factory):
    out = tmp_path_factory.mktemp("segments")
    code = run([
        "simulate", "--output-dir", out, "--seed", 11, "--kind", "segments",
        "--layers", 8, "--segments", 30, "--systems", 3, "--lang-pairs", "en-de,cs-uk",
        "--human-noise-spread", 0.8, "--difficulty-sd", 0.4, "--system-quality-sd", 1.0,
    ])
    assert code == 0
    return out / "records.jsonl"


@pytest.fixture(scope="module")
def pools_file(tmp_path_factory):
    out = tmp_path_factory.mktemp("pools")
    code = run([
        "simulate", "--output-dir", out, "--seed", 12, "--kind", "pools",
        "--layers", 6, "--candidates", 12, "--pools", 5, "--difficulty-sd", 0.4,
    ])
    assert code == 0
    return out / "records.jsonl"


def test_simulate_writes_manifest_with_checksums(segments_file):
    manifest = read_manifest(segments_file.parent)
    assert manifest["command"] == "simulate"
    assert "records.jsonl" in manifest["artifacts"]
    assert len(manifest["artifacts"]["records.jsonl"]) == 64


def test_validate_ok(segments_file, tmp_path):
    assert run(["validate", "--input", segments_file, "--output-dir", tmp_path]) == 0
    manifest = read_manifest(tmp_path)
    assert manifest["parameters"]["n_records"] == 30 * 3 * 2


def test_validate_bad_file(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{broken\n")
    assert run(["validate", "--input", bad, "--output-dir", tmp_path / "out"]) == 1


def test_exit_sweep_on_simulated_segments(segments_file, tmp_path):
    code = run([
        "exit-sweep", "--input", segments_file, "--output-dir", tmp_path,
        "--policy", "confidence", "--tau", "0.5,1.0,2.0",
    ])
    assert code == 0
    lines = (tmp_path / "exit_sweep.csv").read_text().strip().splitlines()
    assert lines[0] == "policy,parameter,cost_fraction,corr_final,corr_human"
    assert len(lines) == 4


def test_exit_sweep_constant_defaults_to_all_layers(segments_file, tmp_path):
    code = run([
        "exit-sweep", "--input", segments_file, "--output-dir", tmp_path,
        "--policy", "constant",
    ])
    assert code == 0
    lines = (tmp_path / "exit_sweep.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + 8


def test_rerank_bandit_full_budget_all_top1(pools_file, tmp_path):
    code = run([
        "rerank", "--input", pools_file, "--output-dir", tmp_path,
        "--method", "bandit", "--budget-fraction", 1.0,
        "--snapshot-fractions", "0.5,1.0",
    ])
    assert code == 0
    summary = (tmp_path / "rerank_summary.csv").read_text().strip().splitlines()[1]
    fields = summary.split(",")
    assert float(fields[3]) == 1.0  # top1_rate
    snapshots = (tmp_path / "snapshots.csv").read_text().strip().splitlines()
    assert snapshots[0] == "fraction,layer,count"


def test_rerank_baseline(pools_file, tmp_path):
    code = run([
        "rerank", "--input", pools_file, "--output-dir", tmp_path,
        "--method", "random", "--budget-fraction", 0.5, "--seed", 3,
    ])
    assert code == 0
    lines = (tmp_path / "rerank.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + 5


def test_defer_curve(segments_file, tmp_path):
    code = run([
        "defer", "--input", segments_file, "--output-dir", tmp_path,
        "--policy", "low_confidence", "--rates", "0,0.5,1",
    ])
    assert code == 0
    lines = (tmp_path / "deferral.csv").read_text().strip().splitlines()
    assert lines[0] == "policy,rate,macro_spearman"
    last = lines[-1].split(",")
    assert float(last[1]) == 1.0 and float(last[2]) == 1.0


def test_calibrate(segments_file, tmp_path):
    code = run([
        "calibrate", "--input", segments_file, "--output-dir", tmp_path, "--bins", 20,
    ])
    assert code == 0
    lines = (tmp_path / "calibration.csv").read_text().strip().splitlines()
    assert len(lines) == 21


def test_losses_check(tmp_path):
    code = run(["losses-check", "--output-dir", tmp_path, "--seed", 5, "--epochs", 50])
    assert code == 0
    grad = (tmp_path / "gradcheck.csv").read_text().strip().splitlines()
    assert grad[0] == "case,max_rel_error"
    values = {row.split(",")[0]: float(row.split(",")[1]) for row in grad[1:]}
    assert all(v < 1e-6 for v in values.values())
    assert (tmp_path / "training_log.csv").exists()


COMMANDS = {
    "simulate": lambda src, out: [
        "simulate", "--output-dir", out, "--seed", 9, "--kind", "segments",
        "--layers", 6, "--segments", 10, "--systems", 2, "--difficulty-sd", 0.3,
    ],
    "exit-sweep": lambda src, out: [
        "exit-sweep", "--input", src, "--output-dir", out, "--policy", "variance",
        "--tau", "0.1,1.0",
    ],
    "rerank": lambda src, out: [
        "rerank", "--input", src, "--output-dir", out, "--method", "bandit",
        "--budget-fraction", 0.6, "--seed", 2,
    ],
    "defer": lambda src, out: [
        "defer", "--input", src, "--output-dir", out, "--policy", "random",
        "--rates", "0,0.3,1", "--seed", 7,
    ],
    "calibrate": lambda src, out: [
        "calibrate", "--input", src, "--output-dir", out, "--bins", 10,
    ],
    "losses-check": lambda src, out: [
        "losses-check", "--output-dir", out, "--seed", 4, "--epochs", 30,
    ],
    "validate": lambda src, out: ["validate", "--input", src, "--output-dir", out],
}


@pytest.mark.parametrize("command", sorted(COMMANDS))
def test_rerun_byte_identical(command, segments_file, pools_file, tmp_path):
    src = pools_file if command == "rerank" else segments_file
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert run(COMMANDS[command](src, out_a)) == 0
    assert run(COMMANDS[command](src, out_b)) == 0
    assert dir_bytes(out_a) == dir_bytes(out_b)
