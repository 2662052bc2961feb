"""Command-line surface: seeded, reproducible runs emitting CSV + manifest.

Every command writes its artifacts plus a ``manifest.json`` recording the
command, resolved parameters, seed, and sha256 checksums of the artifacts.
Identical invocations produce byte-identical outputs.  Files are written
atomically at command end.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

from . import bandit as bandit_mod
from . import deferral as deferral_mod
from . import exitpolicy, heads, metrics, synth
from .dataset import (
    DatasetError,
    group_pools,
    load_records,
    record_to_json,
    save_records,
)
from .rng import derive_seed, substream


def _parse_floats(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part.strip() != ""]


def _parse_ints(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part.strip() != ""]


def _parse_strs(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip() != ""]


def _write_atomic(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _finish(out_dir: Path, command: str, params: dict, seed: int, artifacts: dict[str, str]) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    checksums = {}
    for name, text in artifacts.items():
        data = text.encode("utf-8")
        checksums[name] = hashlib.sha256(data).hexdigest()
        _write_atomic(out_dir / name, data)
    manifest = {
        "command": command,
        "parameters": params,
        "seed": seed,
        "artifacts": checksums,
    }
    _write_atomic(
        out_dir / "manifest.json",
        (json.dumps(manifest, sort_keys=True, indent=2) + "\n").encode("utf-8"),
    )
    return 0


def _records_text(records) -> str:
    return "".join(json.dumps(record_to_json(r)) + "\n" for r in records)


def _cmd_simulate(args) -> int:
    cfg = synth.SynthConfig(
        seed=args.seed,
        layers=args.layers,
        n_segments=args.segments,
        n_candidates=args.candidates,
        final_score_mean=args.score_mean,
        final_score_sd=args.score_sd,
        noise_sd_layer1=args.noise_sd,
        noise_decay=args.noise_decay,
        human_noise_sd=args.human_noise_sd,
        miscalibration=args.miscalibration,
        difficulty_sd=args.difficulty_sd,
        human_noise_spread=args.human_noise_spread,
    )
    if args.kind == "segments":
        systems = [f"sys{i:02d}" for i in range(args.systems)]
        records = synth.generate_segments(
            cfg,
            lang_pairs=args.lang_pairs,
            systems=systems,
            system_quality_sd=args.system_quality_sd,
        )
    else:
        pools = synth.generate_pools(cfg, args.pools, lang_pair=args.lang_pairs[0])
        records = [c for pool in pools for c in pool.candidates]
    params = {k: v for k, v in vars(args).items() if k not in ("func", "output_dir")}
    return _finish(
        Path(args.output_dir), "simulate", params, args.seed,
        {"records.jsonl": _records_text(records)},
    )


def _cmd_validate(args) -> int:
    records = load_records(args.input)
    params = {"input": str(args.input), "n_records": len(records)}
    return _finish(Path(args.output_dir), "validate", params, args.seed, {})


def _cmd_exit_sweep(args) -> int:
    records = load_records(args.input)
    if args.policy == exitpolicy.KIND_CONSTANT:
        parameters: list[float] = [float(k) for k in (args.k or [])]
        if not parameters:
            n_layers = records[0].trajectory.n_layers if records else 0
            parameters = [float(k) for k in range(1, n_layers + 1)]
    else:
        if not args.tau:
            raise ValueError(f"--tau required for policy {args.policy!r}")
        parameters = args.tau
    points = exitpolicy.budget_sweep(records, args.policy, parameters, window=args.window)
    lines = ["policy,parameter,cost_fraction,corr_final,corr_human"]
    for p in points:
        lines.append(
            f"{p.policy},{p.parameter!r},{p.cost_fraction!r},{p.corr_final!r},{p.corr_human!r}"
        )
    params = {
        "input": str(args.input),
        "policy": args.policy,
        "parameters": parameters,
        "window": args.window,
    }
    return _finish(
        Path(args.output_dir), "exit-sweep", params, args.seed,
        {"exit_sweep.csv": "\n".join(lines) + "\n"},
    )


def _cmd_rerank(args) -> int:
    records = load_records(args.input)
    pools = group_pools(records, key=args.group_key)
    if not pools:
        raise ValueError("input contains no pools")
    report = ["pool_id,method,budget_fraction,selected_id,selected_final_score,is_top1,cost_units"]
    selections: dict[str, int] = {}
    costs = []
    snapshot_totals: dict[float, dict[int, int]] = {}
    for pool in pools:
        budget = bandit_mod.budget_units(args.budget_fraction, pool.n_candidates, pool.n_layers)
        if args.method == "bandit":
            cfg = bandit_mod.BanditConfig(
                budget=budget,
                gamma=args.gamma,
                start_layer=args.start_layer,
                snapshot_fractions=tuple(args.snapshot_fractions or ()),
            )
            result = bandit_mod.bandit_rerank(pool, cfg)
            selected, cost = result.selected, result.cost
            for fraction, hist in bandit_mod.layer_snapshot(
                result.trace, cfg.snapshot_fractions
            ).items():
                total = snapshot_totals.setdefault(fraction, {})
                for layer, count in hist.items():
                    total[layer] = total.get(layer, 0) + count
        else:
            selected, cost = bandit_mod.baseline_select(
                pool, args.method, budget, seed=derive_seed(args.seed, "baseline", pool.source_id)
            )
        selections[pool.source_id] = selected
        costs.append(cost)
        finals = pool.final_scores()
        is_top1 = int(float(finals[selected]) >= float(finals.max()))
        report.append(
            f"{pool.source_id},{args.method},{args.budget_fraction!r},"
            f"{pool.candidates[selected].segment_id},{float(finals[selected])!r},"
            f"{is_top1},{cost}"
        )
    avg_final, top1_rate = metrics.rerank_quality(pools, selections)
    summary = [
        "method,budget_fraction,avg_final_score,top1_rate,mean_cost_units",
        f"{args.method},{args.budget_fraction!r},{avg_final!r},{top1_rate!r},"
        f"{float(np.mean(costs))!r}",
    ]
    artifacts = {
        "rerank.csv": "\n".join(report) + "\n",
        "rerank_summary.csv": "\n".join(summary) + "\n",
    }
    if snapshot_totals:
        lines = ["fraction,layer,count"]
        for fraction in sorted(snapshot_totals):
            for layer in sorted(snapshot_totals[fraction]):
                lines.append(f"{fraction!r},{layer},{snapshot_totals[fraction][layer]}")
        artifacts["snapshots.csv"] = "\n".join(lines) + "\n"
    params = {
        "input": str(args.input),
        "method": args.method,
        "budget_fraction": args.budget_fraction,
        "gamma": args.gamma,
        "start_layer": args.start_layer,
        "group_key": args.group_key,
        "snapshot_fractions": list(args.snapshot_fractions or ()),
    }
    return _finish(Path(args.output_dir), "rerank", params, args.seed, artifacts)


def _cmd_defer(args) -> int:
    records = load_records(args.input)
    policy = deferral_mod.DeferralPolicy(kind=args.policy, seed=derive_seed(args.seed, "defer"))
    points = deferral_mod.deferral_curve(records, policy, args.rates)
    lines = ["policy,rate,macro_spearman"]
    for p in points:
        lines.append(f"{p.label},{p.x!r},{p.y!r}")
    params = {"input": str(args.input), "policy": args.policy, "rates": args.rates}
    return _finish(
        Path(args.output_dir), "defer", params, args.seed,
        {"deferral.csv": "\n".join(lines) + "\n"},
    )


def _cmd_calibrate(args) -> int:
    records = load_records(args.input)
    predicted: list[float] = []
    true: list[float] = []
    if args.target == "final":
        for r in records:
            scores = r.trajectory.scores
            errors = r.trajectory.errors
            final = scores[-1]
            for i in range(r.trajectory.n_layers - 1):
                predicted.append(float(errors[i]))
                true.append(abs(float(scores[i]) - float(final)))
    else:
        for r in records:
            if r.human_score is None:
                raise ValueError(f"human_score missing for segment {r.segment_id!r}")
            predicted.append(r.trajectory.final_error)
            true.append(abs(r.trajectory.final_score - r.human_score))
    cfg = metrics.CalibrationConfig(n_bins=args.bins)
    curve = metrics.calibration_curve(predicted, true, cfg)
    lines = ["bin,mean_predicted_error,mean_true_error"]
    for i, (mean_pred, mean_true) in enumerate(curve):
        lines.append(f"{i},{mean_pred!r},{mean_true!r}")
    params = {"input": str(args.input), "bins": args.bins, "target": args.target}
    return _finish(
        Path(args.output_dir), "calibrate", params, args.seed,
        {"calibration.csv": "\n".join(lines) + "\n"},
    )


def _cmd_losses_check(args) -> int:
    rng = substream(args.seed, "gradcheck")
    cases = {
        "instant_confidence_score_grad": 0.0,
        "instant_confidence_error_grad": 0.0,
        "stop_gradient_beta_independence": 0.0,
        "cumulative_layer_loss_grad": 0.0,
        "self_confidence_error_grad": 0.0,
    }
    step = 1e-5
    for _ in range(100):
        y = float(rng.normal(0.0, 2.0))
        gap = float(rng.uniform(0.1, 3.0)) * (1.0 if rng.random() < 0.5 else -1.0)
        y_hat = y - gap
        e_hat = float(rng.uniform(-1.0, 3.0))
        beta = float(rng.uniform(0.1, 2.0))
        cfg = heads.LossConfig(beta=beta)

        def score_term(params):
            loss = (y - params[0]) ** 2
            _, d_y, _ = heads.instant_confidence_loss(y, params[0], e_hat, cfg)
            return loss, np.array([d_y])

        def error_term(params):
            loss, _, d_e = heads.instant_confidence_loss(y, y_hat, params[0], cfg)
            return loss, np.array([d_e])

        cases["instant_confidence_score_grad"] = max(
            cases["instant_confidence_score_grad"],
            heads.finite_diff_check(score_term, np.array([y_hat]), step),
        )
        cases["instant_confidence_error_grad"] = max(
            cases["instant_confidence_error_grad"],
            heads.finite_diff_check(error_term, np.array([e_hat]), step),
        )
        _, d_y_a, _ = heads.instant_confidence_loss(y, y_hat, e_hat, heads.LossConfig(beta=beta))
        _, d_y_b, _ = heads.instant_confidence_loss(
            y, y_hat, e_hat, heads.LossConfig(beta=beta * 3.0)
        )
        cases["stop_gradient_beta_independence"] = max(
            cases["stop_gradient_beta_independence"], abs(d_y_a - d_y_b)
        )

        y_hats = rng.normal(0.0, 1.0, size=5)
        e_hats = rng.normal(0.0, 1.0, size=5)

        def cumulative(params):
            return heads.cumulative_layer_loss(y, params), 2.0 * (params - y)

        def self_conf(params):
            targets = np.abs(y_hats - y_hats[-1])
            return heads.self_confidence_loss(y_hats, params), 2.0 * (params - targets)

        cases["cumulative_layer_loss_grad"] = max(
            cases["cumulative_layer_loss_grad"],
            heads.finite_diff_check(cumulative, y_hats.copy(), step),
        )
        cases["self_confidence_error_grad"] = max(
            cases["self_confidence_error_grad"],
            heads.finite_diff_check(self_conf, e_hats.copy(), step),
        )
    grad_lines = ["case,max_rel_error"]
    for name, value in cases.items():
        grad_lines.append(f"{name},{value!r}")

    stacks, targets = heads.make_realizable_stacks(200, 8, seed=derive_seed(args.seed, "train"))
    result = heads.train_toy_heads(
        stacks, targets, heads.LossConfig(beta=0.75),
        mode=heads.MODE_PER_LAYER, epochs=args.epochs, learning_rate=0.05,
        seed=derive_seed(args.seed, "train-init"),
    )
    log_lines = ["epoch,learning_rate,total_loss,score_loss,confidence_loss,halvings"]
    for e in result.log:
        log_lines.append(
            f"{e.epoch},{e.learning_rate!r},{e.total_loss!r},"
            f"{e.score_loss!r},{e.confidence_loss!r},{e.halvings}"
        )
    params = {"epochs": args.epochs}
    return _finish(
        Path(args.output_dir), "losses-check", params, args.seed,
        {
            "gradcheck.csv": "\n".join(grad_lines) + "\n",
            "training_log.csv": "\n".join(log_lines) + "\n",
        },
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="layerqe",
        description="Budget-aware quality estimation over layerwise scorer trajectories.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--output-dir", default=".", help="directory for artifacts")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--kind", choices=("segments", "pools"), default="segments")
    p.add_argument("--layers", type=int, default=24)
    p.add_argument("--segments", type=int, default=200, help="segments per (language, system)")
    p.add_argument("--candidates", type=int, default=200, help="candidates per pool")
    p.add_argument("--pools", type=int, default=10)
    p.add_argument("--lang-pairs", type=_parse_strs, default=["en-de"])
    p.add_argument("--systems", type=int, default=1)
    p.add_argument("--score-mean", type=float, default=75.0)
    p.add_argument("--score-sd", type=float, default=5.0)
    p.add_argument("--noise-sd", type=float, default=8.0)
    p.add_argument("--noise-decay", type=float, default=0.85)
    p.add_argument("--human-noise-sd", type=float, default=4.0)
    p.add_argument("--human-noise-spread", type=float, default=0.0)
    p.add_argument("--difficulty-sd", type=float, default=0.0)
    p.add_argument("--miscalibration", type=float, default=0.0)
    p.add_argument("--system-quality-sd", type=float, default=0.0)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("validate", help="load and validate a record file")
    common(p)
    p.add_argument("--input", required=True)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("exit-sweep", help="cost/correlation sweep of an exit policy")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--policy", choices=exitpolicy.POLICY_KINDS, required=True)
    p.add_argument("--k", type=_parse_ints, default=None, help="constant-exit layers, comma-separated")
    p.add_argument("--tau", type=_parse_floats, default=None, help="thresholds, comma-separated")
    p.add_argument("--window", type=int, default=3)
    p.set_defaults(func=_cmd_exit_sweep)

    p = sub.add_parser("rerank", help="budgeted candidate reranking")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--method", choices=("bandit",) + bandit_mod.BASELINE_MODES, default="bandit")
    p.add_argument("--budget-fraction", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--start-layer", type=int, default=1)
    p.add_argument("--group-key", default="source_id")
    p.add_argument("--snapshot-fractions", type=_parse_floats, default=None)
    p.set_defaults(func=_cmd_rerank)

    p = sub.add_parser("defer", help="deferral-to-human curve")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--policy", choices=deferral_mod.DEFERRAL_KINDS, default="low_confidence")
    p.add_argument("--rates", type=_parse_floats, default=[0.0, 0.25, 0.5, 0.75, 1.0])
    p.set_defaults(func=_cmd_defer)

    p = sub.add_parser("calibrate", help="confidence calibration curve")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--target", choices=("final", "human"), default="final")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("losses-check", help="gradient checks and a toy training run")
    common(p)
    p.add_argument("--epochs", type=int, default=300)
    p.set_defaults(func=_cmd_losses_check)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DatasetError, ValueError, ArithmeticError, OSError) as exc:
        print(f"layerqe: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
