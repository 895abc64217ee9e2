"""Command-line entry point.

Subcommands: staircase, single-run, oracle-check, perm-vs-derange,
variance-sweep, timing.  Every run writes a ``series.csv`` (iteration,
objective, mi_estimate) and a ``summary.json`` with a config echo;
outputs are byte-identical across reruns of the same seed.

All values are nats; ``--bits`` converts displayed estimates only.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench
from .bench import StaircaseConfig, StepSummary
from .divergences import DivergenceKind
from .estimators import (
    ArchitectureKind,
    EstimatorKind,
    TrainConfig,
    run_training,
)
from .oracle import mc_log_ratio_variance, oracle_mc_runs, true_mi_gaussian
from .sampling import DataConfig, GENERATOR_NAME, MarginalStrategy, make_rng, rho_for_target_mi

SERIES_HEADER = "iteration,objective,mi_estimate"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DIVERGED = 2


def _estimator_from_args(args) -> EstimatorKind:
    family = args.estimator
    if family == "fdime":
        return EstimatorKind(family="fdime", divergence=DivergenceKind(args.divergence))
    if family == "smile":
        tau = None if args.tau in (None, "inf") else float(args.tau)
        return EstimatorKind(family="smile", tau=tau if tau is not None else None)
    return EstimatorKind(family=family)


def _arch_from_args(args) -> ArchitectureKind | None:
    return ArchitectureKind(args.arch) if args.arch else None


def _train_config(args, rho: float = 0.0) -> TrainConfig:
    return TrainConfig(
        estimator=_estimator_from_args(args),
        data=DataConfig(d=args.d, rho=rho, cubic=args.cubic, seed=args.seed),
        arch=_arch_from_args(args),
        batch_size=args.batch_size,
        iterations=args.iters_per_step,
        lr=args.lr,
        marginal_strategy=MarginalStrategy(args.marginal),
        eval_window=min(500, args.iters_per_step),
        seed=args.seed,
    )


def _scale(value: float, bits: bool) -> float:
    return value / math.log(2.0) if bits else value


def emit_series(rows, out_dir: Path, name: str = "series.csv") -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    try:
        with open(path, "w") as fh:
            fh.write(SERIES_HEADER + "\n")
            for it, obj, mi in rows:
                fh.write(f"{it},{obj:.9g},{mi:.9g}\n")
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc
    return path


def emit_summary(summary: dict, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "summary.json"
    try:
        with open(path, "w") as fh:
            json.dump(summary, fh, sort_keys=True, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc
    return path


def _config_echo(args) -> dict:
    return {
        "estimator": args.estimator,
        "divergence": getattr(args, "divergence", None),
        "arch": args.arch,
        "marginal": args.marginal,
        "d": args.d,
        "batch_size": args.batch_size,
        "steps": getattr(args, "steps", None),
        "iters_per_step": args.iters_per_step,
        "lr": args.lr,
        "tau": getattr(args, "tau", None),
        "seed": args.seed,
        "seeds": args.seeds,
        "cubic": args.cubic,
        "bits": args.bits,
        "generator": GENERATOR_NAME,
    }


def _step_summary_dict(s: StepSummary, bits: bool) -> dict:
    return {
        "target_mi": _scale(s.target_mi, bits),
        "bias": _scale(s.bias, bits),
        "variance": s.variance / math.log(2.0) ** 2 if bits else s.variance,
        "mse": s.mse / math.log(2.0) ** 2 if bits else s.mse,
    }


def _series_rows(objective, estimates, bits: bool):
    return [
        (i, float(o), _scale(float(m), bits))
        for i, (o, m) in enumerate(zip(objective, estimates))
    ]


def cmd_staircase(args) -> int:
    out = Path(args.out)
    seeds = [args.seed + k for k in range(args.seeds)]
    results = []
    for k, seed in enumerate(seeds):
        base = _train_config(args)
        base = replace(base, seed=seed, data=replace(base.data, seed=seed))
        cfg = StaircaseConfig(base=base, steps=tuple(args.steps), iters_per_step=args.iters_per_step)
        results.append(bench.run_staircase(cfg))
    first = results[0]
    emit_series(_series_rows(first.objective, first.mi_estimate, args.bits), out)
    summary = {
        "config": _config_echo(args),
        "window": min(500, args.iters_per_step),
        "seeds": seeds,
        "per_seed": [
            {
                "seed": seed,
                "diverged": r.diverged,
                "steps": [_step_summary_dict(s, args.bits) for s in r.summaries],
            }
            for seed, r in zip(seeds, results)
        ],
    }
    emit_summary(summary, out)
    return EXIT_DIVERGED if any(r.diverged for r in results) else EXIT_OK


def cmd_single_run(args) -> int:
    out = Path(args.out)
    rho = rho_for_target_mi(args.target_mi, args.d)
    cfg = _train_config(args, rho=rho)
    record = run_training(cfg)
    emit_series(_series_rows(record.objective, record.mi_estimate, args.bits), out)
    true_mi = true_mi_gaussian(args.d, rho)
    summary = {
        "config": _config_echo(args),
        "window": cfg.eval_window,
        "seeds": [args.seed],
        "true_mi": _scale(true_mi, args.bits),
        "diverged": record.diverged,
        "diverged_at": record.diverged_at,
    }
    if not record.diverged and len(record.mi_estimate) >= cfg.eval_window:
        s = bench.summarize(record.mi_estimate, cfg.eval_window, true_mi)
        summary["steps"] = [_step_summary_dict(s, args.bits)]
    emit_summary(summary, out)
    return EXIT_DIVERGED if record.diverged else EXIT_OK


def cmd_oracle_check(args) -> int:
    out = Path(args.out)
    rng = make_rng(args.seed)
    rho = rho_for_target_mi(args.target_mi, args.d)
    mean, var = oracle_mc_runs(args.d, rho, args.samples, args.trials, rng)
    predicted = args.d * rho**2 / args.samples
    summary = {
        "config": {
            "d": args.d,
            "target_mi": args.target_mi,
            "samples": args.samples,
            "trials": args.trials,
            "seed": args.seed,
            "generator": GENERATOR_NAME,
        },
        "true_mi": true_mi_gaussian(args.d, rho),
        "mc_mean": mean,
        "mc_variance": var,
        "predicted_variance": predicted,
        "scalar_formula_variance": mc_log_ratio_variance(true_mi_gaussian(args.d, rho), args.samples)
        if args.d == 1
        else None,
    }
    emit_summary(summary, out)
    return EXIT_OK


def cmd_perm_vs_derange(args) -> int:
    out = Path(args.out)
    base = _train_config(args)
    cfg = StaircaseConfig(base=base, steps=tuple(args.steps), iters_per_step=args.iters_per_step)
    result = bench.permutation_vs_derangement(cfg)
    rows = _series_rows(result.derangement.objective, result.derangement.mi_estimate, args.bits)
    emit_series(rows, out)
    emit_series(
        _series_rows(result.permutation.objective, result.permutation.mi_estimate, args.bits),
        out,
        name="series_permutation.csv",
    )
    summary = {
        "config": _config_echo(args),
        "window": min(500, args.iters_per_step),
        "seeds": [args.seed],
        "log_n": result.log_n,
        "permutation_final": _scale(result.permutation_final, args.bits),
        "derangement_final": _scale(result.derangement_final, args.bits),
        "permutation_below_bound": result.permutation_below_bound,
    }
    emit_summary(summary, out)
    diverged = result.permutation.diverged or result.derangement.diverged
    return EXIT_DIVERGED if diverged else EXIT_OK


def cmd_variance_sweep(args) -> int:
    out = Path(args.out)
    base = _train_config(args)
    points = bench.variance_vs_batch_sweep(
        base, list(args.batch_sizes), args.target_mi, n_seeds=args.seeds
    )
    summary = {
        "config": _config_echo(args),
        "seeds": [args.seed + k for k in range(args.seeds)],
        "window": min(500, args.iters_per_step),
        "points": [
            {"batch_size": p.batch_size, "variance": p.variance, "variance_times_n": p.variance_times_n}
            for p in points
        ],
    }
    emit_summary(summary, out)
    return EXIT_OK


def cmd_timing(args) -> int:
    out = Path(args.out)
    combos = [
        (_estimator_from_args(args), ArchitectureKind(a))
        for a in (args.archs or ["deranged", "joint"])
    ]
    rows = bench.timing_harness(
        combos,
        d=args.d,
        batch_size=args.batch_size,
        steps=tuple(args.steps),
        iters_per_step=args.iters_per_step,
        seed=args.seed,
    )
    out.mkdir(parents=True, exist_ok=True)
    path = out / "timing.csv"
    with open(path, "w") as fh:
        fh.write("estimator,arch,d,batch_size,seconds\n")
        for r in rows:
            fh.write(f"{r.estimator},{r.arch},{r.d},{r.batch_size},{r.seconds:.6f}\n")
    emit_summary({"config": _config_echo(args), "rows": len(rows)}, out)
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--estimator", choices=["fdime", "mine", "nwj", "smile", "cpc", "njee"],
                   default="fdime")
    p.add_argument("--divergence", choices=["kl", "gan", "hd"], default="gan")
    p.add_argument("--arch", choices=["joint", "separable", "deranged"], default=None)
    p.add_argument("--marginal",
                   choices=["derange-shift", "derange-random", "permutation", "all-pairs"],
                   default="derange-shift")
    p.add_argument("--d", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--iters-per-step", type=int, default=4000)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--tau", default="1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--cubic", action="store_true")
    p.add_argument("--bits", action="store_true")
    p.add_argument("--out", default="out")
    p.add_argument("--config", default=None, help="key=value file of flag defaults")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mibench")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("staircase", help="staircase training protocol")
    _add_common(p)
    p.add_argument("--steps", type=float, nargs="+", default=[2, 4, 6, 8, 10])
    p.set_defaults(func=cmd_staircase)

    p = sub.add_parser("single-run", help="one fixed-target training run")
    _add_common(p)
    p.add_argument("--target-mi", type=float, default=2.0)
    p.set_defaults(func=cmd_single_run)

    p = sub.add_parser("oracle-check", help="closed-form oracle Monte Carlo check")
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--target-mi", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("perm-vs-derange", help="permutation vs derangement arms")
    _add_common(p)
    p.add_argument("--steps", type=float, nargs="+", default=[2, 4, 6, 8, 10])
    p.set_defaults(func=cmd_perm_vs_derange)

    p = sub.add_parser("variance-sweep", help="estimator variance vs batch size")
    _add_common(p)
    p.add_argument("--target-mi", type=float, default=2.0)
    p.add_argument("--batch-sizes", type=int, nargs="+", default=[64, 256, 512])
    p.set_defaults(func=cmd_variance_sweep)

    p = sub.add_parser("timing", help="wall-clock staircase timing")
    _add_common(p)
    p.add_argument("--steps", type=float, nargs="+", default=[2, 4, 6, 8, 10])
    p.add_argument("--archs", nargs="+", choices=["joint", "separable", "deranged"],
                   default=None)
    p.set_defaults(func=cmd_timing)
    return parser


def _apply_config_file(argv: list[str]) -> list[str]:
    """Prepend key=value entries from --config as flags; explicit CLI flags
    win because argparse takes the last occurrence."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        return argv
    path = Path(argv[idx + 1])
    extra: list[str] = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#") or "=" not in line:
            continue
        key, value = line.split("=", 1)
        flag = "--" + key.strip().replace("_", "-")
        value = value.strip()
        if value.lower() in ("true", "false"):
            if value.lower() == "true":
                extra.append(flag)
        else:
            extra.append(flag)
            extra.extend(value.split())
    # file defaults first, then explicit flags (argparse keeps the last value)
    return extra + argv


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if argv and not argv[0].startswith("-"):
        argv = [argv[0]] + _apply_config_file(argv[1:])
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
