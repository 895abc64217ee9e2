"""Experiment drivers: MI staircases, bias/variance/MSE summaries,
variance-vs-batch sweeps, permutation-vs-derangement comparison, and a
wall-clock timing harness."""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .estimators import (
    ArchitectureKind,
    EstimatorKind,
    RunRecord,
    TrainConfig,
    TrainingDiverged,
    make_trainer,
)
from .oracle import true_mi_gaussian
from .sampling import (
    DataConfig,
    MarginalStrategy,
    make_rng,
    rho_for_target_mi,
    sample_joint,
)

DEFAULT_STEPS = (2.0, 4.0, 6.0, 8.0, 10.0)
DEFAULT_WINDOW = 500

THREADS_ENV = "FDIME_THREADS"


class BenchConfigError(ValueError):
    pass


@dataclass(frozen=True)
class StaircaseConfig:
    base: TrainConfig
    steps: tuple[float, ...] = DEFAULT_STEPS
    iters_per_step: int = 4000

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if not self.steps or any(b <= a for a, b in zip(self.steps, self.steps[1:])):
            raise BenchConfigError("steps must be non-empty and strictly increasing")
        if self.iters_per_step < 1:
            raise BenchConfigError("iters_per_step must be >= 1")


@dataclass(frozen=True)
class StepSummary:
    target_mi: float
    bias: float
    variance: float
    mse: float


def summarize(series: np.ndarray, window: int, true_mi: float) -> StepSummary:
    """Windowed bias / population variance / MSE of an estimate series.

    mse = bias^2 + variance holds exactly (population form, ddof=0).
    """
    series = np.asarray(series, dtype=np.float64)
    if window < 1 or window > len(series):
        raise BenchConfigError(f"window {window} outside series of length {len(series)}")
    tail = series[-window:]
    bias = float(np.mean(tail)) - true_mi
    variance = float(np.var(tail))
    mse = float(np.mean((tail - true_mi) ** 2))
    return StepSummary(target_mi=true_mi, bias=bias, variance=variance, mse=mse)


@dataclass
class StaircaseResult:
    config: StaircaseConfig
    objective: np.ndarray
    mi_estimate: np.ndarray
    summaries: list[StepSummary]
    diverged: bool = False
    diverged_at: int | None = None


def run_staircase(config: StaircaseConfig) -> StaircaseResult:
    """Train one network continuously through increasing-MI steps.

    Each step retargets rho so the true Gaussian MI matches the step value;
    the summary window is the final ``eval_window`` iterations per step.
    """
    base = config.base
    trainer = make_trainer(base)
    data_rng = make_rng(base.seed, stream=0)
    total = len(config.steps) * config.iters_per_step
    objective = np.zeros(total)
    estimate = np.zeros(total)
    summaries: list[StepSummary] = []
    it = 0
    window = min(base.eval_window, config.iters_per_step)
    for target in config.steps:
        rho = rho_for_target_mi(target, base.data.d)
        data = replace(base.data, rho=rho)
        for _ in range(config.iters_per_step):
            batch = sample_joint(data, base.batch_size, data_rng)
            try:
                objective[it], estimate[it] = trainer.step(batch)
            except TrainingDiverged:
                return StaircaseResult(
                    config=config,
                    objective=objective[:it],
                    mi_estimate=estimate[:it],
                    summaries=summaries,
                    diverged=True,
                    diverged_at=it,
                )
            it += 1
        summaries.append(summarize(estimate[:it], window, target))
    return StaircaseResult(
        config=config, objective=objective, mi_estimate=estimate, summaries=summaries
    )


def _run_training_worker(config: TrainConfig) -> RunRecord:
    from .estimators import run_training

    return run_training(config)


def max_workers() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_seeds(configs: list[TrainConfig]) -> list[RunRecord]:
    """Independent runs, optionally in parallel processes (FDIME_THREADS)."""
    workers = max_workers()
    if workers <= 1 or len(configs) <= 1:
        return [_run_training_worker(c) for c in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_training_worker, configs))


def seed_sweep_configs(base: TrainConfig, n_seeds: int) -> list[TrainConfig]:
    """n consecutive seeds starting from the base seed."""
    return [replace(base, seed=base.seed + k) for k in range(n_seeds)]


@dataclass
class SweepPoint:
    batch_size: int
    variance: float
    variance_times_n: float


def variance_vs_batch_sweep(
    base: TrainConfig, batch_sizes: list[int], target_mi: float, n_seeds: int = 3
) -> list[SweepPoint]:
    """Windowed estimator variance per batch size, averaged across seeds."""
    if any(b <= a for a, b in zip(batch_sizes, batch_sizes[1:])):
        raise BenchConfigError("batch sizes must be strictly increasing")
    rho = rho_for_target_mi(target_mi, base.data.d)
    points = []
    for n in batch_sizes:
        cfg = replace(base, batch_size=n, data=replace(base.data, rho=rho))
        records = run_seeds(seed_sweep_configs(cfg, n_seeds))
        variances = [r.windowed_variance() for r in records if not r.diverged]
        if not variances:
            raise BenchConfigError(f"all runs diverged at N={n}")
        var = float(np.mean(variances))
        points.append(SweepPoint(batch_size=n, variance=var, variance_times_n=var * n))
    return points


@dataclass
class ComparisonResult:
    permutation: StaircaseResult
    derangement: StaircaseResult
    log_n: float
    permutation_final: float
    derangement_final: float
    permutation_below_bound: bool


def permutation_vs_derangement(config: StaircaseConfig, slack: float = 0.3) -> ComparisonResult:
    """Same seed, two arms: naive permutation vs shift derangement.

    The permutation arm's final-step windowed estimate should sit below
    log(N) + slack; the derangement arm is not subject to that cap.
    """
    base = config.base
    perm = run_staircase(
        StaircaseConfig(
            base=replace(base, marginal_strategy=MarginalStrategy.NAIVE_PERMUTATION),
            steps=config.steps,
            iters_per_step=config.iters_per_step,
        )
    )
    der = run_staircase(
        StaircaseConfig(
            base=replace(base, marginal_strategy=MarginalStrategy.DERANGE_SHIFT),
            steps=config.steps,
            iters_per_step=config.iters_per_step,
        )
    )
    log_n = float(np.log(base.batch_size))
    window = min(base.eval_window, config.iters_per_step)
    perm_final = float(np.mean(perm.mi_estimate[-window:]))
    der_final = float(np.mean(der.mi_estimate[-window:]))
    return ComparisonResult(
        permutation=perm,
        derangement=der,
        log_n=log_n,
        permutation_final=perm_final,
        derangement_final=der_final,
        permutation_below_bound=perm_final < log_n + slack,
    )


@dataclass
class TimingRow:
    estimator: str
    arch: str
    d: int
    batch_size: int
    seconds: float


def timing_harness(
    combos: list[tuple[EstimatorKind, ArchitectureKind | None]],
    d: int,
    batch_size: int,
    steps: tuple[float, ...] = DEFAULT_STEPS,
    iters_per_step: int = 10,
    hidden_dims: tuple[int, ...] = (256, 256),
    seed: int = 0,
) -> list[TimingRow]:
    """Wall-clock seconds per combo to complete the staircase protocol."""
    rows = []
    for kind, arch in combos:
        base = TrainConfig(
            estimator=kind,
            data=DataConfig(d=d, rho=0.5, seed=seed),
            arch=arch,
            batch_size=batch_size,
            iterations=max(1, iters_per_step * len(steps)),
            eval_window=1,
            hidden_dims=hidden_dims,
            seed=seed,
        )
        start = time.perf_counter()
        if iters_per_step > 0:
            run_staircase(
                StaircaseConfig(base=base, steps=steps, iters_per_step=iters_per_step)
            )
        elapsed = time.perf_counter() - start
        rows.append(
            TimingRow(
                estimator=kind.label,
                arch=(arch.value if arch is not None else base.resolved_arch.value),
                d=d,
                batch_size=batch_size,
                seconds=elapsed,
            )
        )
    return rows
