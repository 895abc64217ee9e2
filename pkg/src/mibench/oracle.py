"""Closed-form ground truth for the correlated-Gaussian setting.

True mutual information, the exact density ratio, the variance of the
Monte Carlo log-ratio estimator, the fixed-point optimum reached under a
naive permutation, and an empirical variance-bound diagnostic.

The cubic setting shares the same MI (the per-coordinate cube is
invertible), but the ratio oracle applies only to the linear setting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sampling import DataConfig, sample_joint


class OracleDomainError(ValueError):
    """Argument outside the oracle's domain."""


def true_mi_gaussian(d: int, rho: float) -> float:
    """-(d/2) * log(1 - rho^2), in nats."""
    if not (0.0 <= rho < 1.0):
        raise OracleDomainError(f"rho must be in [0, 1), got {rho}")
    return -0.5 * d * math.log(1.0 - rho**2)


def oracle_log_density_ratio(xs: np.ndarray, ys: np.ndarray, rho: float) -> np.ndarray:
    """Per-row log ratio log p(y|x) - log p(y) for the linear Gaussian pair."""
    if not (0.0 <= rho < 1.0):
        raise OracleDomainError(f"rho must be in [0, 1), got {rho}")
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise OracleDomainError("inputs must be finite")
    var = 1.0 - rho**2
    per_dim = -0.5 * math.log(var) - (ys - rho * xs) ** 2 / (2.0 * var) + ys**2 / 2.0
    return per_dim.sum(axis=1)


def oracle_density_ratio(xs: np.ndarray, ys: np.ndarray, rho: float) -> np.ndarray:
    return np.exp(oracle_log_density_ratio(xs, ys, rho))


def mc_log_ratio_variance(mi: float, m: int) -> float:
    """Variance of the mean log-ratio over M scalar-Gaussian joint samples.

    Equals (1 - e^(-2*MI)) / M.  For a d-dimensional diagonal Gaussian with
    per-coordinate correlation rho the variance is d * rho^2 / M instead.
    """
    if mi < 0.0:
        raise OracleDomainError(f"mi must be >= 0, got {mi}")
    if m < 1:
        raise OracleDomainError(f"m must be >= 1, got {m}")
    return (1.0 - math.exp(-2.0 * mi)) / m


def permutation_fixed_point_optimum(r, n: int, k: int):
    """Discriminator optimum N*R / (K*R + N - K) under a permutation with K
    fixed points; reduces to R at K = 0."""
    r = np.asarray(r, dtype=np.float64)
    if np.any(r < 0.0):
        raise OracleDomainError("density ratio must be >= 0")
    if n < 1 or k < 0 or k > n:
        raise OracleDomainError(f"need 0 <= K <= N with N >= 1, got N={n}, K={k}")
    out = n * r / (k * r + n - k)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class VarianceDiagnostic:
    """Empirical upper-bound diagnostic on the MC log-ratio variance.

    ``sup_ratio`` is the max ratio seen in the sample, a lower bound on the
    true (here infinite) supremum, so the value is a diagnostic, not a
    certified bound.  ``vacuous`` flags the independent case where the bound
    degenerates to a non-positive number.
    """

    value: float
    hellinger_sq: float
    sup_ratio: float
    vacuous: bool


def variance_bound_diagnostic(
    d: int, rho: float, m: int, sample_count: int, rng: np.random.Generator
) -> VarianceDiagnostic:
    """Monte Carlo estimate of (4 * H^2 * sup R - I^2) / M."""
    if sample_count < 1000:
        raise OracleDomainError("sample_count must be >= 1000")
    mi = true_mi_gaussian(d, rho)
    config = DataConfig(d=d, rho=rho)
    joint = sample_joint(config, sample_count, rng)
    sup_ratio = float(np.max(oracle_density_ratio(joint.xs, joint.ys, rho)))
    # H^2 = 2 - 2 E_q[sqrt(R)] with q the product of marginals: sample x and
    # y independently (shuffle breaks the pairing in distribution).
    marg = sample_joint(config, sample_count, rng)
    hell = 2.0 - 2.0 * float(
        np.mean(np.exp(0.5 * oracle_log_density_ratio(joint.xs, marg.ys, rho)))
    )
    hell = max(hell, 0.0)
    value = (4.0 * hell * sup_ratio - mi**2) / m
    return VarianceDiagnostic(
        value=value, hellinger_sq=hell, sup_ratio=sup_ratio, vacuous=value <= 0.0
    )


def oracle_mc_runs(
    d: int, rho: float, m: int, trials: int, rng: np.random.Generator
) -> tuple[float, float]:
    """Across-trial (mean, variance) of the mean log oracle ratio over M
    joint samples per trial."""
    if trials < 30:
        raise OracleDomainError(f"trials must be >= 30, got {trials}")
    config = DataConfig(d=d, rho=rho)
    estimates = np.empty(trials)
    for t in range(trials):
        batch = sample_joint(config, m, rng)
        estimates[t] = float(np.mean(oracle_log_density_ratio(batch.xs, batch.ys, rho)))
    return float(np.mean(estimates)), float(np.var(estimates))
