"""Synthetic data generation and marginal-pair construction.

Joint samples follow y = rho * x + sqrt(1 - rho^2) * n with x, n standard
normal (optionally cubed element-wise).  Marginal pairs are built from a
joint batch by deranging, permuting, or taking all off-diagonal pairs.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

GENERATOR_NAME = "numpy-pcg64"

# Quadratic blow-up guard for the all-pairs strategy.
ALL_PAIRS_MAX_N = 2048


class SamplingError(ValueError):
    """Invalid sampling configuration or argument."""


class ResourceError(RuntimeError):
    """Request would exceed the configured resource guard."""


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Seeded PCG64 generator; distinct streams never collide."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(stream,)))


@dataclass(frozen=True)
class DataConfig:
    d: int
    rho: float
    cubic: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise SamplingError(f"d must be >= 1, got {self.d}")
        if not (0.0 <= self.rho < 1.0):
            raise SamplingError(f"rho must be in [0, 1), got {self.rho}")


@dataclass
class Batch:
    """N joint sample pairs; row i of xs pairs with row i of ys."""

    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        if self.xs.shape != self.ys.shape:
            raise SamplingError(
                f"xs shape {self.xs.shape} != ys shape {self.ys.shape}"
            )

    @property
    def n(self) -> int:
        return self.xs.shape[0]

    @property
    def d(self) -> int:
        return self.xs.shape[1]


class MarginalStrategy(enum.Enum):
    DERANGE_RANDOM = "derange-random"
    DERANGE_SHIFT = "derange-shift"
    NAIVE_PERMUTATION = "permutation"
    ALL_PAIRS = "all-pairs"


def sample_joint(config: DataConfig, n: int, rng: np.random.Generator) -> Batch:
    if n < 2:
        raise SamplingError(f"batch size must be >= 2, got {n}")
    xs = rng.standard_normal((n, config.d))
    noise = rng.standard_normal((n, config.d))
    ys = config.rho * xs + math.sqrt(1.0 - config.rho**2) * noise
    if config.cubic:
        ys = ys**3
    return Batch(xs=xs, ys=ys)


def rho_for_target_mi(target_mi: float, d: int) -> float:
    """Correlation giving a chosen Gaussian mutual information (in nats)."""
    if target_mi < 0.0:
        raise SamplingError(f"target MI must be >= 0, got {target_mi}")
    return math.sqrt(1.0 - math.exp(-2.0 * target_mi / d))


def derange_shift(n: int) -> np.ndarray:
    """Cyclic shift i -> (i+1) mod n; the cheapest fixed-point-free map."""
    if n < 2:
        raise SamplingError("a derangement needs at least 2 elements")
    return (np.arange(n) + 1) % n


def derange_random(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random derangement via rejection sampling.

    Expected number of attempts converges to e as n grows; no retry cap.
    """
    if n < 2:
        raise SamplingError("a derangement needs at least 2 elements")
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return perm


def permute_random(n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise SamplingError(f"n must be >= 1, got {n}")
    return rng.permutation(n)


def count_fixed_points(index_map: np.ndarray) -> int:
    index_map = np.asarray(index_map)
    return int(np.sum(index_map == np.arange(index_map.shape[0])))


def assemble_marginal_pairs(
    batch: Batch,
    strategy: MarginalStrategy,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Pairs (x, y) acting as product-of-marginals samples.

    Index-map strategies return N pairs (x_i, y_map(i)); ALL_PAIRS returns
    the N*(N-1) off-diagonal combinations.
    """
    n = batch.n
    if n < 2:
        raise SamplingError("marginal pairing needs at least 2 rows")
    if strategy is MarginalStrategy.ALL_PAIRS:
        if n > ALL_PAIRS_MAX_N:
            raise ResourceError(
                f"all-pairs with N={n} exceeds the guard of {ALL_PAIRS_MAX_N}"
            )
        i_idx = np.repeat(np.arange(n), n)
        j_idx = np.tile(np.arange(n), n)
        off = i_idx != j_idx
        return batch.xs[i_idx[off]], batch.ys[j_idx[off]]
    if strategy is MarginalStrategy.DERANGE_SHIFT:
        index_map = derange_shift(n)
    elif strategy is MarginalStrategy.DERANGE_RANDOM:
        if rng is None:
            raise SamplingError("derange-random needs an rng")
        index_map = derange_random(n, rng)
    elif strategy is MarginalStrategy.NAIVE_PERMUTATION:
        if rng is None:
            raise SamplingError("permutation needs an rng")
        index_map = permute_random(n, rng)
    else:
        raise SamplingError(f"unknown strategy {strategy!r}")
    return batch.xs, batch.ys[index_map]
