"""Discriminative mutual-information estimation benchmark library.

Neural MI estimators (f-divergence discriminators, variational lower
bounds, contrastive and entropy-difference baselines) on synthetic
correlated-Gaussian data, with closed-form oracles and an experiment
harness for bias/variance studies.
"""

from .divergences import DivergenceKind
from .estimators import (
    ArchitectureKind,
    EstimatorKind,
    RunRecord,
    TrainConfig,
    cpc,
    fdime,
    make_trainer,
    mine,
    njee,
    nwj,
    run_training,
    smile,
)
from .oracle import (
    mc_log_ratio_variance,
    oracle_density_ratio,
    oracle_log_density_ratio,
    true_mi_gaussian,
)
from .sampling import (
    Batch,
    DataConfig,
    MarginalStrategy,
    make_rng,
    rho_for_target_mi,
    sample_joint,
)

__all__ = [
    "ArchitectureKind",
    "Batch",
    "DataConfig",
    "DivergenceKind",
    "EstimatorKind",
    "MarginalStrategy",
    "RunRecord",
    "TrainConfig",
    "cpc",
    "fdime",
    "make_rng",
    "make_trainer",
    "mc_log_ratio_variance",
    "mine",
    "njee",
    "nwj",
    "oracle_density_ratio",
    "oracle_log_density_ratio",
    "rho_for_target_mi",
    "run_training",
    "sample_joint",
    "smile",
    "true_mi_gaussian",
]

__version__ = "0.1.0"
