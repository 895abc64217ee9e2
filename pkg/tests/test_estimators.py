"""Verification tests for the estimator trainers: configuration rules,
input assembly, objective/gradient math, readout contracts, and
short-training behavior."""

import math
from dataclasses import replace

import numpy as np
import pytest

from mibench import nn
from mibench.divergences import DivergenceKind, optimal_discriminator
from mibench.estimators import (
    ArchitectureKind,
    CPC_JOINT_MAX_N,
    CpcTrainer,
    EstimatorConfigError,
    EstimatorKind,
    FDimeTrainer,
    MineTrainer,
    NJEE_MAX_D,
    NjeeTrainer,
    NwjTrainer,
    SmileTrainer,
    TrainConfig,
    cpc,
    default_architecture,
    discriminator_inputs,
    fdime,
    make_trainer,
    mine,
    njee,
    nwj,
    run_training,
    smile,
)
from mibench.oracle import oracle_density_ratio, true_mi_gaussian
from mibench.sampling import (
    DataConfig,
    MarginalStrategy,
    ResourceError,
    make_rng,
    rho_for_target_mi,
    sample_joint,
)


def config(kind, d=2, rho=0.5, **kw):
    kw.setdefault("iterations", 10)
    kw.setdefault("eval_window", 5)
    kw.setdefault("hidden_dims", (16, 16))
    return TrainConfig(estimator=kind, data=DataConfig(d=d, rho=rho), **kw)


class TestEstimatorKind:
    def test_labels(self):
        assert fdime(DivergenceKind.GAN).label == "gan-dime"
        assert fdime(DivergenceKind.KL).label == "kl-dime"
        assert mine().label == "mine"

    def test_fdime_requires_divergence(self):
        with pytest.raises(EstimatorConfigError):
            EstimatorKind(family="fdime")

    def test_unknown_family_rejected(self):
        with pytest.raises(EstimatorConfigError):
            EstimatorKind(family="dv")

    def test_tau_validation(self):
        with pytest.raises(EstimatorConfigError):
            smile(tau=0.0)
        assert smile(tau=None).tau is None  # unclipped variant

    def test_ema_rate_validation(self):
        with pytest.raises(EstimatorConfigError):
            mine(ema_rate=1.0)


class TestTrainConfig:
    def test_defaults_follow_family(self):
        assert default_architecture(cpc()) is ArchitectureKind.SEPARABLE
        assert default_architecture(mine()) is ArchitectureKind.DERANGED
        assert default_architecture(fdime(DivergenceKind.KL)) is ArchitectureKind.DERANGED

    def test_cpc_rejects_deranged(self):
        with pytest.raises(EstimatorConfigError):
            config(cpc(), arch=ArchitectureKind.DERANGED)

    def test_njee_dimension_guard(self):
        with pytest.raises(ResourceError):
            config(njee(), d=NJEE_MAX_D + 1)

    def test_batch_size_floor(self):
        with pytest.raises(EstimatorConfigError):
            config(mine(), batch_size=1)

    def test_eval_window_bound(self):
        with pytest.raises(EstimatorConfigError):
            config(mine(), iterations=10, eval_window=11)


class TestDiscriminatorInputs:
    def test_joint_shapes(self):
        batch = sample_joint(DataConfig(d=2, rho=0.5), 3, make_rng(0))
        from mibench.sampling import assemble_marginal_pairs

        mxs, mys = assemble_marginal_pairs(batch, MarginalStrategy.ALL_PAIRS)
        joint_in, marg_in = discriminator_inputs(ArchitectureKind.JOINT, batch, mxs, mys)
        assert joint_in.shape == (3, 4)
        assert marg_in.shape == (6, 4)

    def test_deranged_marginal_row_count(self):
        batch = sample_joint(DataConfig(d=5, rho=0.5), 64, make_rng(0))
        from mibench.sampling import assemble_marginal_pairs

        mxs, mys = assemble_marginal_pairs(batch, MarginalStrategy.DERANGE_SHIFT)
        _, marg_in = discriminator_inputs(ArchitectureKind.DERANGED, batch, mxs, mys)
        assert marg_in.shape == (64, 10)

    def test_dimension_mismatch_rejected(self):
        batch = sample_joint(DataConfig(d=2, rho=0.5), 4, make_rng(0))
        with pytest.raises(nn.ShapeError):
            discriminator_inputs(
                ArchitectureKind.DERANGED, batch, np.zeros((4, 3)), np.zeros((4, 3))
            )


class TestFDime:
    def test_fresh_gan_net_starts_near_zero(self):
        # Logits ~0 -> D ~ 0.5 -> J = log(1/2) + log(1/2) + log 4 ~= 0.
        cfg = config(fdime(DivergenceKind.GAN), d=3)
        trainer = make_trainer(cfg)
        batch = sample_joint(cfg.data, cfg.batch_size, make_rng(0))
        objective, _ = trainer.step(batch)
        assert abs(objective) < 0.05

    @pytest.mark.parametrize(
        "div", [DivergenceKind.KL, DivergenceKind.GAN, DivergenceKind.HD]
    )
    def test_independent_data_converges_to_zero(self, div):
        cfg = config(fdime(div), d=1, rho=0.0, iterations=400, eval_window=100)
        record = run_training(cfg)
        assert not record.diverged
        assert abs(record.windowed_mean()) < 0.1

    def test_scalar_kl_training_approaches_mi(self):
        # d=1, rho=0.8: true MI = -log(0.36)/2 ~= 0.5108
        cfg = config(
            fdime(DivergenceKind.KL), d=1, rho=0.8,
            iterations=4000, eval_window=500, hidden_dims=(64, 64),
        )
        record = run_training(cfg)
        true = true_mi_gaussian(1, 0.8)
        assert abs(record.objective[-500:].mean() - true) < 0.1
        assert abs(record.windowed_mean() - true) < 0.1

    def test_readout_identity_with_oracle_values(self):
        # Feeding the exact density ratio as D (KL readout R = D) must give
        # the Monte Carlo mean of log R.
        cfg = config(fdime(DivergenceKind.KL), d=2)
        trainer = make_trainer(cfg)
        batch = sample_joint(cfg.data, 256, make_rng(1))
        ratios = oracle_density_ratio(batch.xs, batch.ys, cfg.data.rho)
        terms_estimate = float(np.mean(np.log(ratios)))
        gj, gm = np.zeros(256), np.zeros(256)
        objective, estimate, *_ = trainer._objective_and_grads(ratios, ratios)
        assert estimate == pytest.approx(terms_estimate, abs=1e-12)

    def test_estimate_from_joint_consumes_only_joint_pairs(self):
        cfg = config(fdime(DivergenceKind.GAN), d=2)
        trainer = make_trainer(cfg)
        batch = sample_joint(cfg.data, 64, make_rng(2))
        value = trainer.estimate_from_joint(batch)
        assert math.isfinite(value)

    @pytest.mark.parametrize(
        "div", [DivergenceKind.KL, DivergenceKind.GAN, DivergenceKind.HD]
    )
    def test_objective_at_analytic_optimum_matches_divergence(self, div):
        # With the optimal discriminator on both branches, J equals the MC
        # estimate of the f-divergence between joint and product marginals.
        cfg = config(fdime(div), d=1, rho=0.6)
        trainer = make_trainer(cfg)
        batch = sample_joint(cfg.data, 4096, make_rng(3))
        rj = oracle_density_ratio(batch.xs, batch.ys, 0.6)
        shifted = sample_joint(cfg.data, 4096, make_rng(4))
        rm = oracle_density_ratio(batch.xs, shifted.ys, 0.6)
        dj = optimal_discriminator(div, rj)
        dm = optimal_discriminator(div, rm)
        objective, _, _, _ = trainer._objective_and_grads(np.asarray(dj), np.asarray(dm))
        assert math.isfinite(objective)


class TestVariationalBounds:
    def test_mine_constant_scores_give_zero(self):
        cfg = config(mine())
        trainer = make_trainer(cfg)
        t = np.full(16, 3.7)
        _, estimate, _, _ = trainer._objective_and_grads(t, t)
        assert estimate == pytest.approx(0.0, abs=1e-12)

    def test_nwj_constant_one_gives_zero(self):
        cfg = config(nwj())
        trainer = make_trainer(cfg)
        t = np.ones(16)
        _, estimate, _, _ = trainer._objective_and_grads(t, t)
        assert estimate == pytest.approx(0.0, abs=1e-12)

    def test_mine_ema_initialises_to_first_partition(self):
        cfg = config(mine())
        trainer = make_trainer(cfg)
        tm = np.array([0.5, 1.5, -0.2, 0.8])
        trainer._objective_and_grads(np.zeros(4), tm)
        lme = np.log(np.mean(np.exp(tm)))
        assert trainer.log_ema == pytest.approx(lme, abs=1e-12)

    def test_smile_clip_contract(self):
        cfg = config(smile(tau=1.0))
        trainer = make_trainer(cfg)
        tm = np.array([-10.0, -1.0, 0.0, 1.0, 10.0])
        clipped = trainer.clipped_partition_values(tm)
        assert np.all(clipped >= math.exp(-1.0) - 1e-15)
        assert np.all(clipped <= math.exp(1.0) + 1e-15)

    def test_smile_unclipped_matches_mine_style_partition(self):
        cfg = config(smile(tau=None))
        trainer = make_trainer(cfg)
        tj = np.array([1.0, 2.0])
        tm = np.array([0.5, 1.5])
        _, estimate, _, _ = trainer._objective_and_grads(tj, tm)
        expected = tj.mean() - np.log(np.mean(np.exp(tm)))
        assert estimate == pytest.approx(expected, abs=1e-12)

    def test_smile_training_objective_is_js(self):
        cfg = config(smile(tau=1.0))
        trainer = make_trainer(cfg)
        tj = np.array([0.0, 0.0])
        tm = np.array([0.0, 0.0])
        objective, _, _, _ = trainer._objective_and_grads(tj, tm)
        # Balanced scores: J_JS without constants = 2*log(1/2)
        assert objective == pytest.approx(2 * math.log(0.5), abs=1e-12)

    @pytest.mark.parametrize("make", [mine, nwj, smile])
    def test_short_training_is_finite_and_positive_on_dependent_data(self, make):
        cfg = config(make(), d=2, rho=0.8, iterations=600, eval_window=100)
        record = run_training(cfg)
        assert not record.diverged
        assert record.windowed_mean() > 0.2


class TestCpc:
    def test_constant_table_gives_zero(self):
        table = np.full((8, 8), 2.5)
        assert CpcTrainer.objective_from_table(table) == pytest.approx(0.0, abs=1e-12)

    def test_estimate_never_exceeds_log_n(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(2, 40))
            table = rng.standard_normal((n, n)) * rng.uniform(0.1, 10)
            assert CpcTrainer.objective_from_table(table) <= math.log(n)

    def test_diagonal_dominant_table_approaches_log_n(self):
        n = 16
        table = np.eye(n) * 50.0
        assert CpcTrainer.objective_from_table(table) == pytest.approx(
            math.log(n), abs=1e-6
        )

    def test_joint_arch_batch_guard(self):
        with pytest.raises(ResourceError):
            make_trainer(
                config(cpc(), arch=ArchitectureKind.JOINT, batch_size=CPC_JOINT_MAX_N + 1)
            )
        # construction succeeds at the limit-respecting size
        make_trainer(config(cpc(), arch=ArchitectureKind.JOINT, batch_size=8))

    def test_training_respects_bound_and_learns(self):
        cfg = config(cpc(), d=2, rho=0.8, iterations=500, eval_window=100, batch_size=32)
        record = run_training(cfg)
        assert not record.diverged
        assert np.all(record.mi_estimate <= math.log(32) + 1e-12)
        assert record.windowed_mean() > 0.3


class TestNjee:
    def test_quantizer_labels_in_range(self):
        cfg = config(njee(), d=2, batch_size=16)
        trainer = make_trainer(cfg)
        values = np.random.default_rng(0).standard_normal(16)
        labels = trainer.quantize_column(values)
        assert labels.min() >= 0
        assert labels.max() < trainer.n_classes

    def test_network_count_is_2d_minus_1(self):
        cfg = config(njee(), d=4, batch_size=16)
        trainer = make_trainer(cfg)
        assert len(trainer.nets_x) + len(trainer.nets_xy) == 2 * 4 - 1

    def test_independent_data_estimate_near_zero(self):
        cfg = config(njee(), d=2, rho=0.0, iterations=300, eval_window=50, batch_size=32)
        record = run_training(cfg)
        assert not record.diverged
        assert abs(record.windowed_mean()) < 0.35

    def test_batch_size_floor(self):
        with pytest.raises(EstimatorConfigError):
            make_trainer(config(njee(), d=2, batch_size=2))


class TestRunTraining:
    def test_single_iteration_series_length(self):
        cfg = config(mine(), iterations=1, eval_window=1)
        record = run_training(cfg)
        assert len(record.objective) == 1
        assert len(record.mi_estimate) == 1

    def test_determinism(self):
        cfg = config(fdime(DivergenceKind.GAN), iterations=25, eval_window=5, seed=9)
        a = run_training(cfg)
        b = run_training(cfg)
        np.testing.assert_array_equal(a.objective, b.objective)
        np.testing.assert_array_equal(a.mi_estimate, b.mi_estimate)

    def test_seeds_change_trajectories(self):
        base = config(fdime(DivergenceKind.GAN), iterations=25, eval_window=5)
        a = run_training(base)
        b = run_training(replace(base, seed=1))
        assert not np.allclose(a.mi_estimate, b.mi_estimate)

    @pytest.mark.parametrize(
        "arch", [ArchitectureKind.JOINT, ArchitectureKind.SEPARABLE, ArchitectureKind.DERANGED]
    )
    def test_all_architectures_run(self, arch):
        cfg = config(fdime(DivergenceKind.GAN), arch=arch, iterations=5, eval_window=5,
                     batch_size=16)
        record = run_training(cfg)
        assert not record.diverged
        assert np.all(np.isfinite(record.mi_estimate))

    def test_permutation_strategy_saturates_below_log_n(self):
        # Quick, weak version of the fixed-point saturation check: with a
        # uniform permutation the readout cannot blow past log(N).
        cfg = config(
            fdime(DivergenceKind.KL), d=2, rho=0.95,
            iterations=800, eval_window=200, batch_size=16,
            marginal_strategy=MarginalStrategy.NAIVE_PERMUTATION,
        )
        record = run_training(cfg)
        assert record.windowed_mean() < math.log(16) + 0.3


class TestDerangementValueDominance:
    def test_permutation_value_shrinks_by_fixed_point_factor(self):
        # On a frozen discriminator, the naive-permutation objective mean
        # over resamplings stays below the derangement objective scaled by
        # (N - K_bar)/N with K_bar = 1 expected fixed points.
        div = DivergenceKind.KL
        n, d, rho = 64, 2, 0.9
        cfg = config(fdime(div), d=d, rho=rho, iterations=1500,
                     eval_window=200, batch_size=n)
        trainer = make_trainer(cfg)
        data_rng = make_rng(0, stream=0)
        for _ in range(1500):
            trainer.step(sample_joint(cfg.data, n, data_rng))
        # Freeze the net, score fresh batches under both pairings.
        from mibench.sampling import assemble_marginal_pairs
        from mibench.estimators import concat_pairs

        perm_rng = make_rng(123)
        j_der, j_perm = [], []
        for _ in range(300):
            batch = sample_joint(cfg.data, n, data_rng)
            dj = trainer.estimate_from_joint(batch)  # warm readout, unused
            vj = nn.forward_chunked(
                trainer.backend.net, concat_pairs(batch.xs, batch.ys)
            )[:, 0]
            for strategy, sink in [
                (MarginalStrategy.DERANGE_SHIFT, j_der),
                (MarginalStrategy.NAIVE_PERMUTATION, j_perm),
            ]:
                mxs, mys = assemble_marginal_pairs(batch, strategy, perm_rng)
                vm = nn.forward_chunked(trainer.backend.net, concat_pairs(mxs, mys))[:, 0]
                from mibench.divergences import value_terms

                sink.append(value_terms(div, vj, vm).total)
        mean_der, mean_perm = np.mean(j_der), np.mean(j_perm)
        tol = 3 * np.std(j_perm) / math.sqrt(len(j_perm))
        assert mean_perm <= ((n - 1) / n) * mean_der + tol
