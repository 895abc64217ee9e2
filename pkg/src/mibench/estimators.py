"""Training loops and MI readouts for the discriminative estimators.

Families: the discriminative ratio estimators driven by an f-divergence
value function ("fdime" with KL/GAN/HD), the variational lower-bound
estimators MINE, NWJ, and SMILE, the contrastive CPC estimator, and a
simplified small-dimension NJEE baseline.

Architectures: "joint" (concatenated input, all off-diagonal marginal
pairs), "separable" (two embedding towers scored by inner product), and
"deranged" (concatenated input, marginal pairs from a derangement or
permutation of y within the batch).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .divergences import (
    DivergenceKind,
    contrib_grads,
    output_activation_for,
    ratio_readout,
    value_terms,
)
from .nn import Activation, AdamState, Mlp, MlpConfig, adam_step
from .sampling import (
    Batch,
    DataConfig,
    MarginalStrategy,
    ResourceError,
    assemble_marginal_pairs,
    make_rng,
    sample_joint,
)

NJEE_MAX_D = 10
CPC_JOINT_MAX_N = 512


class EstimatorConfigError(ValueError):
    """Invalid estimator configuration."""


class TrainingDiverged(RuntimeError):
    """The training objective or estimate became non-finite."""

    def __init__(self, iteration: int):
        super().__init__(f"training diverged at iteration {iteration}")
        self.iteration = iteration


class ArchitectureKind(enum.Enum):
    JOINT = "joint"
    SEPARABLE = "separable"
    DERANGED = "deranged"


@dataclass(frozen=True)
class EstimatorKind:
    family: str
    divergence: DivergenceKind | None = None
    tau: float | None = None  # None means no clipping (SMILE only)
    ema_rate: float = 0.99  # MINE only

    def __post_init__(self):
        if self.family not in {"fdime", "mine", "nwj", "smile", "cpc", "njee"}:
            raise EstimatorConfigError(f"unknown estimator family {self.family!r}")
        if self.family == "fdime" and self.divergence is None:
            raise EstimatorConfigError("fdime requires a divergence kind")
        if self.tau is not None and self.tau <= 0.0:
            raise EstimatorConfigError(f"tau must be > 0, got {self.tau}")
        if not (0.0 < self.ema_rate < 1.0):
            raise EstimatorConfigError(f"ema_rate must be in (0,1), got {self.ema_rate}")

    @property
    def label(self) -> str:
        if self.family == "fdime":
            return f"{self.divergence.value}-dime"
        return self.family


def fdime(divergence: DivergenceKind) -> EstimatorKind:
    return EstimatorKind(family="fdime", divergence=divergence)


def mine(ema_rate: float = 0.99) -> EstimatorKind:
    return EstimatorKind(family="mine", ema_rate=ema_rate)


def nwj() -> EstimatorKind:
    return EstimatorKind(family="nwj")


def smile(tau: float | None = 1.0) -> EstimatorKind:
    return EstimatorKind(family="smile", tau=tau)


def cpc() -> EstimatorKind:
    return EstimatorKind(family="cpc")


def njee() -> EstimatorKind:
    return EstimatorKind(family="njee")


def default_architecture(kind: EstimatorKind) -> ArchitectureKind:
    # CPC needs the full cross-pair score table; NJEE ignores the field.
    if kind.family == "cpc":
        return ArchitectureKind.SEPARABLE
    return ArchitectureKind.DERANGED


@dataclass(frozen=True)
class TrainConfig:
    estimator: EstimatorKind
    data: DataConfig
    arch: ArchitectureKind | None = None
    batch_size: int = 64
    iterations: int = 4000
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    marginal_strategy: MarginalStrategy = MarginalStrategy.DERANGE_SHIFT
    eval_window: int = 500
    seed: int = 0
    hidden_dims: tuple[int, ...] = (256, 256)
    embed_dim: int = 32

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        if self.batch_size < 2:
            raise EstimatorConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.iterations < 1:
            raise EstimatorConfigError("iterations must be >= 1")
        if not (1 <= self.eval_window <= self.iterations):
            raise EstimatorConfigError("eval_window must be in [1, iterations]")
        if self.embed_dim < 1:
            raise EstimatorConfigError("embed_dim must be >= 1")
        if self.estimator.family == "cpc" and self.arch is ArchitectureKind.DERANGED:
            raise EstimatorConfigError("cpc needs the joint or separable architecture")
        if self.estimator.family == "njee" and self.data.d > NJEE_MAX_D:
            raise ResourceError(
                f"njee baseline is limited to d <= {NJEE_MAX_D}, got d={self.data.d}"
            )

    @property
    def resolved_arch(self) -> ArchitectureKind:
        return self.arch if self.arch is not None else default_architecture(self.estimator)


@dataclass
class RunRecord:
    """Per-iteration objective and MI-estimate series for one run."""

    config: TrainConfig
    objective: np.ndarray
    mi_estimate: np.ndarray
    diverged: bool = False
    diverged_at: int | None = None

    def windowed_mean(self, window: int | None = None) -> float:
        return float(np.mean(self._window(window)))

    def windowed_variance(self, window: int | None = None) -> float:
        return float(np.var(self._window(window)))

    def _window(self, window: int | None) -> np.ndarray:
        w = window if window is not None else self.config.eval_window
        if w < 1 or w > len(self.mi_estimate):
            raise EstimatorConfigError(f"window {w} outside series of length {len(self.mi_estimate)}")
        return self.mi_estimate[-w:]


def concat_pairs(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    return np.concatenate([xs, ys], axis=1)


def discriminator_inputs(
    arch: ArchitectureKind,
    batch: Batch,
    marg_xs: np.ndarray,
    marg_ys: np.ndarray,
):
    """Network input matrices for an architecture.

    Joint/deranged: (joint N x 2d, marginal P x 2d) concatenations.
    Separable: the two N x d streams; scores come from embedding inner
    products.
    """
    if marg_xs.shape[1] != batch.d or marg_ys.shape[1] != batch.d:
        raise nn.ShapeError("marginal pair dimension does not match the batch")
    if arch in (ArchitectureKind.JOINT, ArchitectureKind.DERANGED):
        return concat_pairs(batch.xs, batch.ys), concat_pairs(marg_xs, marg_ys)
    if arch is ArchitectureKind.SEPARABLE:
        return batch.xs, batch.ys
    raise EstimatorConfigError(f"unknown architecture {arch!r}")


def _child_seed(seed: int, idx: int) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(idx,))
    return int(ss.generate_state(1)[0])


def _logmeanexp(values: np.ndarray) -> float:
    m = float(np.max(values))
    return m + math.log(float(np.mean(np.exp(values - m))))


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Discriminator backends: map (joint pairs, marginal pairs) to scalar scores
# and push per-sample score gradients back into the parameters.
# ---------------------------------------------------------------------------


class _ConcatBackend:
    """Single network on concatenated (x, y) rows."""

    def __init__(self, config: TrainConfig, output_activation: Activation):
        mlp_cfg = MlpConfig(
            input_dim=2 * config.data.d,
            hidden_dims=config.hidden_dims,
            output_dim=1,
            output_activation=output_activation,
            seed=_child_seed(config.seed, 10),
        )
        self.net = Mlp(mlp_cfg)
        self.adam = AdamState.for_mlp(self.net, lr=config.lr, beta1=config.beta1, beta2=config.beta2)

    def score(self, joint_in: np.ndarray, marg_in: np.ndarray):
        vj, cache_j = self.net.forward(joint_in)
        vm = nn.forward_chunked(self.net, marg_in)
        ctx = (cache_j, marg_in)
        return vj[:, 0], vm[:, 0], ctx

    def ascend(self, ctx, grad_joint: np.ndarray, grad_marg: np.ndarray) -> None:
        cache_j, marg_in = ctx
        grads = self.net.backward(cache_j, grad_joint[:, None])
        grads = nn.accumulate_grads(
            grads, nn.backward_chunked(self.net, marg_in, grad_marg[:, None])
        )
        adam_step(self.net, nn.scale_grads(grads, -1.0), self.adam)


class _SeparableBackend:
    """Two embedding towers; score(x_i, y_j) = <f(x_i), g(y_j)> mapped
    through the output activation.  The marginal term always uses the full
    off-diagonal score table."""

    def __init__(self, config: TrainConfig, output_activation: Activation):
        d = config.data.d
        self.activation = output_activation
        self.net_x = Mlp(
            MlpConfig(d, config.hidden_dims, config.embed_dim, Activation.IDENTITY,
                      seed=_child_seed(config.seed, 11))
        )
        self.net_y = Mlp(
            MlpConfig(d, config.hidden_dims, config.embed_dim, Activation.IDENTITY,
                      seed=_child_seed(config.seed, 12))
        )
        self.adam_x = AdamState.for_mlp(self.net_x, lr=config.lr, beta1=config.beta1, beta2=config.beta2)
        self.adam_y = AdamState.for_mlp(self.net_y, lr=config.lr, beta1=config.beta1, beta2=config.beta2)

    def score_table(self, xs: np.ndarray, ys: np.ndarray):
        u, cache_x = self.net_x.forward(xs)
        v, cache_y = self.net_y.forward(ys)
        raw = u @ v.T
        table = nn.apply_activation(self.activation, raw)
        ctx = (u, v, cache_x, cache_y, raw)
        return table, ctx

    def score(self, xs: np.ndarray, ys: np.ndarray):
        table, ctx = self.score_table(xs, ys)
        n = table.shape[0]
        off = ~np.eye(n, dtype=bool)
        return np.diag(table).copy(), table[off], ctx

    def ascend_table(self, ctx, grad_table: np.ndarray) -> None:
        u, v, cache_x, cache_y, raw = ctx
        g = grad_table * nn.activation_prime(self.activation, raw)
        grads_x = self.net_x.backward(cache_x, g @ v)
        grads_y = self.net_y.backward(cache_y, g.T @ u)
        adam_step(self.net_x, nn.scale_grads(grads_x, -1.0), self.adam_x)
        adam_step(self.net_y, nn.scale_grads(grads_y, -1.0), self.adam_y)

    def ascend(self, ctx, grad_joint: np.ndarray, grad_marg: np.ndarray) -> None:
        n = grad_joint.shape[0]
        g_table = np.zeros((n, n))
        g_table[~np.eye(n, dtype=bool)] = grad_marg
        g_table[np.diag_indices(n)] += grad_joint
        self.ascend_table(ctx, g_table)


# ---------------------------------------------------------------------------
# Trainers
# ---------------------------------------------------------------------------


class _PairTrainerBase:
    """Shared plumbing for estimators scoring joint vs marginal pairs."""

    output_activation = Activation.IDENTITY

    def __init__(self, config: TrainConfig):
        self.config = config
        self.arch = config.resolved_arch
        self.rng = make_rng(config.seed, stream=1)
        if self.arch is ArchitectureKind.SEPARABLE:
            self.backend = _SeparableBackend(config, self.output_activation)
        else:
            self.backend = _ConcatBackend(config, self.output_activation)
        self.iteration = 0

    def _scores(self, batch: Batch):
        if self.arch is ArchitectureKind.SEPARABLE:
            return self.backend.score(batch.xs, batch.ys)
        strategy = (
            MarginalStrategy.ALL_PAIRS
            if self.arch is ArchitectureKind.JOINT
            else self.config.marginal_strategy
        )
        mxs, mys = assemble_marginal_pairs(batch, strategy, self.rng)
        joint_in, marg_in = discriminator_inputs(self.arch, batch, mxs, mys)
        return self.backend.score(joint_in, marg_in)

    def step(self, batch: Batch) -> tuple[float, float]:
        vj, vm, ctx = self._scores(batch)
        objective, estimate, gj, gm = self._objective_and_grads(vj, vm)
        if not (math.isfinite(objective) and math.isfinite(estimate)):
            raise TrainingDiverged(self.iteration)
        self.backend.ascend(ctx, gj, gm)
        self.iteration += 1
        return objective, estimate

    def _objective_and_grads(self, vj, vm):
        raise NotImplementedError


class FDimeTrainer(_PairTrainerBase):
    """Value-function ascent in discriminator space, partition-free readout."""

    def __init__(self, config: TrainConfig):
        self.kind = config.estimator.divergence
        self.output_activation = output_activation_for(self.kind)
        super().__init__(config)

    def _objective_and_grads(self, dj, dm):
        terms = value_terms(self.kind, dj, dm)
        estimate = float(np.mean(np.log(ratio_readout(self.kind, dj))))
        gj, gm = contrib_grads(self.kind, dj, dm)
        return terms.total, estimate, gj / dj.size, gm / dm.size

    def estimate_from_joint(self, batch: Batch) -> float:
        """MI readout from joint samples only (no marginal pairs needed)."""
        if self.arch is ArchitectureKind.SEPARABLE:
            table, _ = self.backend.score_table(batch.xs, batch.ys)
            d = np.diag(table)
        else:
            d = nn.forward_chunked(self.backend.net, concat_pairs(batch.xs, batch.ys))[:, 0]
        return float(np.mean(np.log(ratio_readout(self.kind, d))))


class MineTrainer(_PairTrainerBase):
    """Donsker-Varadhan objective with an EMA-corrected partition gradient."""

    def __init__(self, config: TrainConfig):
        super().__init__(config)
        self.ema_rate = config.estimator.ema_rate
        self.log_ema: float | None = None

    def _objective_and_grads(self, tj, tm):
        lme = _logmeanexp(tm)
        value = float(np.mean(tj)) - lme
        if self.log_ema is None:
            self.log_ema = lme
        else:
            ema = self.ema_rate * math.exp(self.log_ema) + (1.0 - self.ema_rate) * math.exp(lme)
            self.log_ema = math.log(ema)
        gj = np.full(tj.shape, 1.0 / tj.size)
        gm = -np.exp(tm - self.log_ema) / tm.size
        return value, value, gj, gm


class NwjTrainer(_PairTrainerBase):
    def _objective_and_grads(self, tj, tm):
        partition = np.exp(tm - 1.0)
        value = float(np.mean(tj)) - float(np.mean(partition))
        gj = np.full(tj.shape, 1.0 / tj.size)
        gm = -partition / tm.size
        return value, value, gj, gm


class SmileTrainer(_PairTrainerBase):
    """Logistic (Jensen-Shannon) training; clipped partition readout."""

    def __init__(self, config: TrainConfig):
        super().__init__(config)
        self.tau = config.estimator.tau

    def _objective_and_grads(self, tj, tm):
        # Numerically stable log sigmoid: log s(t) = -log(1 + e^-t)
        js = -float(np.mean(np.logaddexp(0.0, -tj))) - float(np.mean(np.logaddexp(0.0, tm)))
        if self.tau is None:
            partition = _logmeanexp(tm)
        else:
            clipped = np.clip(np.exp(tm), math.exp(-self.tau), math.exp(self.tau))
            partition = math.log(float(np.mean(clipped)))
        estimate = float(np.mean(tj)) - partition
        gj = (1.0 / (1.0 + np.exp(tj))) / tj.size  # sigmoid(-t)
        gm = -(1.0 / (1.0 + np.exp(-tm))) / tm.size  # -sigmoid(t)
        return js, estimate, gj, gm

    def clipped_partition_values(self, tm: np.ndarray) -> np.ndarray:
        if self.tau is None:
            return np.exp(tm)
        return np.clip(np.exp(tm), math.exp(-self.tau), math.exp(self.tau))


class CpcTrainer:
    """Contrastive estimator over the full N x N score table; the estimate
    is capped at log N by construction."""

    def __init__(self, config: TrainConfig):
        self.config = config
        self.arch = config.resolved_arch
        if self.arch is ArchitectureKind.JOINT and config.batch_size > CPC_JOINT_MAX_N:
            raise ResourceError(
                f"cpc joint architecture guard: N <= {CPC_JOINT_MAX_N}"
            )
        if self.arch is ArchitectureKind.SEPARABLE:
            self.backend = _SeparableBackend(config, Activation.IDENTITY)
        else:
            self.backend = _ConcatBackend(config, Activation.IDENTITY)
        self.iteration = 0

    def _table(self, batch: Batch):
        if self.arch is ArchitectureKind.SEPARABLE:
            return self.backend.score_table(batch.xs, batch.ys)
        n = batch.n
        i_idx = np.repeat(np.arange(n), n)
        j_idx = np.tile(np.arange(n), n)
        rows = concat_pairs(batch.xs[i_idx], batch.ys[j_idx])
        out, cache = self.backend.net.forward(rows)
        return out[:, 0].reshape(n, n), cache

    @staticmethod
    def objective_from_table(table: np.ndarray) -> float:
        n = table.shape[0]
        shifted = table - table.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1)) + table.max(axis=1)
        return float(np.mean(np.diag(table) - lse + math.log(n)))

    def step(self, batch: Batch) -> tuple[float, float]:
        table, ctx = self._table(batch)
        n = table.shape[0]
        value = self.objective_from_table(table)
        if not math.isfinite(value):
            raise TrainingDiverged(self.iteration)
        grad = (np.eye(n) - _softmax_rows(table)) / n
        if self.arch is ArchitectureKind.SEPARABLE:
            self.backend.ascend_table(ctx, grad)
        else:
            grads = self.backend.net.backward(ctx, grad.reshape(-1, 1))
            adam_step(self.backend.net, nn.scale_grads(grads, -1.0), self.backend.adam)
        self.iteration += 1
        return value, value


class NjeeTrainer:
    """Simplified entropy-difference baseline for small d.

    Trains 2d-1 classifiers with cross-entropy on per-batch quantile-binned
    coordinates of x: d-1 nets predict x_m from x_(<m), d nets predict x_m
    from (y, x_(<m)).  The MI estimate is the empirical entropy of the
    first coordinate's labels plus the difference of the two CE sums.
    """

    def __init__(self, config: TrainConfig):
        if config.data.d > NJEE_MAX_D:
            raise ResourceError(f"njee baseline is limited to d <= {NJEE_MAX_D}")
        self.config = config
        d = config.data.d
        self.n_classes = config.batch_size - 1
        if self.n_classes < 2:
            raise EstimatorConfigError("njee needs batch_size >= 3")
        self.nets_x: list[Mlp] = []
        self.adams_x: list[AdamState] = []
        for m in range(1, d):  # predict column m from columns < m
            net = Mlp(MlpConfig(m, config.hidden_dims, self.n_classes,
                                Activation.IDENTITY, seed=_child_seed(config.seed, 20 + m)))
            self.nets_x.append(net)
            self.adams_x.append(AdamState.for_mlp(net, lr=config.lr, beta1=config.beta1, beta2=config.beta2))
        self.nets_xy: list[Mlp] = []
        self.adams_xy: list[AdamState] = []
        for m in range(d):  # predict column m from y and columns < m
            net = Mlp(MlpConfig(d + m, config.hidden_dims, self.n_classes,
                                Activation.IDENTITY, seed=_child_seed(config.seed, 50 + m)))
            self.nets_xy.append(net)
            self.adams_xy.append(AdamState.for_mlp(net, lr=config.lr, beta1=config.beta1, beta2=config.beta2))
        self.iteration = 0

    def quantize_column(self, values: np.ndarray) -> np.ndarray:
        """Empirical-quantile bin labels in [0, n_classes)."""
        qs = np.quantile(values, np.linspace(0.0, 1.0, self.n_classes + 1)[1:-1])
        return np.clip(np.searchsorted(qs, values, side="right"), 0, self.n_classes - 1)

    def _ce_and_update(self, net: Mlp, adam: AdamState, inputs: np.ndarray, labels: np.ndarray) -> float:
        logits, cache = net.forward(inputs)
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        n = inputs.shape[0]
        ce = -float(np.mean(log_probs[np.arange(n), labels]))
        grad = np.exp(log_probs)
        grad[np.arange(n), labels] -= 1.0
        grads = net.backward(cache, grad / n)
        adam_step(net, grads, adam)  # descent: cross-entropy is minimized
        return ce

    def step(self, batch: Batch) -> tuple[float, float]:
        d = batch.d
        labels = np.stack([self.quantize_column(batch.xs[:, m]) for m in range(d)], axis=1)
        counts = np.bincount(labels[:, 0], minlength=self.n_classes)
        probs = counts[counts > 0] / batch.n
        h1 = -float(np.sum(probs * np.log(probs)))
        ce_x = []
        for m, (net, adam) in enumerate(zip(self.nets_x, self.adams_x), start=1):
            ce_x.append(self._ce_and_update(net, adam, batch.xs[:, :m], labels[:, m]))
        ce_xy = []
        for m, (net, adam) in enumerate(zip(self.nets_xy, self.adams_xy)):
            inputs = np.concatenate([batch.ys, batch.xs[:, :m]], axis=1)
            ce_xy.append(self._ce_and_update(net, adam, inputs, labels[:, m]))
        estimate = h1 + sum(ce_x) - sum(ce_xy)
        objective = sum(ce_x) + sum(ce_xy)
        if not (math.isfinite(objective) and math.isfinite(estimate)):
            raise TrainingDiverged(self.iteration)
        self.iteration += 1
        return objective, estimate


_TRAINERS = {
    "fdime": FDimeTrainer,
    "mine": MineTrainer,
    "nwj": NwjTrainer,
    "smile": SmileTrainer,
    "cpc": CpcTrainer,
    "njee": NjeeTrainer,
}


def make_trainer(config: TrainConfig):
    return _TRAINERS[config.estimator.family](config)


def run_training(config: TrainConfig) -> RunRecord:
    """Sample -> step -> estimate loop; divergence is flagged, not silent."""
    trainer = make_trainer(config)
    data_rng = make_rng(config.seed, stream=0)
    objective = np.zeros(config.iterations)
    estimate = np.zeros(config.iterations)
    for it in range(config.iterations):
        batch = sample_joint(config.data, config.batch_size, data_rng)
        try:
            objective[it], estimate[it] = trainer.step(batch)
        except TrainingDiverged:
            return RunRecord(
                config=config,
                objective=objective[:it],
                mi_estimate=estimate[:it],
                diverged=True,
                diverged_at=it,
            )
    return RunRecord(config=config, objective=objective, mi_estimate=estimate)
