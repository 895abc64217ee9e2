"""Minimal dense neural-network engine on numpy.

Provides an MLP with ReLU hidden layers, manual backprop, an Adam
optimizer, and a finite-difference gradient checker.  Everything is
float64 and fully deterministic given a seed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """A matrix argument has the wrong shape."""


class ConfigError(ValueError):
    """An invalid configuration value."""


class NumericError(FloatingPointError):
    """A non-finite value appeared where a finite one is required."""


class UsageError(RuntimeError):
    """API misuse, e.g. a backward call with a foreign cache."""


# Guards applied to output activations before logs / reciprocals are taken
# downstream: discriminator outputs feed log(D) and 1/D.
SOFTPLUS_FLOOR = 1e-6
SIGMOID_EPS = 1e-6

ADAM_EPSILON = 1e-8


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Branch on sign so the exponential never overflows.
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class Activation(enum.Enum):
    IDENTITY = "identity"
    RELU = "relu"
    SOFTPLUS = "softplus"
    SIGMOID = "sigmoid"


def apply_activation(act: Activation, z: np.ndarray) -> np.ndarray:
    if act is Activation.IDENTITY:
        return z
    if act is Activation.RELU:
        return np.maximum(z, 0.0)
    if act is Activation.SOFTPLUS:
        return np.maximum(np.logaddexp(0.0, z), SOFTPLUS_FLOOR)
    if act is Activation.SIGMOID:
        return np.clip(_sigmoid(z), SIGMOID_EPS, 1.0 - SIGMOID_EPS)
    raise ConfigError(f"unknown activation {act!r}")


def activation_prime(act: Activation, z: np.ndarray) -> np.ndarray:
    """Derivative of the activation at pre-activation z.

    ReLU subgradient at 0 is defined as 0.  The output clamps are ignored
    for the derivative (they only guard value computations).
    """
    if act is Activation.IDENTITY:
        return np.ones_like(z)
    if act is Activation.RELU:
        return (z > 0.0).astype(np.float64)
    if act is Activation.SOFTPLUS:
        return _sigmoid(z)
    if act is Activation.SIGMOID:
        s = _sigmoid(z)
        return s * (1.0 - s)
    raise ConfigError(f"unknown activation {act!r}")


def check_matrix(a: np.ndarray, cols: int | None = None, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    if cols is not None and a.shape[1] != cols:
        raise ShapeError(f"{name} must have {cols} columns, got {a.shape[1]}")
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{name} contains non-finite entries")
    return a


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int = 1
    output_activation: Activation = Activation.IDENTITY
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if not self.hidden_dims:
            raise ConfigError("hidden_dims must be non-empty")
        if any(d < 1 for d in dims):
            raise ConfigError(f"all layer dims must be >= 1, got {dims}")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)


@dataclass
class _Cache:
    owner: "Mlp"
    layer_inputs: list[np.ndarray]
    zs: list[np.ndarray]


class Mlp:
    """Fully-connected net: ReLU hidden layers, configurable output activation.

    Weights start uniform on [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases at
    zero, drawn from a PCG64 generator seeded with ``config.seed``.
    """

    def __init__(self, config: MlpConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        dims = config.layer_dims
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, inputs: np.ndarray) -> tuple[np.ndarray, _Cache]:
        x = check_matrix(inputs, cols=self.config.input_dim, name="inputs")
        layer_inputs = []
        zs = []
        h = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            layer_inputs.append(h)
            z = h @ w + b
            zs.append(z)
            if i < self.n_layers - 1:
                h = apply_activation(Activation.RELU, z)
            else:
                h = apply_activation(self.config.output_activation, z)
        if not np.all(np.isfinite(h)):
            raise NumericError("forward pass produced non-finite outputs")
        return h, _Cache(owner=self, layer_inputs=layer_inputs, zs=zs)

    def backward(self, cache: _Cache, output_grad: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Gradients of sum(output_grad * outputs) w.r.t. each (W, b)."""
        if cache.owner is not self:
            raise UsageError("cache does not belong to this network")
        g = np.asarray(output_grad, dtype=np.float64)
        if g.shape != cache.zs[-1].shape:
            raise ShapeError(
                f"output_grad shape {g.shape} != output shape {cache.zs[-1].shape}"
            )
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * self.n_layers
        g = g * activation_prime(self.config.output_activation, cache.zs[-1])
        for i in range(self.n_layers - 1, -1, -1):
            inp = cache.layer_inputs[i]
            grads[i] = (inp.T @ g, g.sum(axis=0))
            if i > 0:
                g = (g @ self.weights[i].T) * activation_prime(
                    Activation.RELU, cache.zs[i - 1]
                )
        for dw, db in grads:
            if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
                raise NumericError("backward pass produced non-finite gradients")
        return grads


def forward_chunked(mlp: Mlp, inputs: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Forward pass without keeping activation caches, in bounded memory."""
    x = check_matrix(inputs, cols=mlp.config.input_dim, name="inputs")
    if x.shape[0] <= chunk:
        out, _ = mlp.forward(x)
        return out
    parts = []
    for start in range(0, x.shape[0], chunk):
        out, _ = mlp.forward(x[start : start + chunk])
        parts.append(out)
    return np.concatenate(parts, axis=0)


def backward_chunked(
    mlp: Mlp, inputs: np.ndarray, output_grad: np.ndarray, chunk: int = 4096
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Parameter gradients over a large input block, recomputing forwards
    chunk by chunk so memory stays bounded."""
    x = check_matrix(inputs, cols=mlp.config.input_dim, name="inputs")
    total: list[tuple[np.ndarray, np.ndarray]] | None = None
    for start in range(0, x.shape[0], chunk):
        _, cache = mlp.forward(x[start : start + chunk])
        part = mlp.backward(cache, output_grad[start : start + chunk])
        if total is None:
            total = part
        else:
            total = [(tw + pw, tb + pb) for (tw, tb), (pw, pb) in zip(total, part)]
    assert total is not None
    return total


def accumulate_grads(
    a: list[tuple[np.ndarray, np.ndarray]], b: list[tuple[np.ndarray, np.ndarray]]
) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(aw + bw, ab + bb) for (aw, ab), (bw, bb) in zip(a, b)]


def scale_grads(
    grads: list[tuple[np.ndarray, np.ndarray]], factor: float
) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(factor * dw, factor * db) for dw, db in grads]


@dataclass
class AdamState:
    first_moments: list[np.ndarray]
    second_moments: list[np.ndarray]
    step_count: int = 0
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = ADAM_EPSILON

    @classmethod
    def for_mlp(cls, mlp: Mlp, lr: float = 5e-4, beta1: float = 0.9, beta2: float = 0.999) -> "AdamState":
        zeros = [np.zeros_like(p) for p in mlp.parameters()]
        zeros2 = [np.zeros_like(p) for p in mlp.parameters()]
        return cls(first_moments=zeros, second_moments=zeros2, lr=lr, beta1=beta1, beta2=beta2)


def adam_step(
    mlp: Mlp, grads: list[tuple[np.ndarray, np.ndarray]], state: AdamState
) -> tuple[Mlp, AdamState]:
    """One bias-corrected Adam descent step, in place.

    ``grads`` are descent gradients (the loss decreases along -grad); a
    caller maximizing an objective negates before calling.
    """
    flat = []
    for dw, db in grads:
        flat.append(dw)
        flat.append(db)
    params = mlp.parameters()
    if len(flat) != len(params):
        raise ShapeError("gradient structure does not match parameters")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for p, g, m, v in zip(params, flat, state.first_moments, state.second_moments):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return mlp, state


def grad_check(mlp: Mlp, loss_fn, inputs: np.ndarray, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(outputs) -> (value, d value / d outputs)``.  Relative error is
    |analytic - fd| / (|analytic| + |fd| + 1e-12), maximized over all
    parameters.
    """
    if not (0.0 < h <= 1e-2):
        raise ConfigError(f"h must be in (0, 1e-2], got {h}")
    out, cache = mlp.forward(inputs)
    value, out_grad = loss_fn(out)
    if not np.isfinite(value):
        raise NumericError("loss is non-finite")
    analytic = mlp.backward(cache, out_grad)
    flat_analytic = []
    for dw, db in analytic:
        flat_analytic.append(dw)
        flat_analytic.append(db)

    max_err = 0.0
    for p, g in zip(mlp.parameters(), flat_analytic):
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            plus, _ = loss_fn(mlp.forward(inputs)[0])
            p[idx] = orig - h
            minus, _ = loss_fn(mlp.forward(inputs)[0])
            p[idx] = orig
            if not (np.isfinite(plus) and np.isfinite(minus)):
                raise NumericError("loss is non-finite during finite differencing")
            fd = (plus - minus) / (2.0 * h)
            err = abs(g[idx] - fd) / (abs(g[idx]) + abs(fd) + 1e-12)
            max_err = max(max_err, err)
    return max_err
