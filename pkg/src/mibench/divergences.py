"""f-divergence machinery for discriminative ratio estimation.

Three divergences are supported: KL, the GAN divergence, and squared
Hellinger distance.  Each binds together a generator f, its Fenchel
conjugate, a discriminator value function expressed in D-space (after the
divergence-specific change of variable), and the readout that turns the
optimal discriminator output back into a density-ratio estimate.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .nn import Activation, SIGMOID_EPS, SOFTPLUS_FLOOR


class DomainError(ValueError):
    """Argument outside the divergence's domain."""


class DivergenceKind(enum.Enum):
    KL = "kl"
    GAN = "gan"
    HD = "hd"


LOG4 = math.log(4.0)


def _as_array(u) -> np.ndarray:
    return np.asarray(u, dtype=np.float64)


def generator_f(kind: DivergenceKind, u) -> np.ndarray | float:
    """Generator f(u) of the divergence; f(1) = 0 for every kind."""
    u = _as_array(u)
    if np.any(u <= 0.0):
        raise DomainError("generator argument must be positive")
    if kind is DivergenceKind.KL:
        out = u * np.log(u)
    elif kind is DivergenceKind.GAN:
        out = u * np.log(u) - (u + 1.0) * np.log(u + 1.0) + LOG4
    elif kind is DivergenceKind.HD:
        out = (np.sqrt(u) - 1.0) ** 2
    else:
        raise DomainError(f"unknown divergence {kind!r}")
    return out if out.ndim else float(out)


def generator_f_prime(kind: DivergenceKind, u) -> np.ndarray | float:
    u = _as_array(u)
    if np.any(u <= 0.0):
        raise DomainError("generator argument must be positive")
    if kind is DivergenceKind.KL:
        out = np.log(u) + 1.0
    elif kind is DivergenceKind.GAN:
        out = np.log(u) - np.log(u + 1.0)
    elif kind is DivergenceKind.HD:
        out = 1.0 - 1.0 / np.sqrt(u)
    else:
        raise DomainError(f"unknown divergence {kind!r}")
    return out if out.ndim else float(out)


def conjugate_fstar(kind: DivergenceKind, t) -> np.ndarray | float:
    """Fenchel conjugate f*(t) = sup_u {ut - f(u)}."""
    t = _as_array(t)
    if kind is DivergenceKind.KL:
        out = np.exp(t - 1.0)
    elif kind is DivergenceKind.GAN:
        if np.any(t >= 0.0):
            raise DomainError("GAN conjugate requires t < 0")
        out = -np.log(1.0 - np.exp(t)) - LOG4
    elif kind is DivergenceKind.HD:
        if np.any(t >= 1.0):
            raise DomainError("HD conjugate requires t < 1")
        out = t / (1.0 - t)
    else:
        raise DomainError(f"unknown divergence {kind!r}")
    return out if out.ndim else float(out)


def conjugate_fstar_prime(kind: DivergenceKind, t) -> np.ndarray | float:
    """(f*)'(t); satisfies the duality identity (f*)'(f'(u)) = u."""
    t = _as_array(t)
    if kind is DivergenceKind.KL:
        out = np.exp(t - 1.0)
    elif kind is DivergenceKind.GAN:
        if np.any(t >= 0.0):
            raise DomainError("GAN conjugate requires t < 0")
        e = np.exp(t)
        out = e / (1.0 - e)
    elif kind is DivergenceKind.HD:
        if np.any(t >= 1.0):
            raise DomainError("HD conjugate requires t < 1")
        out = 1.0 / (1.0 - t) ** 2
    else:
        raise DomainError(f"unknown divergence {kind!r}")
    return out if out.ndim else float(out)


def _check_domain(kind: DivergenceKind, d: np.ndarray, name: str) -> None:
    if kind is DivergenceKind.GAN:
        if np.any(d <= 0.0) or np.any(d >= 1.0):
            raise DomainError(f"{name} must lie in (0, 1) for the GAN divergence")
    else:
        if np.any(d <= 0.0):
            raise DomainError(f"{name} must be positive")


def _guard(kind: DivergenceKind, d: np.ndarray) -> np.ndarray:
    # Same clamps the network output activations use; protects explicit
    # discriminator values passed in from outside a network.
    if kind is DivergenceKind.GAN:
        return np.clip(d, SIGMOID_EPS, 1.0 - SIGMOID_EPS)
    return np.maximum(d, SOFTPLUS_FLOOR)


@dataclass(frozen=True)
class ValueFunctionTerms:
    """Mean joint term + mean marginal term + constant of a value function."""

    joint_term: float
    marginal_term: float
    constant: float

    @property
    def total(self) -> float:
        return self.joint_term + self.marginal_term + self.constant


def joint_and_marginal_contrib(
    kind: DivergenceKind, d_joint, d_marginal
) -> tuple[np.ndarray, np.ndarray, float]:
    """Per-sample value-function contributions and the additive constant.

    KL:  (log Dj, -Dm, +1)
    GAN: (log(1 - Dj), log Dm, +log 4)
    HD:  (-Dj, -1/Dm, +2)
    """
    dj = _as_array(d_joint)
    dm = _as_array(d_marginal)
    _check_domain(kind, dj, "D_joint")
    _check_domain(kind, dm, "D_marginal")
    dj = _guard(kind, dj)
    dm = _guard(kind, dm)
    if kind is DivergenceKind.KL:
        return np.log(dj), -dm, 1.0
    if kind is DivergenceKind.GAN:
        return np.log(1.0 - dj), np.log(dm), LOG4
    if kind is DivergenceKind.HD:
        return -dj, -1.0 / dm, 2.0
    raise DomainError(f"unknown divergence {kind!r}")


def value_terms(kind: DivergenceKind, d_joint, d_marginal) -> ValueFunctionTerms:
    cj, cm, const = joint_and_marginal_contrib(kind, d_joint, d_marginal)
    return ValueFunctionTerms(
        joint_term=float(np.mean(cj)), marginal_term=float(np.mean(cm)), constant=const
    )


def contrib_grads(
    kind: DivergenceKind, d_joint, d_marginal
) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of the per-sample contributions w.r.t. D."""
    dj = _guard(kind, _as_array(d_joint))
    dm = _guard(kind, _as_array(d_marginal))
    if kind is DivergenceKind.KL:
        return 1.0 / dj, -np.ones_like(dm)
    if kind is DivergenceKind.GAN:
        return -1.0 / (1.0 - dj), 1.0 / dm
    if kind is DivergenceKind.HD:
        return -np.ones_like(dj), 1.0 / dm**2
    raise DomainError(f"unknown divergence {kind!r}")


def ratio_readout(kind: DivergenceKind, d) -> np.ndarray | float:
    """Density-ratio estimate from a discriminator output."""
    d = _as_array(d)
    _check_domain(kind, d, "D")
    d = _guard(kind, d)
    if kind is DivergenceKind.KL:
        out = d
    elif kind is DivergenceKind.GAN:
        out = (1.0 - d) / d
    elif kind is DivergenceKind.HD:
        out = 1.0 / d**2
    else:
        raise DomainError(f"unknown divergence {kind!r}")
    return out if out.ndim else float(out)


def optimal_discriminator(kind: DivergenceKind, ratio) -> np.ndarray | float:
    """Exact maximizer of the value function given the true density ratio."""
    r = _as_array(ratio)
    if np.any(r <= 0.0):
        raise DomainError("density ratio must be positive")
    if kind is DivergenceKind.KL:
        out = r
    elif kind is DivergenceKind.GAN:
        out = 1.0 / (1.0 + r)
    elif kind is DivergenceKind.HD:
        out = 1.0 / np.sqrt(r)
    else:
        raise DomainError(f"unknown divergence {kind!r}")
    return out if out.ndim else float(out)


def output_activation_for(kind: DivergenceKind) -> Activation:
    """Network output activation enforcing the discriminator's domain."""
    if kind is DivergenceKind.GAN:
        return Activation.SIGMOID
    if kind in (DivergenceKind.KL, DivergenceKind.HD):
        return Activation.SOFTPLUS
    raise DomainError(f"unknown divergence {kind!r}")
