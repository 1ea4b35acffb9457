"""Stochastic-gradient Hamiltonian Monte Carlo steps and the weight prior.

Both samplers treat `grads` as the direction of motion: callers performing
posterior sampling pass the negative gradient of the potential (loss plus
negative log prior).  The plain sampler keeps a velocity

    v <- (1 - friction) * v + lr * grad + noise,   noise ~ N(0, 2*friction*lr)
    theta <- theta + v

and the adaptive variant applies moment-rescaled steps with the same
calibrated noise injected directly on the parameter increment, so that
`noise_scale=0` reproduces the deterministic adaptive optimizer exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nnet import ParamSpec

__all__ = ["GlorotPrior", "sghmc_step", "AdamState", "adam_sghmc_step"]


@dataclass(frozen=True)
class GlorotPrior:
    """Independent zero-mean Gaussian prior per tensor with fan-balanced
    variance gain**2 * 2 / (fan_in + fan_out)."""

    sigma2: tuple[float, ...]

    @classmethod
    def for_specs(cls, specs: list[ParamSpec], gain: float = 1.0) -> "GlorotPrior":
        return cls(tuple(gain**2 * 2.0 / (s.fan_in + s.fan_out) for s in specs))

    def neg_log_density(self, params) -> float:
        """-log p(params) up to the normalising constant."""
        return float(
            sum(0.5 * np.sum(p * p) / s2 for p, s2 in zip(params, self.sigma2))
        )

    def neg_log_grad(self, params):
        """Gradient of -log p: theta / sigma^2 per tensor."""
        return [p / s2 for p, s2 in zip(params, self.sigma2)]


def sghmc_step(
    params,
    grads,
    velocity,
    friction: float,
    lr: float,
    rng: np.random.Generator,
    noise_scale: float = 1.0,
):
    """One friction-damped stochastic Hamiltonian step.

    Args:
        params, grads, velocity: aligned lists of arrays; `grads` is the
            direction of motion (negative potential gradient for sampling).
        friction: momentum decay in [0, 1].
        lr: step size.
        rng: noise source.
        noise_scale: multiplier on the calibrated noise standard deviation
            sqrt(2 * friction * lr); 0 disables injection.

    Returns:
        (new_params, new_velocity) as fresh arrays.
    """
    std = noise_scale * np.sqrt(2.0 * friction * lr)
    new_v, new_p = [], []
    for p, g, v in zip(params, grads, velocity):
        nv = (1.0 - friction) * v + lr * g
        if std > 0.0:
            nv = nv + rng.normal(0.0, std, size=p.shape)
        new_v.append(nv)
        new_p.append(p + nv)
    return new_p, new_v


@dataclass
class AdamState:
    """First/second moment accumulators and step counter."""

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            t=0,
        )


def adam_sghmc_step(
    params,
    grads,
    state: AdamState,
    lr: float,
    friction: float,
    rng: np.random.Generator,
    noise_scale: float = 1.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """Adaptive moment step with posterior-exploration noise on the increment.

    With `noise_scale=0` this is exactly the deterministic adaptive optimizer
    (moving along `grads`); otherwise N(0, 2*friction*lr) noise is added to
    the final parameter increment.

    Returns:
        (new_params, state) with `state` updated in place.
    """
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    std = noise_scale * np.sqrt(2.0 * friction * lr)
    new_p = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * (g * g)
        mhat = state.m[i] / c1
        vhat = state.v[i] / c2
        delta = lr * mhat / (np.sqrt(vhat) + eps)
        if std > 0.0:
            delta = delta + rng.normal(0.0, std, size=p.shape)
        new_p.append(p + delta)
    return new_p, state
