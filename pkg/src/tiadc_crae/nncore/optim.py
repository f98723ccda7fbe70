"""Adam optimizer and the weight/bias initializers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import truncnorm

from .tensor import Tensor

__all__ = ["AdamState", "adam_step", "xavier_init", "truncated_normal_init"]


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, applied in place to ``params``.

    Parameters are visited in ``params`` insertion order so the update is
    reproducible bit for bit.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter {p.data.shape}")
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def xavier_init(shape, fan_in: int, fan_out: int, seed) -> Tensor:
    """Glorot-uniform on ``+-sqrt(6 / (fan_in + fan_out))``."""
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError("fans must be positive")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def truncated_normal_init(shape, seed, mean: float = 0.0, std: float = 0.1) -> Tensor:
    """Normal draws with anything beyond two standard deviations rejected."""
    rng = np.random.default_rng(seed)
    data = truncnorm.rvs(-2.0, 2.0, loc=mean, scale=std, size=shape, random_state=rng)
    return Tensor(np.asarray(data, dtype=np.float64).reshape(shape), requires_grad=True)
