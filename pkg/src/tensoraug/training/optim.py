"""Plain SGD and Adam over flat parameter dictionaries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def sgd_step(params: dict, grads: dict, hyper: OptimConfig) -> dict:
    return {k: p - hyper.lr * grads[k] for k, p in params.items()}


def adam_step(params: dict, grads: dict, hyper: OptimConfig, state: AdamState) -> dict:
    """One bias-corrected Adam update; ``state`` is advanced in place."""
    state.t += 1
    c1 = 1.0 - hyper.beta1 ** state.t
    c2 = 1.0 - hyper.beta2 ** state.t
    out = {}
    for k, p in params.items():
        g = grads[k]
        m = hyper.beta1 * state.m.get(k, 0.0) + (1.0 - hyper.beta1) * g
        v = hyper.beta2 * state.v.get(k, 0.0) + (1.0 - hyper.beta2) * g * g
        state.m[k], state.v[k] = m, v
        out[k] = p - hyper.lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)
    return out
