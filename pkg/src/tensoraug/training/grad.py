"""Loss gradients through the forecaster and their finite-difference check."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericalError
from ..model import ModelConfig, backward, forward


def loss_and_grad(params: dict, batch, cfg: ModelConfig, step=None):
    """Mean squared error over ``batch = (enc_in, dec_seed, target)`` and its gradient.

    Tucker loadings are refitted by the forward pass and held fixed in the
    backward pass.
    """
    enc_in, dec_seed, target = batch
    pred, tape = forward(params, enc_in, dec_seed, cfg, record=True)
    resid = pred - target
    loss = float(np.mean(resid * resid))
    if not np.isfinite(loss):
        raise NumericalError("non-finite loss", step=step)
    grads = backward(2.0 * resid / resid.size, tape, params)
    return loss, grads


grad = loss_and_grad


def frozen_loss(params: dict, batch, cfg: ModelConfig, loadings: dict, dtype=np.longdouble) -> float:
    """Loss with pinned Tucker loadings, evaluated in ``dtype`` arithmetic."""
    enc_in, dec_seed, target = batch
    cast = {k: np.asarray(v, dtype=dtype) for k, v in params.items()}
    pinned = {k: [np.asarray(u, dtype=dtype) for u in us] for k, us in loadings.items()}
    pred = forward(cast, np.asarray(enc_in, dtype=dtype), np.asarray(dec_seed, dtype=dtype), cfg,
                   loadings=pinned)
    resid = pred - np.asarray(target, dtype=dtype)
    return np.mean(resid * resid)


@dataclass
class GradCheckResult:
    name: str
    size: int
    max_rel_error: float
    passed: bool


def gradcheck(params: dict, batch, cfg: ModelConfig, step: float = 1e-6, rtol: float = 1e-4,
              floor: float = 1e-8, names=None) -> list:
    """Central finite differences for every entry of every parameter.

    The error is ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    The loadings fitted at the unperturbed point are pinned during the
    perturbed evaluations, matching the constant-loadings gradient.  The
    differenced losses are evaluated in extended precision so that float64
    round-off (about 1e-10 / step) does not swamp small gradients.
    """
    enc_in, dec_seed, target = batch
    pred, tape = forward(params, enc_in, dec_seed, cfg, record=True)
    resid = pred - target
    analytic = backward(2.0 * resid / resid.size, tape, params)
    results = []
    for name in names or params:
        value = params[name]
        numeric = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            shifted = dict(params)
            plus = value.copy()
            plus[idx] += step
            shifted[name] = plus
            f_plus = frozen_loss(shifted, batch, cfg, tape.loadings)
            minus = value.copy()
            minus[idx] -= step
            shifted[name] = minus
            f_minus = frozen_loss(shifted, batch, cfg, tape.loadings)
            numeric[idx] = float((f_plus - f_minus) / (np.longdouble(plus[idx]) - np.longdouble(minus[idx])))
        g = analytic[name]
        denom = np.maximum(np.maximum(np.abs(g), np.abs(numeric)), floor)
        err = float(np.max(np.abs(g - numeric) / denom))
        results.append(GradCheckResult(name, value.size, err, err <= rtol))
    return results
