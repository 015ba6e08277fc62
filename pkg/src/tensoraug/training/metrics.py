"""Point-forecast error metrics averaged over every element of the window."""

import numpy as np

from ..errors import ShapeError


def _pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    return pred, target


def mse(pred, target) -> float:
    pred, target = _pair(pred, target)
    return float(np.mean((pred - target) ** 2))


def mae(pred, target) -> float:
    pred, target = _pair(pred, target)
    return float(np.mean(np.abs(pred - target)))


def persistence_forecast(encoder_input, pred_len: int):
    """Repeat the last observed row over the horizon."""
    last = np.asarray(encoder_input)[..., -1:, :]
    return np.repeat(last, pred_len, axis=-2)
