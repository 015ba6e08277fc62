"""Gradients, optimizers, metrics and the training loop."""

from .grad import GradCheckResult, frozen_loss, grad, gradcheck, loss_and_grad
from .loop import EpochRecord, TrainConfig, TrainReport, evaluate, predict, split_arrays, train
from .metrics import mae, mse, persistence_forecast
from .optim import AdamState, OptimConfig, adam_step, sgd_step

__all__ = [
    "AdamState", "EpochRecord", "GradCheckResult", "OptimConfig", "TrainConfig", "TrainReport",
    "adam_step", "evaluate", "frozen_loss", "grad", "gradcheck", "loss_and_grad", "mae", "mse",
    "persistence_forecast", "predict", "sgd_step", "split_arrays", "train",
]
