"""Minibatch training with early stopping on validation MSE."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
import logging
import time

import numpy as np

from ..data import Dataset, stack_windows, windows
from ..errors import DataError
from ..model import ModelConfig, forward, init_params
from .grad import loss_and_grad
from .metrics import mae, mse
from .optim import AdamState, OptimConfig, adam_step, sgd_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    lr: float = 1e-3
    optimizer: str = "adam"
    batch_size: int = 32
    max_epochs: int = 10
    patience: int = 3
    halve_on_plateau: bool = False
    stride: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1 or self.stride < 1:
            raise ValueError("batch_size, max_epochs, patience and stride must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mse: float
    val_mae: float
    seconds: float = field(compare=False)


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    steps: int = 0
    best_epoch: int = 0

    @property
    def best_val_mse(self) -> float:
        return min(e.val_mse for e in self.epochs)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_mse", "val_mae", "seconds"])
            for e in self.epochs:
                w.writerow([e.epoch, repr(e.train_loss), repr(e.val_mse), repr(e.val_mae), f"{e.seconds:.3f}"])

    def lines(self):
        for e in self.epochs:
            yield (f"epoch {e.epoch}: train_loss={e.train_loss:.6f} val_mse={e.val_mse:.6f} "
                   f"val_mae={e.val_mae:.6f} ({e.seconds:.1f}s)")


def split_arrays(series, cfg: ModelConfig, stride: int = 1):
    ws = windows(series, cfg.seq_len, cfg.label_len, cfg.pred_len, stride)
    return stack_windows(ws)


def predict(params: dict, enc_in, dec_seed, cfg: ModelConfig, chunk: int = 256):
    out = [forward(params, enc_in[i:i + chunk], dec_seed[i:i + chunk], cfg)
           for i in range(0, enc_in.shape[0], chunk)]
    return np.concatenate(out, axis=0)


def evaluate(params: dict, arrays, cfg: ModelConfig) -> tuple:
    enc_in, dec_seed, target = arrays
    pred = predict(params, enc_in, dec_seed, cfg)
    return mse(pred, target), mae(pred, target)


def train(cfg: TrainConfig, dataset: Dataset, params: dict | None = None, on_epoch=None):
    """Fit the forecaster; returns the best-on-validation parameters and a report."""
    mcfg = cfg.model
    try:
        train_arr = split_arrays(dataset.train, mcfg, cfg.stride)
        val_arr = split_arrays(dataset.val, mcfg)
    except DataError as exc:
        raise DataError(f"empty split: {exc}") from None

    params = init_params(mcfg) if params is None else dict(params)
    hyper = OptimConfig(lr=cfg.lr)
    state = AdamState()
    rng = np.random.default_rng(cfg.seed)
    report = TrainReport()
    best, best_mse = dict(params), np.inf
    bad_epochs = 0
    n = train_arr[0].shape[0]

    for epoch in range(1, cfg.max_epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(n)
        losses = []
        for i in range(0, n, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            batch = tuple(a[idx] for a in train_arr)
            loss, grads = loss_and_grad(params, batch, mcfg, step=report.steps)
            if cfg.optimizer == "adam":
                params = adam_step(params, grads, hyper, state)
            else:
                params = sgd_step(params, grads, hyper)
            losses.append(loss * idx.size)
            report.steps += 1
        val_mse, val_mae = evaluate(params, val_arr, mcfg)
        rec = EpochRecord(epoch, float(np.sum(losses) / n), val_mse, val_mae, time.perf_counter() - start)
        report.epochs.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        log.info("epoch %d train_loss=%.6f val_mse=%.6f", epoch, rec.train_loss, val_mse)
        if val_mse < best_mse:
            best, best_mse, report.best_epoch = dict(params), val_mse, epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if cfg.halve_on_plateau:
                hyper = OptimConfig(lr=hyper.lr / 2, beta1=hyper.beta1, beta2=hyper.beta2, eps=hyper.eps)
            if bad_epochs >= cfg.patience:
                break
    return best, report
