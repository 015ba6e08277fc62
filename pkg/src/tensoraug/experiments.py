"""Experiment plumbing shared by the CLI and the acceptance suite."""

from __future__ import annotations

from dataclasses import asdict, replace
import time

import numpy as np

from . import container
from .config import DataConfig, RunConfig
from .data import Dataset, load_csv, prepare, synthetic_ett
from .errors import ParseError
from .flops import FlopCounter, mha_flops
from .model import (ModelConfig, _plain_block_fwd, _tea_block_fwd, attention_view, init_params)
from .training import evaluate, mae, mse, persistence_forecast, split_arrays, train

TABLE_HEADER = "dataset,seq_len,pred_len,model,mse,mae"


def load_dataset(data: DataConfig, seq_len: int) -> Dataset:
    path = data.resolved_path()
    series = load_csv(path) if path is not None else synthetic_ett(data.synthetic_rows, data.synthetic_seed)
    if data.split == "months":
        return prepare(series, data.dataset, months=data.months, seq_len=seq_len)
    return prepare(series, data.dataset, ratios=data.ratios, seq_len=seq_len)


def control_config(cfg: ModelConfig) -> ModelConfig:
    """Same sizes with the Tucker compression bypassed in every layer."""
    return replace(cfg, tea_encoder=False, tea_decoder=False)


def model_label(cfg: ModelConfig) -> str:
    if not cfg.tea_encoder:
        return "Transformer"
    return "TEA-Transformer-ENC-DEC" if cfg.tea_decoder else "TEA-Transformer"


def table_row(dataset: str, cfg: ModelConfig, label: str, mse_v: float, mae_v: float) -> str:
    return f"{dataset},{cfg.seq_len},{cfg.pred_len},{label},{mse_v:.6f},{mae_v:.6f}"


def split_series(ds: Dataset, split: str):
    try:
        return {"train": ds.train, "val": ds.val, "test": ds.test}[split]
    except KeyError:
        raise ValueError(f"unknown split {split!r}") from None


def persistence_scores(ds: Dataset, cfg: ModelConfig, split: str = "val") -> tuple:
    enc_in, _, target = split_arrays(split_series(ds, split), cfg)
    pred = persistence_forecast(enc_in, cfg.pred_len)
    return mse(pred, target), mae(pred, target)


def run_training(run: RunConfig, ds: Dataset, model: ModelConfig | None = None, seed: int | None = None):
    model = model or run.model
    if seed is not None:
        model = replace(model, seed=seed)
    tcfg = replace(run.train, model=model, seed=run.train.seed if seed is None else seed)
    return train(tcfg, ds)


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(path, params: dict, model: ModelConfig, run: RunConfig, report=None) -> None:
    manifest = {
        "model": model.as_dict(),
        "data": asdict(run.data),
        "train": {k: v for k, v in asdict(run.train).items() if k != "model"},
        "seed": model.seed,
        "step": report.steps if report is not None else 0,
        "best_epoch": report.best_epoch if report is not None else 0,
    }
    container.save(path, container.Container("checkpoint", dict(params), manifest=manifest))


def load_checkpoint(path):
    c = container.load(path)
    if c.kind != "checkpoint":
        raise ParseError(f"{path} holds a {c.kind!r} container, not a checkpoint")
    try:
        model = ModelConfig.from_dict(c.manifest["model"])
        data = DataConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in c.manifest["data"].items()})
    except (KeyError, TypeError) as exc:
        raise ParseError(f"bad checkpoint manifest: {exc}") from None
    return c.arrays, model, data, c.manifest


def eval_rows(params, model: ModelConfig, ds: Dataset, split: str) -> tuple:
    arrays = split_arrays(split_series(ds, split), model)
    return evaluate(params, arrays, model)


# -- benchmark ----------------------------------------------------------------

def bench_attention(cfg: ModelConfig, batch: int = 1, repeats: int = 3, seed: int = 0) -> dict:
    """Instrumented full-tensor versus core-tensor attention for one encoder layer."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, cfg.seq_len, cfg.model_len, cfg.d_model))
    full_params = init_params(control_config(cfg).with_(enc_layers=1, dec_layers=0), seed)
    core_params = init_params(cfg.with_(enc_layers=1, dec_layers=0, tea_encoder=True), seed)
    full_attn = attention_view(full_params, "enc0.attn")
    core_attn = attention_view(core_params, "enc0.attn")

    def run_full(counter=None):
        return _plain_block_fwd(x, full_attn, full_params["enc0.ln.gain"], full_params["enc0.ln.bias"],
                                cfg, counter=counter)

    def run_core(counter=None):
        return _tea_block_fwd(x, core_attn, core_params["enc0.ln.gain"], core_params["enc0.ln.bias"],
                              cfg.ranks, cfg, counter=counter)

    full_counter, core_counter = FlopCounter(), FlopCounter()
    run_full(full_counter)
    run_core(core_counter)
    timings = {}
    for name, fn in (("full", run_full), ("core", run_core)):
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        timings[name] = best

    r1, r2, r3 = cfg.ranks
    core_counted = core_counter.total - core_counter.counts["tucker"]
    return {
        "full_counted": full_counter.total,
        "full_closed_form": batch * mha_flops(cfg.seq_len, cfg.model_len, cfg.d_model, cfg.d_attn, cfg.n_heads),
        "core_counted": core_counted,
        "core_closed_form": batch * mha_flops(r1, r2, r3, cfg.d_attn, cfg.n_heads),
        "compression_counted": core_counter.counts["tucker"],
        "full_seconds": timings["full"],
        "core_seconds": timings["core"],
        "core_score_shapes": sorted(set(core_counter.score_shapes)),
        "full_score_shapes": sorted(set(full_counter.score_shapes)),
    }


def ablation_table(run: RunConfig, ds: Dataset, seeds) -> list:
    """Validation MSE of the default decoder versus the TEA decoder per seed."""
    rows = []
    for seed in seeds:
        _, rep_default = run_training(run, ds, replace(run.model, tea_decoder=False), seed)
        _, rep_tea = run_training(run, ds, replace(run.model, tea_decoder=True), seed)
        rows.append((seed, rep_default.best_val_mse, rep_tea.best_val_mse))
    return rows


__all__ = [
    "TABLE_HEADER", "ablation_table", "bench_attention", "control_config", "eval_rows",
    "load_checkpoint", "load_dataset", "model_label", "persistence_scores", "run_training",
    "save_checkpoint", "table_row",
]
