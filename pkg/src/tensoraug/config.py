"""INI-style run configuration with a closed schema.

Sections and keys (anything else is rejected)::

    [data]      path, dataset, synthetic_rows, synthetic_seed, split, ratios, months,
                matrix_shape
    [model]     every ModelConfig field (ranks as "r1,r2,r3")
    [train]     lr, optimizer, batch_size, max_epochs, patience, halve_on_plateau,
                stride, seed, with_control
    [output]    dir
    [gradcheck] batch, step, rtol, floor
    [bench]     batch, repeats, seed

An empty or missing ``data.path`` selects the bundled synthetic ETTh1-layout
series.  Relative paths resolve against ``$TEA_DATA_DIR`` when it is set.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from importlib import resources
import os
from pathlib import Path

from .errors import ConfigError, InvalidRank
from .model import ModelConfig
from .training import TrainConfig


def _ints(text):
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


def _floats(text):
    return tuple(float(v) for v in text.replace(" ", "").split(",") if v)


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_MODEL_TYPES = {
    "seq_len": int, "label_len": int, "pred_len": int, "n_features": int, "model_len": int,
    "d_model": int, "d_attn": int, "n_heads": int, "enc_layers": int, "dec_layers": int,
    "ranks": _ints, "tucker_method": str, "hooi_iters": int, "tea_encoder": _bool,
    "tea_decoder": _bool, "activation": str, "layer_norm": _bool, "scale_scores": _bool, "seed": int,
}

SCHEMA = {
    "data": {"path": str, "dataset": str, "synthetic_rows": int, "synthetic_seed": int,
             "split": str, "ratios": _floats, "months": _ints, "matrix_shape": _ints},
    "model": _MODEL_TYPES,
    "train": {"lr": float, "optimizer": str, "batch_size": int, "max_epochs": int, "patience": int,
              "halve_on_plateau": _bool, "stride": int, "seed": int, "with_control": _bool},
    "output": {"dir": str},
    "gradcheck": {"batch": int, "step": float, "rtol": float, "floor": float},
    "bench": {"batch": int, "repeats": int, "seed": int},
}


@dataclass
class DataConfig:
    path: str = ""
    dataset: str = "ETTh1"
    synthetic_rows: int = 1500
    synthetic_seed: int = 0
    split: str = "ratio"
    ratios: tuple = (0.7, 0.1, 0.2)
    months: tuple = (12, 4, 4)
    matrix_shape: tuple = ()

    def resolved_path(self):
        if not self.path:
            return None
        p = Path(self.path)
        root = os.environ.get("TEA_DATA_DIR")
        if not p.is_absolute() and root:
            p = Path(root) / p
        return p


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    with_control: bool = False
    output_dir: str = "runs/default"
    gradcheck: dict = field(default_factory=lambda: {"batch": 2, "step": 1e-6, "rtol": 1e-4, "floor": 1e-8})
    bench: dict = field(default_factory=lambda: {"batch": 1, "repeats": 3, "seed": 0})
    source: str = ""


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}".replace("\n", " ")) from None

    values = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        values[section] = {}
        for key, raw in cp.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{source}: unknown key {section}.{key}")
            try:
                values[section][key] = SCHEMA[section][key](raw)
            except ValueError as exc:
                raise ConfigError(f"{source}: bad value for {section}.{key}: {exc}") from None

    try:
        data = DataConfig(**values.get("data", {}))
        if data.split not in ("ratio", "months"):
            raise ValueError(f"data.split must be 'ratio' or 'months', got {data.split!r}")
        model = ModelConfig(**values.get("model", {}))
        if data.matrix_shape and (len(data.matrix_shape) != 2
                                  or data.matrix_shape[0] * data.matrix_shape[1] != model.n_features):
            raise ValueError("data.matrix_shape needs two extents whose product is model.n_features")
        train_vals = dict(values.get("train", {}))
        with_control = train_vals.pop("with_control", False)
        train = TrainConfig(model=model, **train_vals)
    except InvalidRank:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None

    run = RunConfig(data=data, model=model, train=train, with_control=with_control, source=source)
    if "output" in values:
        run.output_dir = values["output"].get("dir", run.output_dir)
    run.gradcheck.update(values.get("gradcheck", {}))
    run.bench.update(values.get("bench", {}))
    return run


def bundled_config_names():
    return sorted(p.name[:-4] for p in resources.files("tensoraug.configs").iterdir() if p.name.endswith(".ini"))


def load_config(path_or_name) -> RunConfig:
    """Load a config file, or a bundled one by bare name (``toy``, ``etth1_smoke``, ``bench``)."""
    p = Path(path_or_name)
    if not p.exists() and not p.suffix and str(path_or_name) in bundled_config_names():
        text = resources.files("tensoraug.configs").joinpath(f"{path_or_name}.ini").read_text()
        return parse_config(text, f"<bundled {path_or_name}>")
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path_or_name}: {exc.strerror}") from None
    return parse_config(text, str(p))
