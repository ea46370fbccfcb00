"""Sectioned ``key = value`` run configuration.

Example::

    [model]
    arch = tiny
    width = 8
    blocks = 6
    freq_bins = 33
    residual = true

    [train]
    learning_rate = 1e-4
    epochs = 50
    batch_size = 16

    [data]
    synthetic_train = 64
    synthetic_val = 8

    [output]
    checkpoint = run/best.masn
    history = run/history.csv
"""

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import InvalidArgument
from .training import TrainConfig

_MODEL_KEYS = {"arch": str, "width": int, "blocks": int, "freq_bins": int, "residual": bool,
               "init_seed": int, "zero_output": bool, "weights": str}
_DATA_KEYS = {"train_dir": str, "val_dir": str, "train_manifest": str, "val_manifest": str,
              "synthetic_train": int, "synthetic_val": int, "synthetic_samples": int,
              "synthetic_seed": int}
_OUTPUT_KEYS = {"checkpoint": str, "history": str, "plot": str}
_ENHANCE_KEYS = {"mode": str}
_COST_KEYS = {"frame_rate_hz": float, "bins": int}
_TYPE_NAMES = {"float": float, "int": int}
_TRAIN_KEYS = {f.name: _TYPE_NAMES.get(f.type, f.type) for f in fields(TrainConfig)}

SECTIONS = {"model": _MODEL_KEYS, "train": _TRAIN_KEYS, "data": _DATA_KEYS,
            "output": _OUTPUT_KEYS, "enhance": _ENHANCE_KEYS, "cost": _COST_KEYS}


@dataclass
class RunConfig:
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    enhance: dict = field(default_factory=dict)
    cost: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    def path(self, section, key):
        value = getattr(self, section).get(key)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p


def _convert(section, key, raw, kind):
    try:
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        return kind(raw)
    except ValueError:
        raise InvalidArgument(f"[{section}] {key}: cannot parse {raw!r} as {kind.__name__}")


def parse_config(text, base_dir="."):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise InvalidArgument(f"malformed config: {exc}") from exc
    cfg = RunConfig(base_dir=Path(base_dir))
    train = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise InvalidArgument(f"unknown section [{section}]")
        allowed = SECTIONS[section]
        for key, raw in parser.items(section):
            if key not in allowed:
                raise InvalidArgument(f"unknown key {key!r} in [{section}]")
            value = _convert(section, key, raw, allowed[key])
            if section == "train":
                train[key] = value
            else:
                getattr(cfg, section)[key] = value
    cfg.train = TrainConfig(**train)
    return cfg


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise InvalidArgument(f"config file not found: {path}")
    return parse_config(path.read_text(), base_dir=path.parent)
