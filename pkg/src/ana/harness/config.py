"""Experiment configuration as flat ``section.key = value`` lines.

Blank lines and ``#`` comments are ignored.  Unknown keys are errors.
Serialization writes every key in a fixed order, so parse -> dump -> parse
is the identity.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import get_type_hints

from ..noise import DEFAULT_SIGMA


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    # comma-separated ``dense:<width>`` / ``conv:<filters>:k<k>:p<p>:s<s>[:pool<k>]``
    layers: str = "dense:256,dense:256,dense:10"
    quantizer: str = "ternary"
    batchnorm: bool = True
    init_range: float = 1.0


@dataclass
class PolicyConfig:
    mode: str = "asynchronous"
    forward_decay: str = "linear"
    backward_decay: str = "constant"
    sigma_init: float = DEFAULT_SIGMA
    period: int = 50


@dataclass
class OptimConfig:
    lr: float = 0.001
    lr_drop: float = 0.0001
    lr_drop_epoch: int = 700
    batch_size: int = 256


@dataclass
class DataConfig:
    name: str = "mnist"
    path: str = ""
    train_limit: int = 0
    val_limit: int = 0
    n_samples: int = 512
    mean: float = 0.1307
    std: float = 0.3081


@dataclass
class TrainConfig:
    epochs: int = 1000
    seed: int = 0
    loss: str = "cross_entropy"


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self, check_paths: bool = True) -> "ExperimentConfig":
        if self.train.epochs < 1:
            raise ConfigError(f"train.epochs must be >= 1, got {self.train.epochs}")
        if not self.optim.lr > 0:
            raise ConfigError(f"optim.lr must be > 0, got {self.optim.lr}")
        if self.optim.batch_size < 1:
            raise ConfigError("optim.batch_size must be >= 1")
        if check_paths and self.data.path and not Path(self.data.path).exists():
            raise ConfigError(f"data.path does not exist: {self.data.path}")
        if self.data.name in ("mnist", "cifar") and not self.data.path:
            raise ConfigError(f"data.path is required for dataset {self.data.name!r}")
        return self


SECTIONS = [f.name for f in dataclasses.fields(ExperimentConfig)]


def _coerce(raw: str, typ, key: str):
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError(raw)
            return v
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (p.strip() for p in line.split("=", 1))
        section, _, name = key.partition(".")
        if section not in SECTIONS or not name:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        obj = getattr(cfg, section)
        hints = get_type_hints(type(obj))
        if name not in hints:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        setattr(obj, name, _coerce(raw, hints[name], key))
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for section in SECTIONS:
        obj = getattr(cfg, section)
        for f in dataclasses.fields(obj):
            lines.append(f"{section}.{f.name} = {_fmt(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config(text)


def mnist_recipe(path: str, mode: str = "asynchronous", seed: int = 0, epochs: int = 60) -> ExperimentConfig:
    """Desk-scale ternary 784-256-256-10 recipe."""
    cfg = ExperimentConfig()
    cfg.data.name, cfg.data.path = "mnist", path
    cfg.policy.mode = mode
    cfg.policy.period = 10
    cfg.train.epochs, cfg.train.seed = epochs, seed
    cfg.optim.lr_drop_epoch = 40
    return cfg
