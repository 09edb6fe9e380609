"""Training configuration and its file/flag loading.

Config files are YAML (JSON is valid YAML) with the same nesting as
:class:`TrainConfig`; ``--set section.key=value`` flags override single keys.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .data.augment import AugmentationConfig
from .losses import LossWeights
from .matching import CostWeights
from .model import ModelConfig

RUN_ROOT_ENV = "HGQDET_RUN_ROOT"


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 2e-4
    weight_decay: float = 4e-4
    batch_size: int = 4
    epochs: int = 50
    warmup_epochs: int = 15
    warmup_start_factor: float = 0.01
    optimizer: str = "adamw"
    grad_clip: float | None = 1.0
    seed: int = 0
    stain: str | None = None
    val_fraction: float = 0.2
    normalize_mean: float = 0.5
    normalize_std: float = 0.25
    focal_alpha: tuple[float, float] = (0.25, 0.75)
    focal_gamma: float = 1.5
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    cost: CostWeights = field(default_factory=CostWeights)
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    augment: bool = True
    run_dir: str | None = None
    save_every_epoch: bool = False

    def __post_init__(self):
        self.focal_alpha = tuple(self.focal_alpha)
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ConfigError("warmup_epochs must lie in [0, epochs]")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if self.optimizer != "adamw":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return _build(cls, data or {})


def _build(cls, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping for {cls.__name__}, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} key(s): {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = fields[name].default_factory() if fields[name].default_factory is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(default):
            value = _build(type(default), value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{cls.__name__}: {err}") from None


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``a.b.c=value`` strings; values are parsed as YAML scalars/lists."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        data = set_path(data, key.strip(), yaml.safe_load(raw))
    return data


def set_path(data: dict, key: str, value: Any) -> dict:
    """Copy of ``data`` with the dotted ``key`` set to ``value``."""
    data = dict(data)
    node = data
    parts = key.split(".")
    for p in parts[:-1]:
        child = node.get(p)
        child = dict(child) if isinstance(child, dict) else {}
        node[p] = child
        node = child
    node[parts[-1]] = value
    return data


def load_config(path: str | os.PathLike | None = None, overrides: list[str] | None = None) -> TrainConfig:
    data: dict[str, Any] = {}
    if path:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    data = apply_overrides(data, overrides or [])
    return TrainConfig.from_dict(data)


def resolve_run_dir(cfg: TrainConfig, name: str | None = None) -> Path:
    if cfg.run_dir:
        return Path(cfg.run_dir)
    root = Path(os.environ.get(RUN_ROOT_ENV, "runs"))
    return root / (name or f"run-seed{cfg.seed}")


def desk_config(overrides: dict[str, Any] | None = None) -> TrainConfig:
    """Small tiny-cnn configuration that trains on a CPU in minutes.

    ``overrides`` maps dotted keys (``"model.d"``) to values.
    """
    base = {
        "lr": 1e-3,
        "epochs": 200,
        "warmup_epochs": 5,
        "val_fraction": 0.0,
        "model": {
            "backbone": "tiny-cnn",
            "d": 64,
            "num_queries": 32,
            "num_layers": 3,
            "n_head": 4,
            "ffn_dim": 128,
            "c4_heads": 4,
            "tiny_channels": [16, 32, 64, 128],
            "input_size": [128, 128],
        },
    }
    for key, value in (overrides or {}).items():
        base = set_path(base, key, value)
    return TrainConfig.from_dict(base)
