"""Checkpoint archive: format tag, config echo and named parameter tensors."""
from __future__ import annotations

import os
from pathlib import Path

import torch

from .model import HeatmapQueryDetector, ModelConfig

FORMAT_TAG = "hgqdet-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path: str | os.PathLike, model: HeatmapQueryDetector, train_config: dict | None = None,
                    **extra) -> Path:
    payload = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "model_config": model.cfg.to_dict(),
        "train_config": train_config or {},
        "state_dict": {k: v.detach().cpu().clone() for k, v in model.state_dict().items()},
        **extra,
    }
    tmp = f"{path}.tmp"
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return Path(path)


def load_checkpoint(path: str | os.PathLike, expect_config: ModelConfig | None = None) -> tuple[HeatmapQueryDetector, dict]:
    """Rebuild the model stored at ``path``; returns ``(model, payload)``."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as err:  # noqa: BLE001 - torch raises a zoo of types here
        raise CheckpointError(f"{path}: not a readable checkpoint ({err})") from None
    if not isinstance(payload, dict) or payload.get("format") != FORMAT_TAG:
        raise CheckpointError(f"{path}: missing format tag {FORMAT_TAG!r}")
    if payload.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {payload.get('version')} != supported {FORMAT_VERSION}")
    cfg = ModelConfig(**payload["model_config"])
    if expect_config is not None and expect_config.to_dict() != cfg.to_dict():
        raise CheckpointError(f"{path}: model config differs from the requested one")
    model = HeatmapQueryDetector(cfg)
    try:
        model.load_state_dict(payload["state_dict"])
    except RuntimeError as err:
        raise CheckpointError(f"{path}: parameters incompatible with model config ({err})") from None
    model.eval()
    return model, payload
