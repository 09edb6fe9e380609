"""Training loop: matching, composite loss, warm-up schedule, checkpoints."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import Tensor

from .checkpoint import save_checkpoint
from .config import ConfigError, TrainConfig, resolve_run_dir
from .data.augment import AugmentationConfig, augment, letterbox
from .data.sample import Sample
from .heatmap import render_target
from .losses import LossBreakdown, total_loss
from .matching import MatchAssignment, build_cost, hungarian_assign
from .model import DetectorOutput, HeatmapQueryDetector

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class RunManifest:
    config: dict
    dataset: dict
    epochs: list[dict] = field(default_factory=list)
    best_checkpoint: str | None = None
    best_epoch: int | None = None
    best_loss: float | None = None

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "dataset": self.dataset,
            "epochs": self.epochs,
            "best_checkpoint": self.best_checkpoint,
            "best_epoch": self.best_epoch,
            "best_loss": self.best_loss,
        }

    def write(self, path: Path) -> None:
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2))
        tmp.replace(path)


@dataclass
class TrainResult:
    model: HeatmapQueryDetector
    manifest: RunManifest
    run_dir: Path
    best_path: Path
    last_path: Path


def images_to_tensor(samples: Sequence[Sample], mean: float, std: float, dtype=torch.float32) -> Tensor:
    arr = np.stack([s.image for s in samples]).astype(np.float32)
    x = torch.from_numpy(arr).permute(0, 3, 1, 2).to(dtype)
    return (x - mean) / std


def heatmap_targets(samples: Sequence[Sample], grid_h: int, grid_w: int, dtype=torch.float32) -> Tensor:
    return torch.stack([render_target(s.gts, grid_w, grid_h, dtype=dtype) for s in samples])[:, None]


def match_batch(out: DetectorOutput, gts: Sequence[Tensor], cfg: TrainConfig) -> list[MatchAssignment]:
    assignments = []
    for b, g in enumerate(gts):
        cost = build_cost(out.logits[b], out.boxes[b], g, out.valid[b], cfg.cost)
        assignments.append(hungarian_assign(cost))
    return assignments


def batch_loss(
    model: HeatmapQueryDetector,
    samples: Sequence[Sample],
    cfg: TrainConfig,
    dtype=torch.float32,
) -> tuple[LossBreakdown, DetectorOutput]:
    """Forward a batch and return the per-image-averaged loss breakdown."""
    x = images_to_tensor(samples, cfg.normalize_mean, cfg.normalize_std, dtype)
    out = model(x)
    gh, gw = out.heatmap_logits.shape[-2:]
    targets = heatmap_targets(samples, gh, gw, dtype)
    gts = [torch.as_tensor(s.gts, dtype=dtype).reshape(-1, 4) for s in samples]
    assignments = match_batch(out, gts, cfg)
    per_image = [
        total_loss(
            out.logits[b], out.boxes[b], out.valid[b], gts[b], assignments[b],
            out.heatmap_logits[b, 0], targets[b, 0], cfg.loss, cfg.focal_alpha, cfg.focal_gamma,
        )
        for b in range(len(samples))
    ]
    return LossBreakdown.mean(per_image), out


def warmup_factor(step: int, warmup_steps: int, start: float) -> float:
    """Linear ramp from ``start`` to 1 over ``warmup_steps``, then flat."""
    if warmup_steps <= 0 or step >= warmup_steps:
        return 1.0
    return start + (1.0 - start) * step / warmup_steps


def dataset_fingerprint(samples: Sequence[Sample]) -> str:
    h = hashlib.sha256()
    for s in samples:
        h.update(str(s.image_id).encode())
        h.update(np.ascontiguousarray(s.image, dtype=np.float32).tobytes())
        h.update(np.ascontiguousarray(s.gts, dtype=np.float64).tobytes())
    return h.hexdigest()


def split_train_val(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Image-level random split; ``fraction`` of the images go to validation."""
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(round(n * fraction)) if n > 1 else 0
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def prepare(samples, cfg: TrainConfig) -> list[Sample]:
    size = tuple(cfg.model.input_size)
    out = []
    for s in samples:
        if cfg.stain is not None and s.stain_tag != cfg.stain:
            continue
        out.append(s if s.image.shape[:2] == size else letterbox(s, size))
    return out


@torch.no_grad()
def evaluate_loss(model: HeatmapQueryDetector, samples: Sequence[Sample], cfg: TrainConfig) -> dict[str, float]:
    was_training = model.training
    model.eval()
    totals: dict[str, float] = {}
    for i in range(0, len(samples), cfg.batch_size):
        batch = samples[i : i + cfg.batch_size]
        loss, _ = batch_loss(model, batch, cfg)
        for k, v in loss.as_floats().items():
            totals[k] = totals.get(k, 0.0) + v * len(batch)
    model.train(was_training)
    return {k: v / len(samples) for k, v in totals.items()}


def train(
    cfg: TrainConfig,
    dataset,
    run_dir: str | Path | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train a detector; everything is written below ``run_dir``.

    The best checkpoint is the one with the lowest validation total loss
    (training loss when no validation split is configured).
    """
    samples = prepare(dataset, cfg)
    if not samples:
        raise ConfigError(f"no training images left after stain filter {cfg.stain!r}")
    run_dir = Path(run_dir) if run_dir is not None else resolve_run_dir(cfg)
    run_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    train_idx, val_idx = split_train_val(len(samples), cfg.val_fraction, cfg.seed)
    train_set = [samples[i] for i in train_idx]
    val_set = [samples[i] for i in val_idx]

    model = HeatmapQueryDetector(cfg.model)
    model.train()
    optim = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    steps_per_epoch = math.ceil(len(train_set) / cfg.batch_size)
    warmup_steps = cfg.warmup_epochs * steps_per_epoch
    sched = torch.optim.lr_scheduler.LambdaLR(
        optim, lambda s: warmup_factor(s, warmup_steps, cfg.warmup_start_factor)
    )
    aug_cfg = cfg.augmentation if cfg.augment else AugmentationConfig.identity()

    manifest = RunManifest(
        config=cfg.to_dict(),
        dataset={
            "n_train": len(train_set),
            "n_val": len(val_set),
            "train_ids": [str(s.image_id) for s in train_set],
            "val_ids": [str(s.image_id) for s in val_set],
            "train_sha256": dataset_fingerprint(train_set),
            "val_sha256": dataset_fingerprint(val_set),
        },
    )
    best_path, last_path = run_dir / "best.pt", run_dir / "last.pt"
    manifest_path = run_dir / "manifest.json"

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_set))
        sums: dict[str, float] = {}
        for step in range(steps_per_epoch):
            ids = order[step * cfg.batch_size : (step + 1) * cfg.batch_size]
            batch = [augment(train_set[i], aug_cfg, rng) for i in ids]
            loss, _ = batch_loss(model, batch, cfg)
            if not torch.isfinite(loss.total):
                dump = {
                    "epoch": epoch,
                    "step": step,
                    "image_ids": [str(s.image_id) for s in batch],
                    "loss": loss.as_floats(),
                }
                (run_dir / "nonfinite_batch.json").write_text(json.dumps(dump, indent=2))
                raise TrainingError(f"non-finite loss at epoch {epoch} step {step}, images {dump['image_ids']}")
            optim.zero_grad(set_to_none=True)
            loss.total.backward()
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optim.step()
            sched.step()
            for k, v in loss.as_floats().items():
                sums[k] = sums.get(k, 0.0) + v * len(batch)
        train_losses = {k: v / len(train_set) for k, v in sums.items()}
        val_losses = evaluate_loss(model, val_set, cfg) if val_set else None
        record = {
            "epoch": epoch,
            "lr": optim.param_groups[0]["lr"],
            "train": train_losses,
            "val": val_losses,
            "seconds": time.perf_counter() - t0,
        }
        manifest.epochs.append(record)
        score = (val_losses or train_losses)["total"]
        if manifest.best_loss is None or score < manifest.best_loss:
            manifest.best_loss, manifest.best_epoch = score, epoch
            manifest.best_checkpoint = best_path.name
            save_checkpoint(best_path, model, cfg.to_dict(), epoch=epoch)
        if cfg.save_every_epoch or epoch == cfg.epochs:
            save_checkpoint(last_path, model, cfg.to_dict(), epoch=epoch)
        manifest.write(manifest_path)
        log.info("epoch %d train %.4f val %s", epoch, train_losses["total"],
                 f"{val_losses['total']:.4f}" if val_losses else "-")
        if on_epoch is not None:
            on_epoch(record)
    model.eval()
    return TrainResult(model, manifest, run_dir, best_path, last_path)
