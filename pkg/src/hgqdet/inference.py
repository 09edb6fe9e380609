"""Inference: decode queries, filter, Soft-NMS, and emit COCO detections."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .data.augment import letterbox
from .data.sample import Sample
from .geometry import soft_nms_arrays
from .model import HeatmapQueryDetector

SCORE_FLOOR = 0.05
MAX_DETS = 100


@dataclass(frozen=True)
class InferenceConfig:
    score_floor: float = SCORE_FLOOR
    nms_sigma: float = 0.5
    nms_iou: float = 0.5
    max_dets: int = MAX_DETS
    normalize_mean: float = 0.5
    normalize_std: float = 0.25
    batch_size: int = 4


def postprocess(
    boxes: np.ndarray, scores: np.ndarray, cfg: InferenceConfig = InferenceConfig()
) -> tuple[np.ndarray, np.ndarray]:
    """Score filter, Soft-NMS and the per-image cap on normalized boxes."""
    keep = scores >= cfg.score_floor
    boxes, scores = boxes[keep], scores[keep]
    idx, new_scores = soft_nms_arrays(boxes, scores, cfg.nms_sigma, cfg.nms_iou, cfg.score_floor)
    idx, new_scores = idx[: cfg.max_dets], new_scores[: cfg.max_dets]
    return boxes[idx], new_scores


def _to_pixels(boxes: np.ndarray, sample: Sample) -> np.ndarray:
    """Normalized boxes in the letterboxed frame -> ``[x, y, w, h]`` in the
    original image, clipped to it."""
    lb = sample.meta.get("letterbox")
    h, w = sample.image.shape[:2]
    sx = sy = 1.0
    ow, oh = w, h
    if lb:
        sx, sy, ow, oh = lb["scale_x"], lb["scale_y"], lb["orig_w"], lb["orig_h"]
    x0 = np.clip((boxes[:, 0] - boxes[:, 2] / 2) * w / sx, 0, ow)
    x1 = np.clip((boxes[:, 0] + boxes[:, 2] / 2) * w / sx, 0, ow)
    y0 = np.clip((boxes[:, 1] - boxes[:, 3] / 2) * h / sy, 0, oh)
    y1 = np.clip((boxes[:, 1] + boxes[:, 3] / 2) * h / sy, 0, oh)
    return np.stack([x0, y0, x1 - x0, y1 - y0], axis=1)


@torch.no_grad()
def infer(
    model: HeatmapQueryDetector,
    samples: Sequence[Sample],
    cfg: InferenceConfig = InferenceConfig(),
    category_id: int = 1,
) -> list[dict]:
    """COCO detection-result records for every sample."""
    model.eval()
    size = tuple(model.cfg.input_size)
    results: list[dict] = []
    for i in range(0, len(samples), cfg.batch_size):
        batch = [s if s.image.shape[:2] == size else letterbox(s, size) for s in samples[i : i + cfg.batch_size]]
        arr = np.stack([s.image for s in batch]).astype(np.float32)
        x = (torch.from_numpy(arr).permute(0, 3, 1, 2) - cfg.normalize_mean) / cfg.normalize_std
        out = model(x)
        scores_all = torch.sigmoid(out.logits).double().numpy()
        boxes_all = out.boxes.double().numpy()
        valid_all = out.valid.numpy()
        for b, s in enumerate(batch):
            v = valid_all[b]
            boxes, scores = postprocess(boxes_all[b][v], scores_all[b][v], cfg)
            for box, score in zip(_to_pixels(boxes, s), scores):
                if box[2] <= 0 or box[3] <= 0:
                    continue
                results.append(
                    {
                        "image_id": s.image_id,
                        "category_id": category_id,
                        "bbox": [float(c) for c in box],
                        "score": float(score),
                    }
                )
    return results
