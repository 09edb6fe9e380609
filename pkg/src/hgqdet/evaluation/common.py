from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from typing import Hashable

import numpy as np


@dataclass
class ImageDetections:
    """Pixel ``[x, y, w, h]`` boxes with scores for one image."""

    boxes: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if len(self.boxes) != len(self.scores):
            raise ValueError("boxes and scores differ in length")

    @classmethod
    def empty(cls) -> "ImageDetections":
        return cls(np.zeros((0, 4)), np.zeros(0))


Predictions = Mapping[Hashable, ImageDetections]
GroundTruth = Mapping[Hashable, np.ndarray]


class JoinError(ValueError):
    """Prediction and ground-truth image ids do not line up."""


def gts_from_coco(data: dict) -> dict[Hashable, np.ndarray]:
    out: dict[Hashable, list] = {im["id"]: [] for im in data["images"]}
    for ann in data["annotations"]:
        if ann["image_id"] not in out:
            raise JoinError(f"annotation {ann.get('id')} refers to unknown image {ann['image_id']}")
        if ann["bbox"][2] > 0 and ann["bbox"][3] > 0:
            out[ann["image_id"]].append(ann["bbox"])
    return {k: np.asarray(v, dtype=np.float64).reshape(-1, 4) for k, v in out.items()}


def preds_from_results(results: Iterable[dict], image_ids: Iterable[Hashable] = ()) -> dict[Hashable, ImageDetections]:
    """Group COCO detection-result records by image.

    Every id in ``image_ids`` gets an entry, empty if it has no detections.
    """
    grouped: dict[Hashable, tuple[list, list]] = {i: ([], []) for i in image_ids}
    for r in results:
        boxes, scores = grouped.setdefault(r["image_id"], ([], []))
        boxes.append(r["bbox"])
        scores.append(r["score"])
    return {k: ImageDetections(b, s) for k, (b, s) in grouped.items()}


def check_join(preds: Predictions, gts: GroundTruth) -> None:
    orphans = sorted((set(preds) - set(gts)), key=str)
    if orphans:
        shown = ", ".join(map(str, orphans[:20]))
        more = f" (+{len(orphans) - 20} more)" if len(orphans) > 20 else ""
        raise JoinError(f"{len(orphans)} prediction image id(s) missing from ground truth: {shown}{more}")


def iou_xywh(dets: np.ndarray, gts: np.ndarray) -> np.ndarray:
    """Pairwise IoU ``(D, G)`` of pixel ``[x, y, w, h]`` boxes."""
    d = dets.reshape(-1, 4)[:, None, :]
    g = gts.reshape(-1, 4)[None, :, :]
    iw = np.minimum(d[..., 0] + d[..., 2], g[..., 0] + g[..., 2]) - np.maximum(d[..., 0], g[..., 0])
    ih = np.minimum(d[..., 1] + d[..., 3], g[..., 1] + g[..., 3]) - np.maximum(d[..., 1], g[..., 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = d[..., 2] * d[..., 3] + g[..., 2] * g[..., 3] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)
