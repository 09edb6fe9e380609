"""FROC with the center-in-box hit rule and image-level bootstrap bands."""
from __future__ import annotations

from collections.abc import Hashable
from dataclasses import dataclass

import numpy as np

from .common import GroundTruth, ImageDetections, Predictions

FROC_THRESHOLDS = np.round(np.linspace(0.95, 0.05, 19), 10)


@dataclass
class FrocCurve:
    thresholds: np.ndarray
    fppi: np.ndarray
    sensitivity: np.ndarray  # nan where no ground truth exists

    def to_dict(self) -> dict:
        return {
            "thresholds": self.thresholds.tolist(),
            "fppi": self.fppi.tolist(),
            "sensitivity": [None if np.isnan(s) else float(s) for s in self.sensitivity],
        }


@dataclass
class BootstrapBand:
    thresholds: np.ndarray
    fppi_mean: np.ndarray
    fppi_lower: np.ndarray
    fppi_upper: np.ndarray
    sens_mean: np.ndarray
    sens_lower: np.ndarray
    sens_upper: np.ndarray
    n_resamples: int
    seed: int

    def to_dict(self) -> dict:
        def _l(a):
            return [None if np.isnan(x) else float(x) for x in a]

        return {
            "thresholds": self.thresholds.tolist(),
            "B": self.n_resamples,
            "seed": self.seed,
            "fppi": {"mean": _l(self.fppi_mean), "lower": _l(self.fppi_lower), "upper": _l(self.fppi_upper)},
            "sensitivity": {"mean": _l(self.sens_mean), "lower": _l(self.sens_lower), "upper": _l(self.sens_upper)},
        }


def match_center_in_box(det: ImageDetections, gt: np.ndarray) -> np.ndarray:
    """Greedy one-to-one center-in-box matching.

    Detections are visited by descending score (stable); each takes the
    unconsumed ground truth of smallest area whose closed box contains its
    center.  Returns a boolean hit flag per detection in visiting order, so
    ``cumsum`` gives hit counts for every score cut-off.
    """
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 4)
    order = np.argsort(-det.scores, kind="stable")
    boxes = det.boxes[order]
    cx = boxes[:, 0] + boxes[:, 2] / 2
    cy = boxes[:, 1] + boxes[:, 3] / 2
    inside = (
        (cx[:, None] >= gt[None, :, 0])
        & (cx[:, None] <= gt[None, :, 0] + gt[None, :, 2])
        & (cy[:, None] >= gt[None, :, 1])
        & (cy[:, None] <= gt[None, :, 1] + gt[None, :, 3])
    )
    area = gt[:, 2] * gt[:, 3]
    gt_rank = np.argsort(area, kind="stable")
    consumed = np.zeros(len(gt), dtype=bool)
    hits = np.zeros(len(boxes), dtype=bool)
    for i in range(len(boxes)):
        for g in gt_rank:
            if inside[i, g] and not consumed[g]:
                consumed[g] = True
                hits[i] = True
                break
    assert consumed.sum() == hits.sum() <= len(gt)
    return hits


def froc_counts(
    preds: Predictions, gts: GroundTruth, thresholds: np.ndarray = FROC_THRESHOLDS
) -> tuple[list[Hashable], np.ndarray, np.ndarray, np.ndarray]:
    """Per-image ``(ids, hits[n, T], kept[n, T], n_gt[n])``."""
    ids = list(gts)
    hits = np.zeros((len(ids), len(thresholds)), dtype=np.int64)
    kept = np.zeros_like(hits)
    n_gt = np.zeros(len(ids), dtype=np.int64)
    for k, iid in enumerate(ids):
        det = preds.get(iid, ImageDetections.empty())
        flags = match_center_in_box(det, gts[iid])
        cum = np.concatenate([[0], np.cumsum(flags)])
        sorted_scores = np.sort(det.scores)[::-1]
        # kept set at threshold t is the prefix of the score-sorted list
        n_kept = np.array([(sorted_scores >= t).sum() for t in thresholds], dtype=np.int64)
        kept[k] = n_kept
        hits[k] = cum[n_kept]
        n_gt[k] = len(np.asarray(gts[iid]).reshape(-1, 4))
    return ids, hits, kept, n_gt


def _curve_from_counts(hits, kept, n_gt, n_images, thresholds) -> FrocCurve:
    total_hits = hits.sum(axis=0).astype(np.float64)
    total_gt = n_gt.sum()
    fppi = (kept.sum(axis=0) - total_hits) / n_images
    sens = total_hits / total_gt if total_gt else np.full(len(thresholds), np.nan)
    return FrocCurve(np.asarray(thresholds, dtype=np.float64), fppi, sens)


def froc_curve(preds: Predictions, gts: GroundTruth, thresholds: np.ndarray = FROC_THRESHOLDS) -> FrocCurve:
    """Sensitivity and false positives per image at each score threshold.

    Detections with ``score >= t`` are kept; a kept detection is a hit when its
    center lies inside a not-yet-matched ground-truth box of the same image.
    Images without ground truth still count towards FPPI.
    """
    if len(gts) == 0:
        raise ValueError("FROC needs at least one image")
    _, hits, kept, n_gt = froc_counts(preds, gts, thresholds)
    return _curve_from_counts(hits, kept, n_gt, len(gts), thresholds)


def bootstrap_froc(
    preds: Predictions,
    gts: GroundTruth,
    B: int = 200,
    seed: int = 0,
    thresholds: np.ndarray = FROC_THRESHOLDS,
    level: float = 0.95,
) -> BootstrapBand:
    """Percentile bootstrap band over images.

    Resample ``b`` draws images with replacement using
    ``np.random.default_rng(seed + b)``, so any resample can be reproduced on
    its own.  Mean and ``(1 - level)/2`` percentiles are taken per threshold.
    """
    if len(gts) == 0:
        raise ValueError("bootstrap needs at least one image")
    _, hits, kept, n_gt = froc_counts(preds, gts, thresholds)
    n = len(n_gt)
    fppi = np.empty((B, len(thresholds)))
    sens = np.empty((B, len(thresholds)))
    for b in range(B):
        idx = resample_indices(n, seed + b)
        c = _curve_from_counts(hits[idx], kept[idx], n_gt[idx], n, thresholds)
        fppi[b], sens[b] = c.fppi, c.sensitivity
    q = [50 * (1 - level), 100 - 50 * (1 - level)]

    def _stats(a):
        if np.all(np.isnan(a)):
            nan = np.full(a.shape[1], np.nan)
            return nan, nan, nan
        lo, hi = np.nanpercentile(a, q, axis=0)
        return np.nanmean(a, axis=0), lo, hi

    fm, fl, fu = _stats(fppi)
    sm, sl, su = _stats(sens)
    return BootstrapBand(np.asarray(thresholds, dtype=np.float64), fm, fl, fu, sm, sl, su, B, seed)


def resample_indices(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, n, size=n)
