"""COCO-style average precision over lenient IoU thresholds.

Matching, interpolation and area-range handling follow the COCO bbox protocol
(greedy score-ordered matching, 101 recall points, area ranges on GT area).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .common import GroundTruth, ImageDetections, Predictions, iou_xywh

IOU_THRESHOLDS = np.linspace(0.05, 0.50, 10)
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
AREA_RANGES = {
    "all": (0.0, 1e5**2),
    "small": (0.0, 32.0**2),
    "medium": (32.0**2, 96.0**2),
}


@dataclass
class _ImageEval:
    scores: np.ndarray  # (D,)
    matched: np.ndarray  # (T, D) bool
    ignored: np.ndarray  # (T, D) bool
    n_gt: int  # non-ignored ground truths


def _evaluate_image(det: ImageDetections, gt: np.ndarray, thresholds, area_rng, max_dets) -> _ImageEval | None:
    lo, hi = area_rng
    gt = gt.reshape(-1, 4)
    if len(gt) == 0 and len(det.scores) == 0:
        return None
    g_area = gt[:, 2] * gt[:, 3]
    g_ignore = (g_area < lo) | (g_area > hi)
    g_order = np.argsort(g_ignore, kind="mergesort")
    gt, g_ignore = gt[g_order], g_ignore[g_order]

    d_order = np.argsort(-det.scores, kind="mergesort")[:max_dets]
    boxes, scores = det.boxes[d_order], det.scores[d_order]
    ious = iou_xywh(boxes, gt)

    n_t, n_d, n_g = len(thresholds), len(scores), len(gt)
    matched = np.zeros((n_t, n_d), dtype=bool)
    ignored = np.zeros((n_t, n_d), dtype=bool)
    for ti, t in enumerate(thresholds):
        gt_taken = np.zeros(n_g, dtype=bool)
        for di in range(n_d):
            best_iou = min(t, 1 - 1e-10)
            m = -1
            for gi in range(n_g):
                if gt_taken[gi]:
                    continue
                # already holding a real GT; the rest are ignored ones
                if m > -1 and not g_ignore[m] and g_ignore[gi]:
                    break
                if ious[di, gi] < best_iou:
                    continue
                best_iou = ious[di, gi]
                m = gi
            if m == -1:
                continue
            ignored[ti, di] = g_ignore[m]
            matched[ti, di] = True
            gt_taken[m] = True
    d_area = boxes[:, 2] * boxes[:, 3]
    out_of_range = (d_area < lo) | (d_area > hi)
    ignored |= ~matched & out_of_range[None, :]
    return _ImageEval(scores, matched, ignored, int((~g_ignore).sum()))


def _accumulate(evals: list[_ImageEval], n_t: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-threshold (AP, recall); ``nan`` where no ground truth exists."""
    ap = np.full(n_t, np.nan)
    rec = np.full(n_t, np.nan)
    evals = [e for e in evals if e is not None]
    if not evals:
        return ap, rec
    n_gt = sum(e.n_gt for e in evals)
    if n_gt == 0:
        return ap, rec
    scores = np.concatenate([e.scores for e in evals])
    order = np.argsort(-scores, kind="mergesort")
    matched = np.concatenate([e.matched for e in evals], axis=1)[:, order]
    ignored = np.concatenate([e.ignored for e in evals], axis=1)[:, order]
    tps = matched & ~ignored
    fps = ~matched & ~ignored
    tp_sum = np.cumsum(tps, axis=1, dtype=np.float64)
    fp_sum = np.cumsum(fps, axis=1, dtype=np.float64)
    for ti in range(n_t):
        tp, fp = tp_sum[ti], fp_sum[ti]
        nd = len(tp)
        rc = tp / n_gt
        pr = tp / (fp + tp + np.spacing(1))
        rec[ti] = rc[-1] if nd else 0.0
        # precision envelope, right to left
        pr = np.maximum.accumulate(pr[::-1])[::-1] if nd else pr
        q = np.zeros(len(RECALL_POINTS))
        inds = np.searchsorted(rc, RECALL_POINTS, side="left")
        ok = inds < nd
        q[ok] = pr[inds[ok]]
        ap[ti] = q.mean()
    return ap, rec


def ap_sweep(
    preds: Predictions,
    gts: GroundTruth,
    iou_lo: float = 0.05,
    iou_hi: float = 0.50,
    step: float = 0.05,
    max_dets: int = 100,
) -> dict:
    """AP averaged over IoU thresholds ``iou_lo..iou_hi`` plus breakdowns.

    ``preds`` maps image id to :class:`ImageDetections`; ``gts`` maps image id
    to ``(M, 4)`` pixel ``[x, y, w, h]`` boxes.  Only images present in ``gts``
    are scored.  Values that are undefined (no ground truth in the relevant
    subset) are reported as ``None``.
    """
    n = int(round((iou_hi - iou_lo) / step)) + 1
    thresholds = np.linspace(iou_lo, iou_hi, n)
    report: dict = {"iou_thresholds": thresholds.tolist(), "max_dets": max_dets}
    for name, rng in AREA_RANGES.items():
        evals = [
            _evaluate_image(preds.get(iid, ImageDetections.empty()), np.asarray(g), thresholds, rng, max_dets)
            for iid, g in gts.items()
        ]
        ap, rec = _accumulate(evals, n)
        if name == "all":
            report["ap_per_threshold"] = [None if np.isnan(x) else float(x) for x in ap]
            report["ap_mean"] = None if np.all(np.isnan(ap)) else float(np.nanmean(ap))
            at50 = np.flatnonzero(np.isclose(thresholds, 0.5))
            report["ap_at_050"] = None if not at50.size or np.isnan(ap[at50[0]]) else float(ap[at50[0]])
            report["ar_mean"] = None if np.all(np.isnan(rec)) else float(np.nanmean(rec))
        else:
            report[f"ap_{name}"] = None if np.all(np.isnan(ap)) else float(np.nanmean(ap))
    return report
