"""Composite detection loss for heatmap-seeded queries."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor

from .geometry import ciou
from .heatmap import FOCAL_ALPHA, FOCAL_GAMMA, heatmap_focal_loss
from .matching import MatchAssignment


@dataclass(frozen=True)
class LossWeights:
    hm: float = 2.0
    cls: float = 1.0
    l1: float = 6.0
    iou: float = 2.0


@dataclass
class LossBreakdown:
    heatmap: Tensor
    cls: Tensor
    l1: Tensor
    iou: Tensor
    total: Tensor

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("heatmap", "cls", "l1", "iou", "total")}

    @staticmethod
    def mean(items: list["LossBreakdown"]) -> "LossBreakdown":
        return LossBreakdown(
            *(torch.stack([getattr(b, k) for b in items]).mean() for k in ("heatmap", "cls", "l1", "iou", "total"))
        )


def sigmoid_focal_loss(
    logits: Tensor,
    targets: Tensor,
    alpha: tuple[float, float] = FOCAL_ALPHA,
    gamma: float = FOCAL_GAMMA,
) -> Tensor:
    """Elementwise binary focal loss on logits (no reduction).

    ``alpha = (positive weight, negative weight)``.
    """
    p = torch.sigmoid(logits)
    ce = F.binary_cross_entropy_with_logits(logits, targets, reduction="none")
    p_t = p * targets + (1 - p) * (1 - targets)
    a_t = alpha[0] * targets + alpha[1] * (1 - targets)
    return a_t * (1 - p_t) ** gamma * ce


def query_focal_loss(
    logits: Tensor,
    valid: Tensor,
    matched: Tensor,
    alpha: tuple[float, float] = FOCAL_ALPHA,
    gamma: float = FOCAL_GAMMA,
) -> Tensor:
    """Focal classification over valid queries, averaged by valid-query count."""
    targets = matched.to(logits.dtype)
    per_query = sigmoid_focal_loss(logits, targets, alpha, gamma)
    per_query = torch.where(valid, per_query, torch.zeros_like(per_query))
    return per_query.sum() / max(1, int(valid.sum()))


def l1_box_loss(pred: Tensor, gt: Tensor) -> Tensor:
    """Mean over pairs of the summed absolute coordinate error."""
    if pred.shape[0] == 0:
        return pred.sum() * 0
    return (pred - gt).abs().sum(-1).mean()


def ciou_box_loss(pred: Tensor, gt: Tensor) -> Tensor:
    """Mean of ``1 - CIoU`` over pairs."""
    if pred.shape[0] == 0:
        return pred.sum() * 0
    return (1 - ciou(pred, gt)).mean()


def total_loss(
    logits: Tensor,
    boxes: Tensor,
    valid: Tensor,
    gts: Tensor,
    assignment: MatchAssignment,
    heatmap_logits: Tensor,
    heatmap_target: Tensor,
    weights: LossWeights = LossWeights(),
    alpha: tuple[float, float] = FOCAL_ALPHA,
    gamma: float = FOCAL_GAMMA,
) -> LossBreakdown:
    """Loss for one image.

    Matched queries are classification positives, all other valid queries
    negatives; padded slots are ignored.  Box terms average over matched pairs
    and are zero for images without ground truth.  The assignment is treated
    as a constant.
    """
    q = torch.as_tensor(assignment.query_indices, dtype=torch.long, device=logits.device)
    g = torch.as_tensor(assignment.gt_indices, dtype=torch.long, device=logits.device)
    matched = torch.zeros_like(valid)
    matched[q] = True

    hm = heatmap_focal_loss(heatmap_logits, heatmap_target, alpha, gamma)
    cls = query_focal_loss(logits, valid, matched, alpha, gamma)
    pb, gb = boxes[q], gts.to(boxes.dtype)[g]
    l1 = l1_box_loss(pb, gb)
    iou = ciou_box_loss(pb, gb)
    total = weights.hm * hm + weights.cls * cls + weights.l1 * l1 + weights.iou * iou
    return LossBreakdown(heatmap=hm, cls=cls, l1=l1, iou=iou, total=total)
