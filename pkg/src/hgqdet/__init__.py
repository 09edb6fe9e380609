"""Heatmap-seeded query transformer detector for small-object (cell) detection."""

from .geometry import BoxDelta, BoxN, BoxPx, Detection, ciou, center_distance, decode_box, iou, soft_nms
from .heatmap import Peak, gaussian_sigma, heatmap_focal_loss, pool_nms_topk, render_target
from .matching import CostMatrix, CostWeights, MatchAssignment, build_cost, hungarian_assign

__version__ = "0.1.0"

__all__ = [
    "BoxDelta",
    "BoxN",
    "BoxPx",
    "CostMatrix",
    "CostWeights",
    "Detection",
    "MatchAssignment",
    "Peak",
    "build_cost",
    "center_distance",
    "ciou",
    "decode_box",
    "gaussian_sigma",
    "heatmap_focal_loss",
    "hungarian_assign",
    "iou",
    "pool_nms_topk",
    "render_target",
    "soft_nms",
]
