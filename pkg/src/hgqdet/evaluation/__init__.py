from .ap import AREA_RANGES, IOU_THRESHOLDS, ap_sweep
from .common import ImageDetections, JoinError, check_join, gts_from_coco, iou_xywh, preds_from_results
from .froc import FROC_THRESHOLDS, BootstrapBand, FrocCurve, bootstrap_froc, froc_counts, froc_curve

__all__ = [
    "AREA_RANGES",
    "BootstrapBand",
    "FROC_THRESHOLDS",
    "FrocCurve",
    "IOU_THRESHOLDS",
    "ImageDetections",
    "JoinError",
    "ap_sweep",
    "bootstrap_froc",
    "check_join",
    "froc_counts",
    "froc_curve",
    "gts_from_coco",
    "iou_xywh",
    "preds_from_results",
]
