"""Box arithmetic on normalized (cx, cy, w, h) boxes.

Everything here works on torch tensors shaped ``(..., 4)`` and broadcasts like
ordinary elementwise ops, so the same functions serve the matcher, the losses
(autograd flows through IoU/CIoU) and inference.  Plain sequences and numpy
arrays are accepted too; they are promoted to float64 and the result comes back
as a python float (scalar inputs) or a numpy array.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Any, Hashable, NamedTuple, Sequence

import numpy as np
import torch
from torch import Tensor

DEFAULT_S_DELTA = 0.3
DEFAULT_W0 = 0.08
DEFAULT_H0 = 0.08
MIN_SIZE = 1e-6


class BoxN(NamedTuple):
    """Normalized box; all components in [0, 1] and ``w, h > 0``."""

    cx: float
    cy: float
    w: float
    h: float

    def is_valid(self) -> bool:
        vals = (self.cx, self.cy, self.w, self.h)
        return (
            all(math.isfinite(v) for v in vals)
            and 0.0 <= self.cx <= 1.0
            and 0.0 <= self.cy <= 1.0
            and 0.0 < self.w <= 1.0
            and 0.0 < self.h <= 1.0
        )

    def to_pixels(self, width: float, height: float) -> "BoxPx":
        return BoxPx(
            (self.cx - self.w / 2) * width,
            (self.cy - self.h / 2) * height,
            (self.cx + self.w / 2) * width,
            (self.cy + self.h / 2) * height,
        )


class BoxPx(NamedTuple):
    """Pixel-space corner box ``(x0, y0, x1, y1)``."""

    x0: float
    y0: float
    x1: float
    y1: float

    def clamp(self, width: float, height: float) -> "BoxPx":
        return BoxPx(
            min(max(self.x0, 0.0), width),
            min(max(self.y0, 0.0), height),
            min(max(self.x1, 0.0), width),
            min(max(self.y1, 0.0), height),
        )

    def to_xywh(self) -> list[float]:
        return [self.x0, self.y0, self.x1 - self.x0, self.y1 - self.y0]

    def to_normalized(self, width: float, height: float) -> BoxN:
        w = (self.x1 - self.x0) / width
        h = (self.y1 - self.y0) / height
        return BoxN(self.x0 / width + w / 2, self.y0 / height + h / 2, w, h)


class BoxDelta(NamedTuple):
    dx: float
    dy: float
    dlogw: float
    dlogh: float


@dataclass
class Detection:
    box: Any  # BoxN, BoxPx or any 4-sequence in the caller's convention
    score: float
    image_id: Hashable = None
    extra: dict = field(default_factory=dict)


def _tensor_api(fn):
    """Let ``fn`` take array-likes; non-tensor inputs get float64 tensors and
    the output is converted back to float / ndarray."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        if any(isinstance(a, Tensor) for a in args):
            return fn(*args, **kwargs)
        targs = [torch.as_tensor(np.asarray(a, dtype=np.float64)) for a in args]
        out = fn(*targs, **kwargs)
        if out.ndim == 0:
            return float(out)
        return out.numpy()

    return wrapper


def cxcywh_to_xyxy(boxes: Tensor) -> Tensor:
    cx, cy, w, h = boxes.unbind(-1)
    return torch.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], dim=-1)


def xyxy_to_cxcywh(boxes: Tensor) -> Tensor:
    x0, y0, x1, y1 = boxes.unbind(-1)
    return torch.stack([(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0], dim=-1)


def _iou_parts(a: Tensor, b: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    ax0, ay0, ax1, ay1 = cxcywh_to_xyxy(a).unbind(-1)
    bx0, by0, bx1, by1 = cxcywh_to_xyxy(b).unbind(-1)
    iw = (torch.minimum(ax1, bx1) - torch.maximum(ax0, bx0)).clamp(min=0)
    ih = (torch.minimum(ay1, by1) - torch.maximum(ay0, by0)).clamp(min=0)
    inter = iw * ih
    # areas from the same corners as the intersection so identical boxes give IoU == 1 exactly
    area_a = (ax1 - ax0).clamp(min=0) * (ay1 - ay0).clamp(min=0)
    area_b = (bx1 - bx0).clamp(min=0) * (by1 - by0).clamp(min=0)
    union = area_a + area_b - inter
    positive = union > 0
    safe_union = torch.where(positive, union, torch.ones_like(union))
    iou = torch.where(positive, inter / safe_union, torch.zeros_like(union))
    enclose_w = torch.maximum(ax1, bx1) - torch.minimum(ax0, bx0)
    enclose_h = torch.maximum(ay1, by1) - torch.minimum(ay0, by0)
    return iou, inter, enclose_w, enclose_h


@_tensor_api
def iou(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise IoU of broadcastable box tensors.  Zero-area boxes give 0."""
    return _iou_parts(a, b)[0]


@_tensor_api
def ciou(a: Tensor, b: Tensor) -> Tensor:
    """Complete IoU: ``IoU - rho^2/c^2 - alpha*v`` (elementwise, differentiable).

    ``rho`` is the center distance, ``c`` the diagonal of the smallest
    enclosing box and ``v`` the aspect-ratio discrepancy with its trade-off
    weight ``alpha = v / ((1 - IoU) + v)``.  Identical boxes give exactly 1,
    degenerate ones included.
    """
    iou_, _, ew, eh = _iou_parts(a, b)
    c2 = ew**2 + eh**2
    rho2 = (a[..., 0] - b[..., 0]) ** 2 + (a[..., 1] - b[..., 1]) ** 2
    has_diag = c2 > 0
    safe_c2 = torch.where(has_diag, c2, torch.ones_like(c2))
    dist_term = torch.where(has_diag, rho2 / safe_c2, torch.zeros_like(c2))

    eps = torch.finfo(a.dtype).tiny
    atan_a = torch.atan(a[..., 2] / a[..., 3].clamp(min=eps))
    atan_b = torch.atan(b[..., 2] / b[..., 3].clamp(min=eps))
    v = (4 / math.pi**2) * (atan_a - atan_b) ** 2
    denom = (1 - iou_) + v
    has_denom = denom > 0
    safe_denom = torch.where(has_denom, denom, torch.ones_like(denom))
    alpha = torch.where(has_denom, v / safe_denom, torch.zeros_like(denom))

    out = iou_ - dist_term - alpha * v
    identical = ~has_diag
    return torch.where(identical, torch.ones_like(out), out)


@_tensor_api
def center_distance(a: Tensor, b: Tensor) -> Tensor:
    """Euclidean distance between box centers in normalized coordinates."""
    return torch.hypot(a[..., 0] - b[..., 0], a[..., 1] - b[..., 1])


def pairwise(fn, a: Tensor, b: Tensor) -> Tensor:
    """Evaluate an elementwise box function on every ``(a_i, b_j)`` pair."""
    return fn(a[:, None, :], b[None, :, :])


def clamp_boxes(boxes: Tensor) -> Tensor:
    """Clip corners into the unit square and rebuild (cx, cy, w, h).

    A box lying entirely outside keeps a sliver of ``MIN_SIZE`` on the nearest
    border so the result is always a valid BoxN.
    """
    cx, cy, w, h = boxes.unbind(-1)
    cx, w = _clamp_axis(cx, w)
    cy, h = _clamp_axis(cy, h)
    return torch.stack([cx, cy, w, h], dim=-1)


def _clamp_axis(c: Tensor, s: Tensor) -> tuple[Tensor, Tensor]:
    lo, hi = c - s / 2, c + s / 2
    # untouched boxes keep their exact center/size (no round trip through corners)
    inside = (lo >= 0) & (hi <= 1) & (s >= MIN_SIZE)
    lo_c = lo.clamp(0.0, 1.0 - MIN_SIZE)
    hi_c = torch.maximum(hi.clamp(MIN_SIZE, 1.0), lo_c + MIN_SIZE)
    return (
        torch.where(inside, c, (lo_c + hi_c) / 2),
        torch.where(inside, s, hi_c - lo_c),
    )


# exp() overflows float32 well before this; anything past it is a full-image box anyway
_MAX_LOG_SCALE = 20.0


def decode_raw(
    anchors: Tensor,
    deltas: Tensor,
    s_delta: float = DEFAULT_S_DELTA,
    w0: float = DEFAULT_W0,
    h0: float = DEFAULT_H0,
) -> Tensor:
    """Anchor-relative decode without clamping."""
    cx = anchors[..., 0] + s_delta * torch.tanh(deltas[..., 0])
    cy = anchors[..., 1] + s_delta * torch.tanh(deltas[..., 1])
    w = w0 * torch.exp(deltas[..., 2].clamp(-_MAX_LOG_SCALE, _MAX_LOG_SCALE))
    h = h0 * torch.exp(deltas[..., 3].clamp(-_MAX_LOG_SCALE, _MAX_LOG_SCALE))
    return torch.stack([cx, cy, w, h], dim=-1)


@_tensor_api
def decode_box(
    anchors: Tensor,
    deltas: Tensor,
    s_delta: float = DEFAULT_S_DELTA,
    w0: float = DEFAULT_W0,
    h0: float = DEFAULT_H0,
) -> Tensor:
    """Decode ``(dx, dy, dlogw, dlogh)`` offsets around normalized anchors.

    The center moves at most ``s_delta`` along each axis (tanh-bounded), the
    size scales the default ``(w0, h0)`` exponentially, and the result is
    clipped to the image with :func:`clamp_boxes`.
    """
    return clamp_boxes(decode_raw(anchors, deltas, s_delta, w0, h0))


def encode_box(
    anchors: Tensor,
    boxes: Tensor,
    s_delta: float = DEFAULT_S_DELTA,
    w0: float = DEFAULT_W0,
    h0: float = DEFAULT_H0,
) -> Tensor:
    """Inverse of :func:`decode_raw`; center offsets must lie within ``s_delta``."""
    ratio_x = ((boxes[..., 0] - anchors[..., 0]) / s_delta).clamp(-1 + 1e-7, 1 - 1e-7)
    ratio_y = ((boxes[..., 1] - anchors[..., 1]) / s_delta).clamp(-1 + 1e-7, 1 - 1e-7)
    return torch.stack(
        [
            torch.atanh(ratio_x),
            torch.atanh(ratio_y),
            torch.log(boxes[..., 2] / w0),
            torch.log(boxes[..., 3] / h0),
        ],
        dim=-1,
    )


def soft_nms_arrays(
    boxes: np.ndarray,
    scores: np.ndarray,
    sigma: float = 0.5,
    iou_threshold: float = 0.5,
    score_floor: float = 0.05,
    box_format: str = "cxcywh",
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian Soft-NMS over arrays.

    Repeatedly takes the highest remaining score and multiplies the score of
    every remaining box whose IoU with it is ``>= iou_threshold`` by
    ``exp(-IoU^2 / sigma)``.  Boxes that fall below ``score_floor`` are dropped.

    Returns ``(indices, new_scores)`` sorted by descending new score.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1).copy()
    if box_format == "cxcywh":
        xyxy = cxcywh_to_xyxy(torch.from_numpy(boxes)).numpy()
    elif box_format == "xyxy":
        xyxy = boxes
    else:
        raise ValueError(f"unknown box_format {box_format!r}")
    areas = np.clip(xyxy[:, 2] - xyxy[:, 0], 0, None) * np.clip(xyxy[:, 3] - xyxy[:, 1], 0, None)

    remaining = np.flatnonzero(scores >= score_floor)
    keep: list[int] = []
    while remaining.size:
        # ties resolved by lowest index for determinism
        best_pos = int(np.argmax(scores[remaining]))
        best = int(remaining[best_pos])
        keep.append(best)
        remaining = np.delete(remaining, best_pos)
        if not remaining.size:
            break
        iw = np.minimum(xyxy[remaining, 2], xyxy[best, 2]) - np.maximum(xyxy[remaining, 0], xyxy[best, 0])
        ih = np.minimum(xyxy[remaining, 3], xyxy[best, 3]) - np.maximum(xyxy[remaining, 1], xyxy[best, 1])
        inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
        union = areas[remaining] + areas[best] - inter
        ov = np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)
        hit = ov >= iou_threshold
        scores[remaining[hit]] *= np.exp(-(ov[hit] ** 2) / sigma)
        remaining = remaining[scores[remaining] >= score_floor]

    idx = np.asarray(keep, dtype=np.int64)
    new_scores = scores[idx]
    order = np.argsort(-new_scores, kind="stable")
    return idx[order], new_scores[order]


def soft_nms(
    dets: Sequence[Detection],
    iou_sigma: float = 0.5,
    score_floor: float = 0.05,
    iou_threshold: float = 0.5,
    box_format: str = "cxcywh",
) -> list[Detection]:
    """Soft-NMS on :class:`Detection` objects (single class).

    Returns new Detection objects with decayed scores, highest first.
    """
    if not dets:
        return []
    boxes = np.array([list(d.box) for d in dets], dtype=np.float64)
    scores = np.array([d.score for d in dets], dtype=np.float64)
    idx, new_scores = soft_nms_arrays(
        boxes, scores, sigma=iou_sigma, iou_threshold=iou_threshold,
        score_floor=score_floor, box_format=box_format,
    )
    return [
        Detection(box=dets[i].box, score=float(s), image_id=dets[i].image_id, extra=dict(dets[i].extra))
        for i, s in zip(idx, new_scores)
    ]
