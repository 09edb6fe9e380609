"""Center-heatmap targets, peak extraction and the heatmap focal loss.

Grid convention: cell ``(u, v)`` (column, row) covers the normalized square
whose center is ``((u + 0.5) / grid_w, (v + 0.5) / grid_h)``.
"""
from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

SIGMA_DIVISOR = 6.0
FOCAL_ALPHA = (0.25, 0.75)  # (positive, negative)
FOCAL_GAMMA = 1.5
FOCAL_BETA = 4.0


class Peak(NamedTuple):
    u: int
    v: int
    score: float


def gaussian_sigma(box: Sequence[float], grid_w: int, grid_h: int) -> float:
    """Gaussian radius in grid cells: ``max(1, min(w*grid_w, h*grid_h) / 6)``."""
    _, _, w, h = box
    return max(1.0, min(w * grid_w, h * grid_h) / SIGMA_DIVISOR)


def center_cell(box: Sequence[float], grid_w: int, grid_h: int) -> tuple[int, int]:
    """Nearest grid cell ``(u, v)`` to the box center."""
    mu_x = box[0] * grid_w - 0.5
    mu_y = box[1] * grid_h - 0.5
    u = min(max(int(math.floor(mu_x + 0.5)), 0), grid_w - 1)
    v = min(max(int(math.floor(mu_y + 0.5)), 0), grid_h - 1)
    return u, v


def render_target(
    gts: Sequence[Sequence[float]],
    grid_w: int,
    grid_h: int,
    dtype: torch.dtype = torch.float32,
) -> Tensor:
    """Render the ``(grid_h, grid_w)`` center-heatmap target.

    Each object contributes an isotropic Gaussian at its exact center; cells
    take the maximum over objects.  The cell nearest each center is pinned to
    exactly 1 so it counts as a positive in :func:`heatmap_focal_loss`.
    """
    target = np.zeros((grid_h, grid_w), dtype=np.float64)
    if len(gts):
        xs = np.arange(grid_w, dtype=np.float64)[None, :]
        ys = np.arange(grid_h, dtype=np.float64)[:, None]
        for box in gts:
            sigma = gaussian_sigma(box, grid_w, grid_h)
            mu_x = box[0] * grid_w - 0.5
            mu_y = box[1] * grid_h - 0.5
            g = np.exp(-((xs - mu_x) ** 2 + (ys - mu_y) ** 2) / (2 * sigma**2))
            np.maximum(target, g, out=target)
        for box in gts:
            u, v = center_cell(box, grid_w, grid_h)
            target[v, u] = 1.0
    return torch.as_tensor(target, dtype=dtype)


def local_max_mask(logits: Tensor) -> Tensor:
    """True where a cell equals the max of its in-bounds 3x3 neighborhood.

    Accepts ``(H, W)`` or ``(B, 1, H, W)``.
    """
    x = logits if logits.ndim == 4 else logits[None, None]
    pooled = F.max_pool2d(x, kernel_size=3, stride=1, padding=1)
    mask = x == pooled
    return mask if logits.ndim == 4 else mask[0, 0]


def topk_peaks(logits: Tensor, k: int) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Batched 3x3 pool-NMS + Top-K.

    Args:
        logits: ``(B, 1, H, W)`` heatmap logits.
        k: number of slots per image.

    Returns:
        ``(u, v, logit, valid)``, each ``(B, k)``.  Slots past the number of
        surviving local maxima are marked invalid and hold zeros.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    b, _, h, w = logits.shape
    with torch.no_grad():
        mask = local_max_mask(logits).view(b, -1)
        flat = logits.reshape(b, -1)
        masked = torch.where(mask, flat, torch.full_like(flat, -math.inf))
        # stable sort: ties keep row-major order
        order = torch.sort(masked, dim=1, descending=True, stable=True).indices
        n_keep = min(k, h * w)
        idx = order[:, :n_keep]
        valid = mask.gather(1, idx)
        vals = flat.gather(1, idx)
        if n_keep < k:
            pad = k - n_keep
            idx = F.pad(idx, (0, pad))
            valid = F.pad(valid, (0, pad), value=False)
            vals = F.pad(vals, (0, pad))
        idx = torch.where(valid, idx, torch.zeros_like(idx))
        vals = torch.where(valid, vals, torch.zeros_like(vals))
    return idx % w, idx // w, vals, valid


def pool_nms_topk(logits: Tensor, k: int) -> list[Peak]:
    """Local maxima of a single ``(H, W)`` heatmap, best ``k`` first."""
    u, v, vals, valid = topk_peaks(logits[None, None], k)
    n = int(valid.sum())
    scores = torch.sigmoid(vals[0, :n].double())
    return [Peak(int(u[0, i]), int(v[0, i]), float(scores[i])) for i in range(n)]


def heatmap_focal_loss(
    logits: Tensor,
    target: Tensor,
    alpha: tuple[float, float] = FOCAL_ALPHA,
    gamma: float = FOCAL_GAMMA,
    beta: float = FOCAL_BETA,
) -> Tensor:
    """Penalty-reduced focal loss for Gaussian heatmap targets.

    Cells whose target is exactly 1 are positives::

        alpha_pos * (1 - p)^gamma * -log(p)

    every other cell is a negative, down-weighted near object centers::

        alpha_neg * (1 - t)^beta * p^gamma * -log(1 - p)

    The sum is divided by ``max(1, #positives)``.  Leading batch dimensions are
    summed over, so callers wanting a per-image mean should loop or divide.
    """
    if logits.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(logits.shape)} vs {tuple(target.shape)}")
    alpha_pos, alpha_neg = alpha
    log_p = F.logsigmoid(logits)
    log_1mp = F.logsigmoid(-logits)
    p = torch.exp(log_p)
    pos = target == 1
    pos_term = alpha_pos * (1 - p) ** gamma * -log_p
    neg_term = alpha_neg * (1 - target) ** beta * p**gamma * -log_1mp
    loss = torch.where(pos, pos_term, neg_term).sum()
    return loss / max(1, int(pos.sum()))
