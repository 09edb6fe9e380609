from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Hashable

import numpy as np

STAIN_TAGS = ("ALDH1L1", "GFAP", "synthetic")


@dataclass(frozen=True)
class Sample:
    """One image with its normalized ``(cx, cy, w, h)`` ground-truth boxes.

    ``image`` is ``H x W x 3`` float32 in [0, 1]; ``gts`` is ``(M, 4)`` float64.
    """

    image: np.ndarray
    gts: np.ndarray
    image_id: Hashable
    stain_tag: str = "synthetic"
    file_name: str | None = None
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]

    def with_(self, **changes) -> "Sample":
        return replace(self, **changes)

    def gts_pixels_xywh(self) -> np.ndarray:
        """Boxes as COCO ``[x, y, w, h]`` pixels."""
        g = self.gts.reshape(-1, 4)
        return np.stack(
            [
                (g[:, 0] - g[:, 2] / 2) * self.width,
                (g[:, 1] - g[:, 3] / 2) * self.height,
                g[:, 2] * self.width,
                g[:, 3] * self.height,
            ],
            axis=1,
        )


def valid_boxes(gts: np.ndarray) -> np.ndarray:
    """Row mask of boxes satisfying the BoxN invariants."""
    g = np.asarray(gts, dtype=np.float64).reshape(-1, 4)
    finite = np.all(np.isfinite(g), axis=1)
    return (
        finite
        & (g[:, 0] >= 0) & (g[:, 0] <= 1)
        & (g[:, 1] >= 0) & (g[:, 1] <= 1)
        & (g[:, 2] > 0) & (g[:, 2] <= 1)
        & (g[:, 3] > 0) & (g[:, 3] <= 1)
    )


def xywh_to_normalized(xywh: np.ndarray, width: float, height: float) -> np.ndarray:
    b = np.asarray(xywh, dtype=np.float64).reshape(-1, 4)
    return np.stack(
        [(b[:, 0] + b[:, 2] / 2) / width, (b[:, 1] + b[:, 3] / 2) / height, b[:, 2] / width, b[:, 3] / height],
        axis=1,
    )


def clip_normalized(gts: np.ndarray, min_size: float = 1e-6) -> np.ndarray:
    """Clip boxes to the unit square; boxes left with no area are removed."""
    g = np.asarray(gts, dtype=np.float64).reshape(-1, 4)
    x0 = np.clip(g[:, 0] - g[:, 2] / 2, 0, 1)
    x1 = np.clip(g[:, 0] + g[:, 2] / 2, 0, 1)
    y0 = np.clip(g[:, 1] - g[:, 3] / 2, 0, 1)
    y1 = np.clip(g[:, 1] + g[:, 3] / 2, 0, 1)
    keep = (x1 - x0 > min_size) & (y1 - y0 > min_size)
    out = np.stack([(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0], axis=1)
    inside = valid_boxes(g) & (g[:, 0] - g[:, 2] / 2 >= 0) & (g[:, 0] + g[:, 2] / 2 <= 1)
    inside &= (g[:, 1] - g[:, 3] / 2 >= 0) & (g[:, 1] + g[:, 3] / 2 <= 1)
    out[inside] = g[inside]
    return out[keep]
