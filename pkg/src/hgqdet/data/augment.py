"""Training augmentation and letterboxing; boxes follow every geometric change."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

from .sample import Sample, clip_normalized


@dataclass(frozen=True)
class AugmentationConfig:
    flip_h: float = 0.5
    flip_v: float = 0.5
    blur_sigma_range: tuple[float, float] = (0.0, 1.0)
    gamma_range: tuple[float, float] = (0.8, 1.25)
    scale_range: tuple[float, float] = (0.9, 1.1)

    def __post_init__(self):
        for name in ("flip_h", "flip_v"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be a probability, got {p}")
        for name in ("blur_sigma_range", "gamma_range", "scale_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be ordered, got {(lo, hi)}")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.blur_sigma_range[0] < 0 or self.gamma_range[0] <= 0 or self.scale_range[0] <= 0:
            raise ValueError("blur sigma must be >= 0, gamma and scale > 0")

    @classmethod
    def identity(cls) -> "AugmentationConfig":
        return cls(0.0, 0.0, (0.0, 0.0), (1.0, 1.0), (1.0, 1.0))


def hflip(s: Sample) -> Sample:
    g = s.gts.copy()
    g[:, 0] = 1.0 - g[:, 0]
    return s.with_(image=s.image[:, ::-1].copy(), gts=g)


def vflip(s: Sample) -> Sample:
    g = s.gts.copy()
    g[:, 1] = 1.0 - g[:, 1]
    return s.with_(image=s.image[::-1].copy(), gts=g)


def gaussian_blur(s: Sample, sigma: float) -> Sample:
    if sigma <= 0:
        return s
    img = ndimage.gaussian_filter(s.image, sigma=(sigma, sigma, 0), mode="reflect")
    return s.with_(image=img.astype(np.float32))


def adjust_gamma(s: Sample, gamma: float) -> Sample:
    if gamma == 1.0:
        return s
    return s.with_(image=np.clip(s.image, 0, 1).astype(np.float32) ** np.float32(gamma))


def rescale(s: Sample, factor: float) -> Sample:
    """Zoom about the image center by ``factor``, keeping the canvas size.

    Boxes scale about the center and are clipped; boxes pushed completely out
    of frame are dropped.  Uncovered canvas is filled with the median color.
    """
    if factor == 1.0:
        return s
    h, w = s.image.shape[:2]
    # output pixel center (i + 0.5) maps to input (i + 0.5 - c) / f + c
    out = np.empty_like(s.image)
    for ch in range(s.image.shape[2]):
        plane = s.image[..., ch]
        offset = [(0.5 - h / 2) / factor + h / 2 - 0.5, (0.5 - w / 2) / factor + w / 2 - 0.5]
        out[..., ch] = ndimage.affine_transform(
            plane, np.diag([1 / factor, 1 / factor]), offset=offset, order=1, mode="constant",
            cval=float(np.median(plane)),
        )
    g = s.gts.copy()
    g[:, 0] = (g[:, 0] - 0.5) * factor + 0.5
    g[:, 1] = (g[:, 1] - 0.5) * factor + 0.5
    g[:, 2:] *= factor
    return s.with_(image=out, gts=clip_normalized(g))


def augment(s: Sample, cfg: AugmentationConfig, rng: np.random.Generator) -> Sample:
    """Random flips, blur, gamma and scaling with a caller-owned generator."""
    # draw every variate unconditionally so the stream does not depend on outcomes
    u_h, u_v = rng.random(), rng.random()
    sigma = rng.uniform(*cfg.blur_sigma_range)
    gamma = np.exp(rng.uniform(np.log(cfg.gamma_range[0]), np.log(cfg.gamma_range[1])))
    factor = rng.uniform(*cfg.scale_range)
    if u_h < cfg.flip_h:
        s = hflip(s)
    if u_v < cfg.flip_v:
        s = vflip(s)
    s = rescale(s, float(factor))
    s = gaussian_blur(s, float(sigma))
    return adjust_gamma(s, float(gamma))


def letterbox(s: Sample, size: tuple[int, int]) -> Sample:
    """Fit the image into ``size = (H, W)`` without warping.

    Images larger than the target are downscaled uniformly; the remainder is
    padded on the bottom/right with zeros.  ``meta['letterbox']`` records the
    scale and original size needed to map predictions back.
    """
    th, tw = size
    h, w = s.image.shape[:2]
    scale = min(th / h, tw / w, 1.0)
    img = s.image
    nh, nw = h, w
    if scale < 1.0:
        nh, nw = max(1, round(h * scale)), max(1, round(w * scale))
        pil = Image.fromarray(np.clip(np.rint(img * 255), 0, 255).astype(np.uint8))
        img = np.asarray(pil.resize((nw, nh), Image.BILINEAR), dtype=np.float32) / 255.0
    canvas = np.zeros((th, tw, 3), dtype=np.float32)
    canvas[:nh, :nw] = img
    g = s.gts.copy()
    sx, sy = nw / tw, nh / th
    g[:, 0] *= sx
    g[:, 2] *= sx
    g[:, 1] *= sy
    g[:, 3] *= sy
    meta = dict(s.meta)
    meta["letterbox"] = {"scale_x": nw / w, "scale_y": nh / h, "orig_w": w, "orig_h": h}
    return s.with_(image=canvas, gts=g, meta=meta)
