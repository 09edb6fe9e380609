"""Seeded synthetic stand-in for stained astrocyte patches.

Each cell is a soft elliptical soma with a few thin radial processes, drawn as
stain absorbance over a textured light background.  The ground truth is the
tight bounding box of the soma ellipse.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .sample import Sample

BACKGROUND_RGB = np.array([0.93, 0.89, 0.86], dtype=np.float32)
STAIN_RGB = np.array([0.42, 0.27, 0.17], dtype=np.float32)


@dataclass(frozen=True)
class SynthSpec:
    n_images: int = 20
    image_size: int = 128
    cells_per_image: tuple[int, int] = (3, 6)
    soma_radius: tuple[float, float] = (5.0, 9.0)
    branches: tuple[int, int] = (3, 6)
    noise: float = 0.03
    seed: int = 0
    stain_tag: str = "synthetic"
    first_id: int = 1

    def __post_init__(self):
        if self.n_images < 0 or self.image_size < 16:
            raise ValueError("n_images must be >= 0 and image_size >= 16")
        for name in ("cells_per_image", "soma_radius", "branches"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ValueError(f"{name} must be an ordered non-negative range")
        if self.soma_radius[0] <= 0:
            raise ValueError("soma_radius must be positive")


def _texture(rng: np.random.Generator, size: int) -> np.ndarray:
    coarse = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=size / 10, mode="wrap")
    fine = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=1.5, mode="wrap")
    coarse /= coarse.std() + 1e-12
    fine /= fine.std() + 1e-12
    return 0.04 * coarse + 0.015 * fine


def _segment_distance(xs, ys, x0, y0, x1, y1):
    dx, dy = x1 - x0, y1 - y0
    t = np.clip(((xs - x0) * dx + (ys - y0) * dy) / (dx * dx + dy * dy + 1e-12), 0, 1)
    return np.hypot(xs - (x0 + t * dx), ys - (y0 + t * dy)), t


def _place_cells(rng, spec: SynthSpec, n: int):
    size = spec.image_size
    cells = []
    attempts = 0
    while len(cells) < n and attempts < 2000:
        attempts += 1
        r = rng.uniform(*spec.soma_radius)
        aspect = rng.uniform(1.0, 1.35)
        a, b = r * math.sqrt(aspect), r / math.sqrt(aspect)
        theta = rng.uniform(0, math.pi)
        ex = math.sqrt((a * math.cos(theta)) ** 2 + (b * math.sin(theta)) ** 2)
        ey = math.sqrt((a * math.sin(theta)) ** 2 + (b * math.cos(theta)) ** 2)
        margin = 2.0
        if size - 2 * (ex + margin) <= 0 or size - 2 * (ey + margin) <= 0:
            continue
        cx = rng.uniform(ex + margin, size - ex - margin)
        cy = rng.uniform(ey + margin, size - ey - margin)
        if any(math.hypot(cx - c[0], cy - c[1]) < 1.2 * (max(ex, ey) + max(c[5], c[6])) for c in cells):
            continue
        cells.append((cx, cy, a, b, theta, ex, ey))
    return cells


def render_image(rng: np.random.Generator, spec: SynthSpec, n_cells: int) -> tuple[np.ndarray, np.ndarray]:
    size = spec.image_size
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    density = np.zeros((size, size))
    boxes = []
    for cx, cy, a, b, theta, ex, ey in _place_cells(rng, spec, n_cells):
        ct, st = math.cos(theta), math.sin(theta)
        xr = (xs - cx) * ct + (ys - cy) * st
        yr = -(xs - cx) * st + (ys - cy) * ct
        rho = np.sqrt((xr / a) ** 2 + (yr / b) ** 2)
        soma = 1.0 / (1.0 + np.exp((rho - 0.9) * 12.0))
        strength = rng.uniform(0.75, 1.0)
        cell = strength * soma
        for _ in range(int(rng.integers(spec.branches[0], spec.branches[1] + 1))):
            ang = rng.uniform(0, 2 * math.pi)
            length = rng.uniform(1.6, 2.8) * max(a, b)
            x1, y1 = cx + length * math.cos(ang), cy + length * math.sin(ang)
            dist, t = _segment_distance(xs, ys, cx, cy, x1, y1)
            width = rng.uniform(0.6, 1.1)
            cell = np.maximum(cell, 0.55 * strength * np.exp(-(dist**2) / (2 * width**2)) * (1 - 0.6 * t))
        density = np.maximum(density, cell)
        boxes.append([cx / size, cy / size, 2 * ex / size, 2 * ey / size])
    tex = _texture(rng, size)
    mix = np.clip(density, 0, 1)[..., None]
    base = BACKGROUND_RGB[None, None, :] * (1.0 + tex[..., None])
    img = base * (1 - mix) + STAIN_RGB[None, None, :] * mix
    img = img + spec.noise * rng.standard_normal(img.shape)
    gts = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    return np.clip(img, 0, 1).astype(np.float32), gts


def synth_generate(spec: SynthSpec) -> list[Sample]:
    """Generate ``spec.n_images`` samples; identical specs give identical data."""
    samples = []
    for i in range(spec.n_images):
        rng = np.random.default_rng([spec.seed, i])
        lo, hi = spec.cells_per_image
        n_cells = int(rng.integers(lo, hi + 1))
        image, gts = render_image(rng, spec, n_cells)
        image_id = spec.first_id + i
        samples.append(Sample(image, gts, image_id, spec.stain_tag, f"synth_{spec.seed}_{image_id:05d}.png"))
    return samples
