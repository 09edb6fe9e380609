"""Fixed sinusoidal 2-D positional encodings and bilinear point sampling."""
from __future__ import annotations

import torch
from torch import Tensor

TEMPERATURE = 10000.0


def encode_positions(x: Tensor, y: Tensor, d: int, temperature: float = TEMPERATURE) -> Tensor:
    """Sinusoidal encoding of (possibly fractional) grid positions.

    The first ``d/2`` channels encode ``x`` and the rest ``y``; within each
    half channels alternate ``sin, cos`` with geometrically spaced frequencies.
    Output shape is ``x.shape + (d,)``.
    """
    if d % 4:
        raise ValueError(f"d must be divisible by 4, got {d}")
    half = d // 2
    dtype = x.dtype if x.is_floating_point() else torch.get_default_dtype()
    freq_idx = torch.arange(half // 2, dtype=dtype, device=x.device)
    inv_freq = temperature ** (-2 * freq_idx / half)

    def _axis(p: Tensor) -> Tensor:
        ang = p.to(dtype)[..., None] * inv_freq
        return torch.stack([ang.sin(), ang.cos()], dim=-1).flatten(-2)

    return torch.cat([_axis(x), _axis(y)], dim=-1)


def positional_encoding_2d(
    h: int, w: int, d: int, scale: float = 1.0, dtype: torch.dtype | None = None, device=None
) -> Tensor:
    """``(h, w, d)`` encoding of every cell of an ``h x w`` grid.

    ``scale`` expresses cell positions in the units of a finer reference grid
    (cell centers map to ``(i + 0.5) * scale - 0.5``) so pyramid levels share
    one coordinate frame; ``scale=1`` uses plain integer indices.
    """
    dtype = dtype or torch.get_default_dtype()
    ys = (torch.arange(h, dtype=dtype, device=device) + 0.5) * scale - 0.5
    xs = (torch.arange(w, dtype=dtype, device=device) + 0.5) * scale - 0.5
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return encode_positions(gx, gy, d)


def bilinear_sample(feat: Tensor, u: Tensor, v: Tensor) -> Tensor:
    """Bilinearly interpolate ``feat`` at grid coordinates ``(u, v)``.

    Args:
        feat: ``(B, C, H, W)`` feature map (or ``(C, H, W)``).
        u: column coordinates, ``(B, K)`` (or any shape when ``feat`` is 3-D).
        v: row coordinates, same shape as ``u``.

    Returns:
        ``(B, K, C)`` samples (``u.shape + (C,)`` in the unbatched case).
        Coordinates outside the grid are clamped to the border.
    """
    if feat.ndim == 3:
        shape = torch.as_tensor(u).shape
        u = torch.as_tensor(u, dtype=feat.dtype).reshape(1, -1)
        v = torch.as_tensor(v, dtype=feat.dtype).reshape(1, -1)
        return bilinear_sample(feat[None], u, v)[0].reshape(*shape, feat.shape[0])

    b, c, h, w = feat.shape
    u = u.to(feat.dtype).clamp(0, w - 1)
    v = v.to(feat.dtype).clamp(0, h - 1)
    u0 = u.floor().clamp(max=w - 1)
    v0 = v.floor().clamp(max=h - 1)
    fu, fv = u - u0, v - v0
    u0, v0 = u0.long(), v0.long()
    u1 = (u0 + 1).clamp(max=w - 1)
    v1 = (v0 + 1).clamp(max=h - 1)

    flat = feat.reshape(b, c, h * w)

    def _gather(vv: Tensor, uu: Tensor) -> Tensor:
        idx = (vv * w + uu)[:, None, :].expand(b, c, -1)
        return flat.gather(2, idx).transpose(1, 2)

    fu, fv = fu[..., None], fv[..., None]
    return (
        _gather(v0, u0) * (1 - fu) * (1 - fv)
        + _gather(v0, u1) * fu * (1 - fv)
        + _gather(v1, u0) * (1 - fu) * fv
        + _gather(v1, u1) * fu * fv
    )
