"""Heatmap-seeded query detector."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from ..geometry import DEFAULT_H0, DEFAULT_S_DELTA, DEFAULT_W0, decode_box
from ..heatmap import topk_peaks
from .backbone import FPN, ResNet50, SpatialTransformerBlock, TinyCNN
from .encoding import bilinear_sample, encode_positions, positional_encoding_2d

STRIDES = (4, 8, 16)


@dataclass
class ModelConfig:
    backbone: str = "resnet50"
    d: int = 256
    num_queries: int = 80
    num_layers: int = 6
    n_head: int = 8
    ffn_dim: int = 1024
    s_delta: float = DEFAULT_S_DELTA
    w0: float = DEFAULT_W0
    h0: float = DEFAULT_H0
    input_size: tuple[int, int] = (512, 512)
    c4_heads: int = 8
    c4_ffn_mult: float = 2.0
    tiny_channels: tuple[int, int, int, int] = (32, 64, 128, 256)
    pretrained: str | None = None
    heatmap_prior: float = 0.1
    cls_prior: float = 0.01

    def __post_init__(self):
        self.input_size = tuple(self.input_size)
        self.tiny_channels = tuple(self.tiny_channels)
        if self.d % self.n_head:
            raise ValueError(f"d={self.d} not divisible by n_head={self.n_head}")
        if self.d % 4:
            raise ValueError("d must be divisible by 4 for the positional encoding")
        if self.num_queries < 1 or self.num_layers < 1:
            raise ValueError("num_queries and num_layers must be >= 1")
        if self.backbone not in ("resnet50", "tiny-cnn"):
            raise ValueError(f"unknown backbone {self.backbone!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FeaturePyramid:
    p2: Tensor
    p3: Tensor
    p4: Tensor

    def levels(self) -> list[Tensor]:
        return [self.p2, self.p3, self.p4]


@dataclass
class QuerySet:
    vectors: Tensor  # (B, K, d)
    anchors: Tensor  # (B, K, 2) normalized
    valid: Tensor  # (B, K) bool
    cells: Tensor  # (B, K, 2) integer (u, v) on the p2 grid


@dataclass
class Memory:
    tokens: Tensor  # (B, N, d)
    level: Tensor  # (N,) pyramid level index 0..2 for p2..p4
    position: Tensor  # (N, 2) (x, y) in p2 grid units


@dataclass
class DecoderOutput:
    logits: Tensor  # (B, K)
    deltas: Tensor  # (B, K, 4)


@dataclass
class DetectorOutput:
    heatmap_logits: Tensor
    queries: QuerySet
    logits: Tensor
    deltas: Tensor
    boxes: Tensor
    extras: dict = field(default_factory=dict)

    @property
    def valid(self) -> Tensor:
        return self.queries.valid


class DecoderLayer(nn.Module):
    """Pre-norm self-attention, cross-attention and FFN, each residual."""

    def __init__(self, d: int, n_head: int, ffn_dim: int):
        super().__init__()
        self.norm_self = nn.LayerNorm(d)
        self.self_attn = nn.MultiheadAttention(d, n_head, batch_first=True)
        self.norm_cross = nn.LayerNorm(d)
        self.cross_attn = nn.MultiheadAttention(d, n_head, batch_first=True)
        self.norm_ffn = nn.LayerNorm(d)
        self.ffn = nn.Sequential(nn.Linear(d, ffn_dim), nn.GELU(), nn.Linear(ffn_dim, d))

    def forward(self, q: Tensor, memory: Tensor, pad_mask: Tensor | None) -> Tensor:
        x = self.norm_self(q)
        q = q + self.self_attn(x, x, x, key_padding_mask=pad_mask, need_weights=False)[0]
        x = self.norm_cross(q)
        q = q + self.cross_attn(x, memory, memory, need_weights=False)[0]
        return q + self.ffn(self.norm_ffn(q))


class HeatmapQueryDetector(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d
        if cfg.backbone == "tiny-cnn":
            self.backbone = TinyCNN(cfg.tiny_channels)
        else:
            self.backbone = ResNet50(cfg.pretrained)
        chans = self.backbone.out_channels
        self.c4_block = SpatialTransformerBlock(chans[2], cfg.c4_heads, cfg.c4_ffn_mult)
        self.fpn = FPN(chans, d)
        self.heatmap_head = nn.Sequential(nn.Conv2d(d, d, 3, padding=1), nn.SiLU(), nn.Conv2d(d, 1, 1))
        self.align = nn.ModuleList(nn.Conv2d(d, d, 1) for _ in STRIDES)
        self.query_proj = nn.Linear(d + 2 + d, d)
        self.layers = nn.ModuleList(DecoderLayer(d, cfg.n_head, cfg.ffn_dim) for _ in range(cfg.num_layers))
        self.out_norm = nn.LayerNorm(d)
        self.cls_head = nn.Linear(d, 1)
        self.box_head = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, 4))
        self._init_heads()

    def _init_heads(self) -> None:
        p = self.cfg.heatmap_prior
        nn.init.constant_(self.heatmap_head[-1].bias, -math.log((1 - p) / p))
        p = self.cfg.cls_prior
        nn.init.constant_(self.cls_head.bias, -math.log((1 - p) / p))
        # zero offsets at start: anchor center, default size
        nn.init.zeros_(self.box_head[-1].weight)
        nn.init.zeros_(self.box_head[-1].bias)

    def backbone_forward(self, images: Tensor) -> FeaturePyramid:
        h, w = images.shape[-2:]
        if h % 16 or w % 16:
            raise ValueError(f"input size {h}x{w} must be divisible by 16")
        feats = self.backbone(images, c4_hook=self.c4_block)
        return FeaturePyramid(*self.fpn(feats))

    def build_memory(self, fp: FeaturePyramid) -> Memory:
        tokens, levels, positions = [], [], []
        for lvl, (feat, proj, stride) in enumerate(zip(fp.levels(), self.align, STRIDES)):
            b, c, h, w = feat.shape
            scale = stride / STRIDES[0]
            pe = positional_encoding_2d(h, w, c, scale=scale, dtype=feat.dtype, device=feat.device)
            x = proj(feat).flatten(2).transpose(1, 2) + pe.reshape(1, h * w, c)
            tokens.append(x)
            levels.append(torch.full((h * w,), lvl, dtype=torch.long, device=feat.device))
            ys = (torch.arange(h, device=feat.device, dtype=feat.dtype) + 0.5) * scale - 0.5
            xs = (torch.arange(w, device=feat.device, dtype=feat.dtype) + 0.5) * scale - 0.5
            gy, gx = torch.meshgrid(ys, xs, indexing="ij")
            positions.append(torch.stack([gx.flatten(), gy.flatten()], dim=-1))
        return Memory(torch.cat(tokens, 1), torch.cat(levels), torch.cat(positions))

    def init_queries(self, p2: Tensor, heatmap_logits: Tensor) -> QuerySet:
        """One query per heatmap peak; unused slots are zero and masked."""
        b, _, gh, gw = p2.shape
        u, v, _, valid = topk_peaks(heatmap_logits.detach(), self.cfg.num_queries)
        return self.queries_from_cells(p2, u, v, valid)

    def queries_from_cells(self, p2: Tensor, u: Tensor, v: Tensor, valid: Tensor) -> QuerySet:
        b, d, gh, gw = p2.shape
        uf, vf = u.to(p2.dtype), v.to(p2.dtype)
        f = bilinear_sample(p2, uf, vf)
        nu = (uf + 0.5) / gw
        nv = (vf + 0.5) / gh
        pe = encode_positions(uf, vf, d)
        q = self.query_proj(torch.cat([f, nu[..., None], nv[..., None], pe], dim=-1))
        mask = valid[..., None]
        q = torch.where(mask, q, torch.zeros_like(q))
        anchors = torch.where(mask, torch.stack([nu, nv], -1), torch.zeros(b, u.shape[1], 2, dtype=p2.dtype))
        return QuerySet(q, anchors, valid, torch.stack([u, v], -1))

    def decoder_forward(self, queries: QuerySet, memory: Tensor) -> DecoderOutput:
        pad = ~queries.valid
        # rows with no valid query would make attention softmax NaN
        pad = torch.where(pad.all(dim=1, keepdim=True), torch.zeros_like(pad), pad)
        q = queries.vectors
        for layer in self.layers:
            q = layer(q, memory, pad)
        q = self.out_norm(q)
        return DecoderOutput(self.cls_head(q).squeeze(-1), self.box_head(q))

    def decode(self, anchors: Tensor, deltas: Tensor) -> Tensor:
        c = self.cfg
        return decode_box(anchors, deltas, c.s_delta, c.w0, c.h0)

    def forward(self, images: Tensor) -> DetectorOutput:
        fp = self.backbone_forward(images)
        hm = self.heatmap_head(fp.p2)
        queries = self.init_queries(fp.p2, hm)
        memory = self.build_memory(fp)
        out = self.decoder_forward(queries, memory.tokens)
        boxes = self.decode(queries.anchors, out.deltas)
        return DetectorOutput(hm, queries, out.logits, out.deltas, boxes)
