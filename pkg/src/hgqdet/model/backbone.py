"""Convolutional backbones, the c4 self-attention block and the FPN neck."""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .encoding import positional_encoding_2d


def _conv_block(cin: int, cout: int, stride: int) -> nn.Sequential:
    groups = 8 if cout % 8 == 0 else 1
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
        nn.GroupNorm(groups, cout),
        nn.SiLU(),
        nn.Conv2d(cout, cout, 3, padding=1, bias=False),
        nn.GroupNorm(groups, cout),
        nn.SiLU(),
    )


class TinyCNN(nn.Module):
    """Four-stage CNN with c2..c5 at strides 4, 8, 16, 32."""

    def __init__(self, channels: tuple[int, int, int, int] = (32, 64, 128, 256)):
        super().__init__()
        c2, c3, c4, c5 = channels
        self.out_channels = tuple(channels)
        self.stem = nn.Sequential(
            nn.Conv2d(3, c2 // 2, 3, stride=2, padding=1, bias=False),
            nn.GroupNorm(1, c2 // 2),
            nn.SiLU(),
        )
        self.stage2 = _conv_block(c2 // 2, c2, 2)
        self.stage3 = _conv_block(c2, c3, 2)
        self.stage4 = _conv_block(c3, c4, 2)
        self.stage5 = _conv_block(c4, c5, 2)

    def forward(self, x: Tensor, c4_hook=None) -> list[Tensor]:
        c2 = self.stage2(self.stem(x))
        c3 = self.stage3(c2)
        c4 = self.stage4(c3)
        if c4_hook is not None:
            c4 = c4_hook(c4)
        c5 = self.stage5(c4)
        return [c2, c3, c4, c5]


class ResNet50(nn.Module):
    """torchvision ResNet-50 trunk returning layer1..layer4 outputs."""

    out_channels = (256, 512, 1024, 2048)

    def __init__(self, weights_path: str | None = None):
        super().__init__()
        from torchvision.models import resnet50

        net = resnet50(weights=None)
        if weights_path:
            net.load_state_dict(torch.load(weights_path, map_location="cpu"))
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool)
        self.layer1, self.layer2, self.layer3, self.layer4 = net.layer1, net.layer2, net.layer3, net.layer4

    def forward(self, x: Tensor, c4_hook=None) -> list[Tensor]:
        c2 = self.layer1(self.stem(x))
        c3 = self.layer2(c2)
        c4 = self.layer3(c3)
        if c4_hook is not None:
            c4 = c4_hook(c4)
        c5 = self.layer4(c4)
        return [c2, c3, c4, c5]


class SpatialTransformerBlock(nn.Module):
    """One pre-norm self-attention + FFN layer over the flattened feature map."""

    def __init__(self, channels: int, n_head: int = 8, ffn_mult: float = 2.0):
        super().__init__()
        self.channels = channels
        self.layer = nn.TransformerEncoderLayer(
            d_model=channels,
            nhead=n_head,
            dim_feedforward=int(channels * ffn_mult),
            dropout=0.0,
            activation="gelu",
            batch_first=True,
            norm_first=True,
        )

    def forward(self, x: Tensor) -> Tensor:
        b, c, h, w = x.shape
        pe = positional_encoding_2d(h, w, c, dtype=x.dtype, device=x.device).reshape(1, h * w, c)
        tokens = x.flatten(2).transpose(1, 2)
        # the encoding only steers attention; it is removed again after the block
        out = self.layer(tokens + pe) - pe
        return out.transpose(1, 2).reshape(b, c, h, w)


class FPN(nn.Module):
    """Top-down feature pyramid producing p2, p3, p4 with ``dim`` channels."""

    def __init__(self, in_channels: tuple[int, ...], dim: int):
        super().__init__()
        self.lateral = nn.ModuleList(nn.Conv2d(c, dim, 1) for c in in_channels)
        self.smooth = nn.ModuleList(nn.Conv2d(dim, dim, 3, padding=1) for _ in range(3))

    def forward(self, feats: list[Tensor]) -> list[Tensor]:
        lat = [l(f) for l, f in zip(self.lateral, feats)]
        top = lat[-1]
        outs = []
        for level in range(len(lat) - 2, -1, -1):
            top = lat[level] + F.interpolate(top, size=lat[level].shape[-2:], mode="nearest")
            outs.append(top)
        p4, p3, p2 = outs[0], outs[1], outs[2]
        return [self.smooth[0](p2), self.smooth[1](p3), self.smooth[2](p4)]
