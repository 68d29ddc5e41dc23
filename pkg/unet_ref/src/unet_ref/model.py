"""U-net: three down/upsampling levels, width doubling per level, ReLU
activations, sigmoid head for saturation targets and tanhshrink for
pressure targets. Downsampling by stride-2 convolution, upsampling by
nearest-neighbour interpolation followed by a convolution, skip
concatenation at every level."""
from __future__ import annotations

import torch
from torch import nn


def _block(c_in: int, c_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, padding=1), nn.ReLU(inplace=True),
        nn.Conv2d(c_out, c_out, 3, padding=1), nn.ReLU(inplace=True),
    )


class UNet(nn.Module):
    def __init__(self, in_channels: int = 5, base_width: int = 64,
                 levels: int = 3, head: str = "sigmoid"):
        super().__init__()
        if head not in ("sigmoid", "tanhshrink"):
            raise ValueError(f"unknown head {head!r}")
        self.levels = levels
        widths = [base_width * 2 ** l for l in range(levels + 1)]
        self.enc = nn.ModuleList()
        self.down = nn.ModuleList()
        c = in_channels
        for l in range(levels):
            self.enc.append(_block(c, widths[l]))
            self.down.append(nn.Sequential(
                nn.Conv2d(widths[l], widths[l + 1], 3, stride=2, padding=1),
                nn.ReLU(inplace=True)))
            c = widths[l + 1]
        self.bottleneck = _block(widths[levels], widths[levels])
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        for l in reversed(range(levels)):
            self.up.append(nn.Sequential(
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(widths[l + 1], widths[l], 3, padding=1),
                nn.ReLU(inplace=True)))
            self.dec.append(_block(2 * widths[l], widths[l]))
        self.head_conv = nn.Conv2d(base_width, 1, 1)
        self.head_act = nn.Sigmoid() if head == "sigmoid" else nn.Tanhshrink()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skips = []
        h = x
        for enc, down in zip(self.enc, self.down):
            h = enc(h)
            skips.append(h)
            h = down(h)
        h = self.bottleneck(h)
        for up, dec, skip in zip(self.up, self.dec, reversed(skips)):
            h = up(h)
            h = dec(torch.cat([h, skip], dim=1))
        return self.head_act(self.head_conv(h))[:, 0]
