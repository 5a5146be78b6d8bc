"""Volumetric encoder-decoder that refines back-projected volumes.

A modified 3D U-Net: a contracting path of four convolutional blocks
(two 3x3x3 convolutions with ReLU each, max pooling between levels),
then an expanding path of upsampling, skip concatenation, and double
convolutions, closed by a 1x1x1 projection.  Input and output share one
channel and one shape; inputs whose spatial size is not divisible by
2^4 must be padded first (see pad_to_multiple).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

POOLINGS = 4
MULTIPLE = 2**POOLINGS


@dataclass(frozen=True)
class NetworkConfig:
    base_channels: int = 16
    in_channels: int = 1
    out_channels: int = 1

    def __post_init__(self):
        if self.base_channels < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "NetworkConfig":
        return cls(**json.loads(text))


class DoubleConv(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv3d(in_ch, out_ch, kernel_size=3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv3d(out_ch, out_ch, kernel_size=3, padding=1),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.block(x)


class UNet3d(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.base_channels
        widths = [w, 2 * w, 4 * w, 8 * w]

        self.encoders = nn.ModuleList()
        in_ch = cfg.in_channels
        for width in widths:
            self.encoders.append(DoubleConv(in_ch, width))
            in_ch = width
        self.pool = nn.MaxPool3d(2)
        self.bottleneck = DoubleConv(widths[-1], 16 * w)

        self.upsamplers = nn.ModuleList()
        self.decoders = nn.ModuleList()
        up_in = 16 * w
        for width in reversed(widths):
            self.upsamplers.append(
                nn.ConvTranspose3d(up_in, width, kernel_size=2, stride=2)
            )
            self.decoders.append(DoubleConv(2 * width, width))
            up_in = width
        self.head = nn.Conv3d(widths[0], cfg.out_channels, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for size in x.shape[2:]:
            if size % MULTIPLE:
                raise ValueError(
                    f"spatial size {tuple(x.shape[2:])} not divisible by {MULTIPLE}; "
                    "pad the volume first"
                )
        skips = []
        for encoder in self.encoders:
            x = encoder(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for upsample, decoder, skip in zip(self.upsamplers, self.decoders,
                                           reversed(skips)):
            x = upsample(x)
            x = decoder(torch.cat([x, skip], dim=1))
        return self.head(x)


def build_network(cfg: NetworkConfig) -> UNet3d:
    return UNet3d(cfg)


def pad_to_multiple(shape: tuple[int, int, int]) -> tuple[tuple[int, int, int], list]:
    """Padded shape divisible by 2^4 plus the per-axis (before, after) pads."""
    padded = []
    pads = []
    for size in shape:
        target = ((size + MULTIPLE - 1) // MULTIPLE) * MULTIPLE
        extra = target - size
        pads.append((extra // 2, extra - extra // 2))
        padded.append(target)
    return tuple(padded), pads
