"""Pooling-free ResNet-style encoders.

Only the residual middle of a ResNet is kept: a light 3×3 stem, then three
stages.  Stages 2 and 3 open with a stride-2 block (3×3 stride-2 main path,
1×1 stride-2 projection on the skip), so the encoder emits features at full,
half and quarter resolution without any pooling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from . import functional as F
from .nn import Conv2d, Module, ModuleList, ResidualBlock
from .tensor import ShapeError, Tensor, TensorError

__all__ = ["EncoderConfig", "DownBlock", "Encoder", "BLOCKS_PER_STAGE"]

BLOCKS_PER_STAGE = {"R18": (2, 2, 2), "R34": (3, 4, 6)}


@dataclass(frozen=True)
class EncoderConfig:
    variant: str = "R18"
    stage_channels: tuple[int, int, int] = (64, 128, 256)
    image_channels: int = 3

    def __post_init__(self):
        if self.variant not in BLOCKS_PER_STAGE:
            raise TensorError(f"unknown encoder variant {self.variant!r}; expected R18 or R34")
        if len(self.stage_channels) != 3:
            raise TensorError("encoder needs exactly 3 stage widths")

    @property
    def blocks_per_stage(self) -> tuple[int, int, int]:
        return BLOCKS_PER_STAGE[self.variant]


class DownBlock(Module):
    """Stride-2 residual block changing width: relu(conv(relu(conv_s2(x))) + proj_s2(x))."""

    def __init__(self, in_channels: int, out_channels: int, dtype=None):
        self.conv1 = Conv2d(in_channels, out_channels, 3, stride=2, padding=1, dtype=dtype)
        self.conv2 = Conv2d(out_channels, out_channels, 3, zero_init=True, dtype=dtype)
        self.proj = Conv2d(in_channels, out_channels, 1, stride=2, padding=0, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.relu(self.conv2(F.relu(self.conv1(x))) + self.proj(x))

    def macs(self, h, w):
        (ho, wo), a = self.conv1.macs(h, w)
        _, b = self.conv2.macs(ho, wo)
        _, c = self.proj.macs(h, w)
        return (ho, wo), a + b + c


class Encoder(Module):
    def __init__(self, cfg: EncoderConfig, dtype=None):
        self.cfg = cfg
        c1, c2, c3 = cfg.stage_channels
        n1, n2, n3 = cfg.blocks_per_stage
        self.stem = Conv2d(cfg.image_channels, c1, 3, dtype=dtype)
        self.stage1 = ModuleList(ResidualBlock(c1, dtype=dtype) for _ in range(n1))
        self.stage2 = ModuleList(
            [DownBlock(c1, c2, dtype=dtype)] + [ResidualBlock(c2, dtype=dtype) for _ in range(n2 - 1)]
        )
        self.stage3 = ModuleList(
            [DownBlock(c2, c3, dtype=dtype)] + [ResidualBlock(c3, dtype=dtype) for _ in range(n3 - 1)]
        )

    def check_input(self, image: Tensor) -> None:
        if image.ndim != 4:
            raise ShapeError("encode", "input rank", 4, image.ndim)
        if image.shape[1] != self.cfg.image_channels:
            raise ShapeError("encode", "image channels", self.cfg.image_channels, image.shape[1])
        h, w = image.shape[2:]
        if h % 4 or w % 4:
            raise ShapeError("encode", "spatial size", "divisible by 4", (h, w))
        if h < 16 or w < 16:
            raise ShapeError("encode", "spatial size", ">= 16", (h, w))

    def forward(self, image: Tensor) -> list[Tensor]:
        """Return [lay1 (C1, H), lay2 (C2, H/2), lay3 (C3, H/4)]."""
        self.check_input(image)
        x = F.relu(self.stem(image))
        feats = []
        for stage in (self.stage1, self.stage2, self.stage3):
            for block in stage:
                x = block(x)
            feats.append(x)
        return feats

    def macs(self, h, w):
        (h, w), total = self.stem.macs(h, w)
        sizes = []
        for stage in (self.stage1, self.stage2, self.stage3):
            for block in stage:
                (h, w), m = block.macs(h, w)
                total += m
            sizes.append((h, w))
        return sizes, total


def encode(image: Tensor, encoder: Encoder) -> Sequence[Tensor]:
    return encoder(image)
