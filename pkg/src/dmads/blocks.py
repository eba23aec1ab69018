"""Multi-scale convolutional attention (MSCFA), local feature attention (LFA)
and feature refinement/fusion (FRFB) blocks."""

from __future__ import annotations

from typing import Optional, Sequence

from . import functional as F
from .nn import ESA, Conv2d, Module, ModuleList, ResidualBlock, SEGate
from .tensor import ShapeError, Tensor, TensorError

__all__ = ["MSCFA", "LFA", "FRFB", "DEFAULT_PATCH_RATIOS", "resolve_patch_ratios"]

DEFAULT_PATCH_RATIOS = (4, 8, 16, 32)


class MSCFA(Module):
    """Three dilated paths over stacked residual blocks, fused and added back.

    Paths use (3, 2, 1) residual blocks followed by 3×3 convs at dilation
    (4, 2, 1).  The first two are fused by relu∘1×1 over their concatenation,
    that result is fused with the third the same way, and a final relu∘1×1 is
    added to the input.
    """

    def __init__(self, channels: int, dtype=None):
        c = channels
        self.channels = c
        self.res4 = ModuleList(ResidualBlock(c, dtype=dtype) for _ in range(3))
        self.res2 = ModuleList(ResidualBlock(c, dtype=dtype) for _ in range(2))
        self.res1 = ModuleList(ResidualBlock(c, dtype=dtype) for _ in range(1))
        self.dil4 = Conv2d(c, c, 3, dilation=4, dtype=dtype)
        self.dil2 = Conv2d(c, c, 3, dilation=2, dtype=dtype)
        self.dil1 = Conv2d(c, c, 3, dilation=1, dtype=dtype)
        self.fuse12 = Conv2d(2 * c, c, 1, dtype=dtype)
        self.fuse123 = Conv2d(2 * c, c, 1, dtype=dtype)
        self.out = Conv2d(c, c, 1, zero_init=True, dtype=dtype)

    def paths(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        outs = []
        for blocks, conv in ((self.res4, self.dil4), (self.res2, self.dil2), (self.res1, self.dil1)):
            y = x
            for block in blocks:
                y = block(y)
            outs.append(conv(y))
        return tuple(outs)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError("mscfa", "channels", self.channels, x.shape[1] if x.ndim == 4 else x.shape)
        if x.shape[2] < 2 or x.shape[3] < 2:
            raise ShapeError("mscfa", "spatial size", ">= 2", x.shape[2:])
        out1, out2, out3 = self.paths(x)
        fused = F.relu(self.fuse12(F.concat_channels(out1, out2)))
        fused = F.relu(self.fuse123(F.concat_channels(fused, out3)))
        return x + F.relu(self.out(fused))

    def macs(self, h, w):
        total = 0
        for blocks in (self.res4, self.res2, self.res1):
            for b in blocks:
                total += b.macs(h, w)[1]
        for conv in (self.dil4, self.dil2, self.dil1, self.fuse12, self.fuse123, self.out):
            total += conv.macs(h, w)[1]
        return (h, w), total


def resolve_patch_ratios(ratios: Optional[Sequence[int]], height: int, width: int) -> tuple[int, ...]:
    """Default ratios are clamped to the map size; explicit ones must fit."""
    limit = min(height, width)
    if ratios is None:
        return tuple(min(p, limit) for p in DEFAULT_PATCH_RATIOS)
    ratios = tuple(int(p) for p in ratios)
    if len(ratios) != 4:
        raise TensorError(f"lfa: exactly 4 patch ratios required, got {len(ratios)}")
    for p in ratios:
        if p < 1 or p > limit:
            raise TensorError(f"lfa: patch ratio {p} does not fit a {height}x{width} map")
    return ratios


class LFA(Module):
    """SE gating, then four patch-local conv branches fused by relu∘1×1.

    Each branch cuts the gated map into p×p tiles (zero-padding ragged edges),
    runs one shared 3×3 conv on every tile independently, stitches and crops,
    then applies relu∘1×1.
    """

    def __init__(self, channels: int, patch_ratios: Sequence[int], dtype=None):
        if len(patch_ratios) != 4:
            raise TensorError(f"lfa: exactly 4 patch ratios required, got {len(patch_ratios)}")
        c = channels
        self.channels = c
        self.patch_ratios = tuple(int(p) for p in patch_ratios)
        self.se = SEGate(c, dtype=dtype)
        self.patch_convs = ModuleList(Conv2d(c, c, 3, dtype=dtype) for _ in range(4))
        self.branch_convs = ModuleList(Conv2d(c, c, 1, dtype=dtype) for _ in range(4))
        self.fuse = Conv2d(4 * c, c, 1, dtype=dtype)

    def branch(self, o: Tensor, i: int) -> Tensor:
        p = self.patch_ratios[i]
        n, _, h, w = o.shape
        tiles = self.patch_convs[i](F.to_patches(o, p))
        return F.relu(self.branch_convs[i](F.from_patches(tiles, p, n, h, w)))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError("lfa", "channels", self.channels, x.shape[1] if x.ndim == 4 else x.shape)
        h, w = x.shape[2:]
        if max(self.patch_ratios) > min(h, w):
            raise ShapeError("lfa", "spatial size", f">= {max(self.patch_ratios)}", (h, w))
        o, _ = self.se(x)
        branches = [self.branch(o, i) for i in range(4)]
        return F.relu(self.fuse(F.concat_channels(branches)))

    def macs(self, h, w):
        total = self.se.macs(h, w)[1]
        for p, pc, bc in zip(self.patch_ratios, self.patch_convs, self.branch_convs):
            nh, nw = -(-h // p), -(-w // p)
            total += nh * nw * pc.macs(p, p)[1]
            total += bc.macs(h, w)[1]
        total += self.fuse.macs(h, w)[1]
        return (h, w), total


class FRFB(Module):
    """Fuse a skip feature ``low`` (C, H) with a deeper map ``deep`` (2C, H/2).

    deep' = relu(1×1(up2(deep)));  low_gate = gate(esa(res(low)));
    out = low_gate * (low + deep') * se(deep').
    """

    def __init__(self, channels: int, upsample_mode: str = "bilinear", dtype=None):
        c = channels
        self.channels = c
        self.upsample_mode = upsample_mode
        self.res = ResidualBlock(c, dtype=dtype)
        self.esa = ESA(c, upsample_mode, dtype=dtype)
        self.low_gate = SEGate(c, dtype=dtype)
        self.reduce = Conv2d(2 * c, c, 1, dtype=dtype)
        self.deep_se = SEGate(c, dtype=dtype)

    def check_inputs(self, low: Tensor, deep: Tensor) -> None:
        c = self.channels
        if low.ndim != 4 or low.shape[1] != c:
            raise ShapeError("frfb", "low channels", c, low.shape[1] if low.ndim == 4 else low.shape)
        if deep.ndim != 4 or deep.shape[1] != 2 * c:
            raise ShapeError("frfb", "deep channels", 2 * c, deep.shape[1] if deep.ndim == 4 else deep.shape)
        if deep.shape[0] != low.shape[0]:
            raise ShapeError("frfb", "deep batch", low.shape[0], deep.shape[0])
        h, w = low.shape[2:]
        if (2 * deep.shape[2], 2 * deep.shape[3]) != (h, w):
            raise ShapeError("frfb", "deep spatial size", (h // 2, w // 2), deep.shape[2:])

    def parts(self, low: Tensor, deep: Tensor) -> dict[str, Tensor]:
        """Intermediate tensors keyed by role, for inspection and testing."""
        self.check_inputs(low, deep)
        deep_up = F.relu(self.reduce(F.upsample2x(deep, self.upsample_mode)))
        low1 = self.low_gate.weights(self.esa(self.res(low)))
        fu = low + deep_up
        deep2, _ = self.deep_se(deep_up)
        return {"deep_up": deep_up, "low1": low1, "fu": fu, "deep2": deep2}

    def forward(self, low: Tensor, deep: Tensor) -> Tensor:
        p = self.parts(low, deep)
        return F.channel_scale(p["fu"], p["low1"]) * p["deep2"]

    def macs(self, h, w):
        total = self.reduce.macs(h, w)[1]
        total += self.res.macs(h, w)[1] + self.esa.macs(h, w)[1]
        total += self.low_gate.macs(h, w)[1] + self.deep_se.macs(h, w)[1]
        return (h, w), total
