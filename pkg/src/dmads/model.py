"""Dual-path DmADs network assembly.

Each path owns one encoder (R18 for path 1, R34 for path 2), MSCFA blocks on
its two skip features and on its bottleneck, an LFA on the bottleneck, and
two FRFB decoder stages.  A fusion head merges the two full-resolution path
outputs into one logit map.  With deep supervision on, six auxiliary logit
maps are produced: both bottleneck MSCFA outputs and every FRFB output.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

from . import functional as F
from .blocks import FRFB, LFA, MSCFA, resolve_patch_ratios
from .encoder import Encoder, EncoderConfig
from .nn import Conv2d, Module, ParameterStore, count_parameters, init_parameters
from .tensor import ShapeError, Tensor, TensorError

__all__ = [
    "ModelConfig",
    "ForwardOutput",
    "Fusion",
    "DmADsNet",
    "ABLATIONS",
    "estimate_flops",
    "count_parameters",
]

# ablation variant letter -> ModelConfig toggle
ABLATIONS = {
    "a": "disable_mscfa",
    "b": "disable_frfb",
    "c": "disable_lfa",
    "d": "disable_deep_supervision",
    "e": "single_backbone_r18",
}

_ARCH_FIELDS = (
    "image_size",
    "image_channels",
    "stage_channels",
    "width_multiplier",
    "patch_ratios",
    "skip_wiring",
    "upsample_mode",
    "disable_mscfa",
    "disable_frfb",
    "disable_lfa",
    "disable_deep_supervision",
    "single_backbone_r18",
)


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 256
    image_channels: int = 3
    stage_channels: tuple[int, int, int] = (64, 128, 256)
    width_multiplier: float = 1.0
    patch_ratios: Optional[tuple[int, ...]] = None
    skip_wiring: str = "symmetric"
    upsample_mode: str = "bilinear"
    disable_mscfa: bool = False
    disable_frfb: bool = False
    disable_lfa: bool = False
    disable_deep_supervision: bool = False
    single_backbone_r18: bool = False
    theta: float = 0.5
    loss_kind: str = "soft_iou"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        if self.patch_ratios is not None:
            object.__setattr__(self, "patch_ratios", tuple(int(p) for p in self.patch_ratios))
        if not 0.0 <= self.theta <= 1.0:
            raise TensorError(f"theta must lie in [0, 1], got {self.theta}")
        if self.skip_wiring not in ("symmetric", "as_written"):
            raise TensorError(f"skip_wiring must be 'symmetric' or 'as_written', got {self.skip_wiring!r}")
        if self.upsample_mode not in ("bilinear", "nearest"):
            raise TensorError(f"upsample_mode must be 'bilinear' or 'nearest', got {self.upsample_mode!r}")
        if self.loss_kind not in ("bce", "soft_iou"):
            raise TensorError(f"loss_kind must be 'bce' or 'soft_iou', got {self.loss_kind!r}")
        if self.image_size % 4 or self.image_size < 16:
            raise TensorError(f"image_size must be a multiple of 4 and >= 16, got {self.image_size}")
        if self.width_multiplier <= 0:
            raise TensorError("width_multiplier must be positive")
        c1, c2, c3 = self.channels
        if c2 != 2 * c1 or c3 != 2 * c2:
            raise TensorError(f"stage widths must double per stage, got {(c1, c2, c3)}")
        if c1 % 4:
            raise TensorError(f"first stage width must be a multiple of 4, got {c1}")
        self.resolved_patch_ratios  # validates explicit ratios

    @property
    def channels(self) -> tuple[int, int, int]:
        return tuple(int(round(c * self.width_multiplier)) for c in self.stage_channels)

    @property
    def resolved_patch_ratios(self) -> tuple[int, ...]:
        s = self.image_size // 4
        return resolve_patch_ratios(self.patch_ratios, s, s)

    def with_ablation(self, variant: str) -> "ModelConfig":
        return dataclasses.replace(self, **{ABLATIONS[variant]: True})

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["stage_channels"] = list(self.stage_channels)
        d["patch_ratios"] = list(self.patch_ratios) if self.patch_ratios is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise TensorError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> bytes:
        """SHA-256 over the fields that determine parameter layout."""
        d = self.to_dict()
        arch = {k: d[k] for k in _ARCH_FIELDS}
        arch["patch_ratios"] = list(self.resolved_patch_ratios)
        arch["channels"] = list(self.channels)
        return hashlib.sha256(json.dumps(arch, sort_keys=True).encode()).digest()


@dataclass
class ForwardOutput:
    final_map: Tensor
    deep_maps: list[Tensor] = field(default_factory=list)


class Fusion(Module):
    """concat -> relu∘1×1 (2C -> C) -> 1×1 (C -> 1 logit)."""

    def __init__(self, channels: int, dtype=None):
        self.channels = channels
        self.mix = Conv2d(2 * channels, channels, 1, dtype=dtype)
        self.head = Conv2d(channels, 1, 1, dtype=dtype)

    def forward(self, out1: Tensor, out2: Tensor) -> Tensor:
        if out1.shape != out2.shape:
            raise ShapeError("fusion", "input shape", out1.shape, out2.shape)
        if out1.ndim != 4 or out1.shape[1] != self.channels:
            raise ShapeError("fusion", "channels", self.channels, out1.shape[1] if out1.ndim == 4 else out1.shape)
        return self.head(F.relu(self.mix(F.concat_channels(out1, out2))))

    def macs(self, h, w):
        return (h, w), self.mix.macs(h, w)[1] + self.head.macs(h, w)[1]


class _Identity(Module):
    def forward(self, x):
        return x

    def macs(self, h, w):
        return (h, w), 0


class ConvBottleneck(Module):
    """Stand-in for LFA in ablation c: relu(conv3×3)."""

    def __init__(self, channels: int, dtype=None):
        self.conv = Conv2d(channels, channels, 3, dtype=dtype)

    def forward(self, x):
        return F.relu(self.conv(x))

    def macs(self, h, w):
        return self.conv.macs(h, w)


class UpsampleAdd(Module):
    """Stand-in for FRFB in ablation b: low + relu(1×1(up2(deep)))."""

    def __init__(self, channels: int, upsample_mode: str = "bilinear", dtype=None):
        self.upsample_mode = upsample_mode
        self.reduce = Conv2d(2 * channels, channels, 1, dtype=dtype)

    def forward(self, low, deep):
        return low + F.relu(self.reduce(F.upsample2x(deep, self.upsample_mode)))

    def macs(self, h, w):
        return (h, w), self.reduce.macs(h, w)[1]


class Path(Module):
    """One encoder-decoder branch.

    ``encoder`` is None when the path reads features from the other path's
    backbone; ``skip_mscfa`` is None when it borrows the other path's skips.
    """

    def __init__(self, cfg: ModelConfig, variant: Optional[str], own_skips: bool, dtype=None):
        c1, c2, c3 = cfg.channels
        mode = cfg.upsample_mode
        self.encoder = (
            Encoder(EncoderConfig(variant, (c1, c2, c3), cfg.image_channels), dtype=dtype) if variant else None
        )
        if own_skips:
            self.skip1 = _Identity() if cfg.disable_mscfa else MSCFA(c1, dtype=dtype)
            self.skip2 = _Identity() if cfg.disable_mscfa else MSCFA(c2, dtype=dtype)
        else:
            self.skip1 = self.skip2 = None
        self.bottleneck = _Identity() if cfg.disable_mscfa else MSCFA(c3, dtype=dtype)
        self.lfa = ConvBottleneck(c3, dtype=dtype) if cfg.disable_lfa else LFA(c3, cfg.resolved_patch_ratios, dtype=dtype)
        if cfg.disable_frfb:
            self.frfb_mid = UpsampleAdd(c2, mode, dtype=dtype)
            self.frfb_top = UpsampleAdd(c1, mode, dtype=dtype)
        else:
            self.frfb_mid = FRFB(c2, mode, dtype=dtype)
            self.frfb_top = FRFB(c1, mode, dtype=dtype)
        if cfg.disable_deep_supervision:
            self.heads = None
        else:
            self.head_bottleneck = Conv2d(c3, 1, 1, dtype=dtype)
            self.head_mid = Conv2d(c2, 1, 1, dtype=dtype)
            self.head_top = Conv2d(c1, 1, 1, dtype=dtype)
            self.heads = True

    def skips(self, feats: list[Tensor]) -> tuple[Tensor, Tensor]:
        return self.skip1(feats[0]), self.skip2(feats[1])


class DmADsNet(Module):
    """Full network; ``forward(image)`` returns a :class:`ForwardOutput`."""

    def __init__(self, cfg: ModelConfig, dtype=None, init: bool = True):
        self.cfg = cfg
        symmetric = cfg.skip_wiring == "symmetric"
        self.path1 = Path(cfg, "R18", own_skips=True, dtype=dtype)
        variant2 = None if cfg.single_backbone_r18 else "R34"
        self.path2 = Path(cfg, variant2, own_skips=symmetric, dtype=dtype)
        self.fusion = Fusion(cfg.channels[0], dtype=dtype)
        if init:
            init_parameters(self, cfg.seed)

    @property
    def paths(self) -> tuple[Path, Path]:
        return self.path1, self.path2

    def parameter_store(self) -> ParameterStore:
        return ParameterStore.from_module(self)

    def _check_image(self, image: Tensor) -> None:
        s = self.cfg.image_size
        if image.ndim != 4:
            raise ShapeError("forward", "input rank", 4, image.ndim)
        if image.shape[1] != self.cfg.image_channels:
            raise ShapeError("forward", "image channels", self.cfg.image_channels, image.shape[1])
        if image.shape[2:] != (s, s):
            raise ShapeError("forward", "spatial size", (s, s), image.shape[2:])

    def forward_paths(self, image: Tensor) -> tuple[Tensor, Tensor, list[Tensor]]:
        """Run both paths; returns (out1, out2, six tap feature maps or [])."""
        self._check_image(image)
        p1, p2 = self.paths
        feats1 = p1.encoder(image)
        feats2 = p2.encoder(image) if p2.encoder is not None else feats1
        skips1 = p1.skips(feats1)
        skips2 = p2.skips(feats2) if p2.skip1 is not None else skips1

        taps: list[Tensor] = []
        b1 = p1.bottleneck(feats1[2])
        b2 = p2.bottleneck(feats2[2])
        taps += [p1.head_bottleneck(b1), p2.head_bottleneck(b2)] if p1.heads else []
        out1, out2 = p1.lfa(b1), p2.lfa(b2)
        # k = 0 fuses with the half-resolution skip, k = 1 with the full one
        for k in (1, 0):
            stage1 = p1.frfb_mid if k else p1.frfb_top
            stage2 = p2.frfb_mid if k else p2.frfb_top
            out1 = stage1(skips1[k], out1)
            out2 = stage2(skips2[k], out2)
            if p1.heads:
                head1 = p1.head_mid if k else p1.head_top
                head2 = p2.head_mid if k else p2.head_top
                taps += [head1(out1), head2(out2)]
        return out1, out2, taps

    def forward(self, image: Tensor) -> ForwardOutput:
        out1, out2, taps = self.forward_paths(image)
        size = image.shape[2:]
        deep = [F.resize_bilinear(t, size) for t in taps]
        return ForwardOutput(self.fusion(out1, out2), deep)

    def macs(self, h=None, w=None):
        h = h or self.cfg.image_size
        w = w or self.cfg.image_size
        total = 0
        sizes = None
        for p in self.paths:
            if p.encoder is not None:
                sizes, m = p.encoder.macs(h, w)
                total += m
        (s1, s2, s3) = sizes
        for p in self.paths:
            if p.skip1 is not None:
                total += p.skip1.macs(*s1)[1] + p.skip2.macs(*s2)[1]
            total += p.bottleneck.macs(*s3)[1] + p.lfa.macs(*s3)[1]
            total += p.frfb_mid.macs(*s2)[1] + p.frfb_top.macs(*s1)[1]
            if p.heads:
                total += p.head_bottleneck.macs(*s3)[1] + p.head_mid.macs(*s2)[1] + p.head_top.macs(*s1)[1]
        total += self.fusion.macs(*s1)[1]
        return (h, w), total


def estimate_flops(cfg: ModelConfig) -> int:
    """Multiply-accumulates for one image of ``cfg.image_size`` (convs + gating matrices)."""
    return DmADsNet(cfg, init=False).macs()[1]
