"""Layers shared by the encoders and the attention blocks.

Modules own their parameters as attributes; ``named_parameters`` walks them
in attribute-definition order, which is also the order in which
:func:`init_parameters` draws from the seeded generator.
"""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from typing import Iterator, Optional

import numpy as np

from . import functional as F
from .tensor import ShapeError, Tensor, TensorError, get_default_dtype

__all__ = [
    "Module",
    "ModuleList",
    "Conv2d",
    "ResidualBlock",
    "SEGate",
    "ESA",
    "ParameterStore",
    "init_parameters",
    "count_parameters",
]


def _param(shape: tuple[int, ...], dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class Module:
    """Minimal container: parameters and sub-modules are plain attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def macs(self, h: int, w: int) -> tuple[tuple[int, int], int]:
        """Return ((out_h, out_w), multiply-accumulates) for a 1-image input."""
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, modules=()):
        self._items: list[Module] = list(modules)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for i, m in enumerate(self._items):
            yield from m.named_parameters(f"{prefix}{i}.")

    def __iter__(self):
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class Conv2d(Module):
    """Convolution with zero padding; default padding keeps H, W for stride 1."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int = 3,
        stride: int = 1,
        padding: Optional[int] = None,
        dilation: int = 1,
        bias: bool = True,
        zero_init: bool = False,
        dtype=None,
    ):
        if dilation < 1:
            raise TensorError(f"Conv2d: dilation must be >= 1, got {dilation}")
        dtype = dtype or get_default_dtype()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = dilation * (kernel_size - 1) // 2 if padding is None else padding
        self.dilation = dilation
        # residual-branch closers start at zero so unnormalised stacks begin as identities
        self.zero_init = zero_init
        self.weight = _param((out_channels, in_channels, kernel_size, kernel_size), dtype)
        self.bias = _param((out_channels,), dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.dilation)

    def macs(self, h, w):
        k = self.kernel_size
        ho = F.conv_output_size(h, k, self.stride, self.padding, self.dilation)
        wo = F.conv_output_size(w, k, self.stride, self.padding, self.dilation)
        return (ho, wo), self.out_channels * ho * wo * self.in_channels * k * k


class ResidualBlock(Module):
    """relu(conv3x3(relu(conv3x3(x))) + x); channels and size preserved."""

    def __init__(self, channels: int, dtype=None):
        self.channels = channels
        self.conv1 = Conv2d(channels, channels, 3, dtype=dtype)
        self.conv2 = Conv2d(channels, channels, 3, zero_init=True, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError("residual_block", "channels", self.channels, x.shape[1] if x.ndim == 4 else x.shape)
        return F.relu(self.conv2(F.relu(self.conv1(x))) + x)

    def macs(self, h, w):
        _, a = self.conv1.macs(h, w)
        _, b = self.conv2.macs(h, w)
        return (h, w), a + b


class SEGate(Module):
    """Squeeze-and-excitation gate with reduction ratio 2.

    ``weights(x)`` gives sigmoid(W2 relu(W1 gap(x))) as N×C×1×1;
    ``forward(x)`` returns ``(x * weights, weights)`` so callers can reuse the
    channel vector.
    """

    def __init__(self, channels: int, dtype=None):
        if channels % 2:
            raise ShapeError("se_gate", "channels", "an even count", channels)
        dtype = dtype or get_default_dtype()
        self.channels = channels
        self.w1 = _param((channels // 2, channels), dtype)
        self.b1 = _param((channels // 2,), dtype)
        self.w2 = _param((channels, channels // 2), dtype)
        self.b2 = _param((channels,), dtype)

    def weights(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError("se_gate", "channels", self.channels, x.shape[1] if x.ndim == 4 else x.shape)
        z = F.global_avg_pool(x)
        return F.sigmoid(F.linear(F.relu(F.linear(z, self.w1, self.b1)), self.w2, self.b2))

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        s = self.weights(x)
        return F.channel_scale(x, s), s

    def macs(self, h, w):
        c = self.channels
        return (h, w), 2 * c * (c // 2)


class ESA(Module):
    """Spatial attention mask from a reduce, downsample, refine, restore path.

    m = sigmoid(restore(up2(refine2(relu(refine1(down(reduce(x))))))));  y = x * m.
    """

    def __init__(self, channels: int, upsample_mode: str = "bilinear", dtype=None):
        if channels % 4:
            raise ShapeError("esa", "channels", "a multiple of 4", channels)
        r = channels // 4
        self.channels = channels
        self.upsample_mode = upsample_mode
        self.reduce = Conv2d(channels, r, 1, dtype=dtype)
        self.down = Conv2d(r, r, 3, stride=2, padding=1, dtype=dtype)
        self.refine1 = Conv2d(r, r, 3, dtype=dtype)
        self.refine2 = Conv2d(r, r, 3, dtype=dtype)
        self.restore = Conv2d(r, channels, 1, dtype=dtype)

    def mask(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError("esa", "channels", self.channels, x.shape[1] if x.ndim == 4 else x.shape)
        h, w = x.shape[2:]
        if h < 4 or w < 4:
            raise ShapeError("esa", "spatial size", ">= 4", (h, w))
        if h % 2 or w % 2:
            raise ShapeError("esa", "spatial size", "even", (h, w))
        s = self.down(self.reduce(x))
        s = self.refine2(F.relu(self.refine1(s)))
        return F.sigmoid(self.restore(F.upsample2x(s, self.upsample_mode)))

    def forward(self, x: Tensor) -> Tensor:
        return x * self.mask(x)

    def macs(self, h, w):
        total = 0
        _, m = self.reduce.macs(h, w)
        total += m
        (hs, ws), m = self.down.macs(h, w)
        total += m
        for conv in (self.refine1, self.refine2):
            _, m = conv.macs(hs, ws)
            total += m
        _, m = self.restore.macs(2 * hs, 2 * ws)
        return (h, w), total + m


class ParameterStore(OrderedDict):
    """Name -> Tensor mapping in deterministic order."""

    @classmethod
    def from_module(cls, module: Module) -> "ParameterStore":
        return cls(module.named_parameters())

    def count(self) -> int:
        return int(np.sum([t.size for t in self.values()], dtype=np.int64))

    def to_bytes(self) -> bytes:
        parts = []
        for name, t in self.items():
            parts.append(name.encode())
            parts.append(t.data.astype(t.dtype.newbyteorder("<"), copy=False).tobytes())
        return b"".join(parts)

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def load_into(self, module: Module, strict: bool = True) -> None:
        own = dict(module.named_parameters())
        if strict and set(own) != set(self):
            missing = sorted(set(own) - set(self))
            extra = sorted(set(self) - set(own))
            raise KeyError(f"parameter names differ: missing={missing[:5]} unexpected={extra[:5]}")
        for name, t in self.items():
            if name not in own:
                continue
            target = own[name]
            if target.shape != t.shape:
                raise ShapeError("load_parameters", name, target.shape, t.shape)
            target.data = np.array(t.data, dtype=target.dtype)


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _zero_init_ids(module: Module) -> set[int]:
    ids: set[int] = set()
    stack = [module]
    while stack:
        m = stack.pop()
        if isinstance(m, Conv2d) and m.zero_init:
            ids.add(id(m.weight))
        items = m._items if isinstance(m, ModuleList) else vars(m).values()
        stack.extend(v for v in items if isinstance(v, Module))
    return ids


def init_parameters(module: Module, seed: int) -> ParameterStore:
    """(Re)initialise every parameter of ``module`` from ``seed``.

    Kernels and gating matrices get U(-sqrt(6/fan_in), sqrt(6/fan_in)) with
    fan_in = product of all but the leading dim; 1-D tensors (biases) are
    zeroed, as are kernels of convs built with ``zero_init=True``.  Same
    seed, same module structure -> bit-identical values.
    """
    rng = np.random.default_rng(int(seed) & (2**64 - 1))
    store = ParameterStore.from_module(module)
    zeroed = _zero_init_ids(module)
    for t in store.values():
        if t.ndim == 1 or id(t) in zeroed:
            t.data = np.zeros(t.shape, dtype=t.dtype)
        else:
            fan_in = int(np.prod(t.shape[1:]))
            t.data = he_uniform(rng, t.shape, fan_in, t.dtype)
        t.grad = None
    return store


def count_parameters(params) -> int:
    """Total element count of a module or a parameter mapping."""
    if isinstance(params, Module):
        params = ParameterStore.from_module(params)
    return int(sum(int(t.size) for t in params.values()))
