"""Differentiable ops on :class:`~dmads.tensor.Tensor`.

Feature maps are NCHW.  Every op validates its operands up front and raises
:class:`ShapeError` naming the offending dimension.  Operands must share one
dtype; Python scalars adopt the dtype of the tensor they meet.
"""

from __future__ import annotations

import contextlib
from functools import lru_cache
from typing import Iterator, Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import ShapeError, Tensor, TensorError

__all__ = [
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "sum",
    "mean",
    "log",
    "clip",
    "relu",
    "sigmoid",
    "channel_scale",
    "concat_channels",
    "slice_channels",
    "global_avg_pool",
    "linear",
    "conv2d",
    "conv_output_size",
    "upsample2x",
    "resize_bilinear",
    "bilinear_matrix",
    "to_patches",
    "from_patches",
    "count_macs",
]

Operand = Union[Tensor, float, int]


def _as_tensor(x: Operand, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _same_dtype(op: str, *ts: Tensor) -> None:
    dt = ts[0].dtype
    for t in ts[1:]:
        if t.dtype != dt:
            raise TensorError(f"{op}: mixed dtypes {dt.name} and {t.dtype.name} in one graph")


def _require_rank4(op: str, x: Tensor, name: str = "input") -> None:
    if x.ndim != 4:
        raise ShapeError(op, f"{name} rank", 4, x.ndim)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        ra, rb = a.shape[::-1], b.shape[::-1]
        for i, (m, n) in enumerate(zip(ra, rb)):
            if m != n and m != 1 and n != 1:
                axis = max(a.ndim, b.ndim) - 1 - i
                raise ShapeError(op, f"axis {axis}", m, n) from None
        raise ShapeError(op, "shape", a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a: Operand, b: Operand) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _as_tensor(b, a)
    _same_dtype("add", a, b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor._from_op("add", a.data + b.data, (a, b), backward)


def sub(a: Operand, b: Operand) -> Tensor:
    if isinstance(a, Tensor):
        b = _as_tensor(b, a)
    else:
        a = _as_tensor(a, b)
    _same_dtype("sub", a, b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return Tensor._from_op("sub", a.data - b.data, (a, b), backward)


def mul(a: Operand, b: Operand) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _as_tensor(b, a)
    _same_dtype("mul", a, b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op("mul", ad * bd, (a, b), backward)


def div(a: Tensor, b: Union[float, int]) -> Tensor:
    """Divide by a Python scalar."""
    if isinstance(b, Tensor):
        raise TensorError("div: only division by a scalar constant is supported")
    return mul(a, 1.0 / b)


def neg(x: Tensor) -> Tensor:
    return Tensor._from_op("neg", -x.data, (x,), lambda g: (-g,))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape

    def backward(g):
        return (np.broadcast_to(g.reshape(()), shape).copy(),)

    return Tensor._from_op("sum", np.asarray(x.data.sum(), dtype=x.dtype), (x,), backward)


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size

    def backward(g):
        return (np.full(shape, g.reshape(()) / n, dtype=g.dtype),)

    return Tensor._from_op("mean", np.asarray(x.data.mean(), dtype=x.dtype), (x,), backward)


def log(x: Tensor) -> Tensor:
    xd = x.data
    if np.any(xd <= 0):
        raise TensorError("log: input must be strictly positive")
    return Tensor._from_op("log", np.log(xd), (x,), lambda g: (g / xd,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; the gradient is zero where clamping is active."""
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    return Tensor._from_op("clip", np.clip(xd, lo, hi), (x,), lambda g: (g * inside,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._from_op("relu", x.data * mask, (x,), lambda g: (g * mask,))


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _stable_sigmoid(x.data)
    return Tensor._from_op("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


# ---------------------------------------------------------------------------
# channel plumbing
# ---------------------------------------------------------------------------


def channel_scale(x: Tensor, s: Tensor) -> Tensor:
    """Multiply each channel of ``x`` (N×C×H×W) by ``s`` (N×C×1×1)."""
    _require_rank4("channel_scale", x)
    _require_rank4("channel_scale", s, "scale")
    if s.shape[0] != x.shape[0]:
        raise ShapeError("channel_scale", "batch", x.shape[0], s.shape[0])
    if s.shape[1] != x.shape[1]:
        raise ShapeError("channel_scale", "channels", x.shape[1], s.shape[1])
    if s.shape[2:] != (1, 1):
        raise ShapeError("channel_scale", "scale spatial size", (1, 1), s.shape[2:])
    return mul(x, s)


def concat_channels(*xs: Tensor) -> Tensor:
    if len(xs) == 1 and isinstance(xs[0], (list, tuple)):
        xs = tuple(xs[0])
    if not xs:
        raise TensorError("concat_channels: need at least one tensor")
    first = xs[0]
    _same_dtype("concat_channels", *xs)
    for t in xs:
        _require_rank4("concat_channels", t)
        if t.shape[0] != first.shape[0]:
            raise ShapeError("concat_channels", "batch", first.shape[0], t.shape[0])
        if t.shape[2:] != first.shape[2:]:
            raise ShapeError("concat_channels", "spatial size", first.shape[2:], t.shape[2:])
    bounds = np.cumsum([0] + [t.shape[1] for t in xs])

    def backward(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(xs)))

    data = np.concatenate([t.data for t in xs], axis=1)
    return Tensor._from_op("concat_channels", data, xs, backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    _require_rank4("slice_channels", x)
    c = x.shape[1]
    if not 0 <= start < stop <= c:
        raise ShapeError("slice_channels", "channel range", f"within [0, {c}]", (start, stop))
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, start:stop] = g
        return (full,)

    return Tensor._from_op("slice_channels", x.data[:, start:stop].copy(), (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean per channel: N×C×H×W -> N×C×1×1."""
    _require_rank4("global_avg_pool", x)
    shape = x.shape
    hw = shape[2] * shape[3]

    def backward(g):
        return (np.broadcast_to(g / hw, shape).copy(),)

    return Tensor._from_op("global_avg_pool", x.data.mean(axis=(2, 3), keepdims=True), (x,), backward)


def linear(z: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Dense map on a pooled vector: N×C×1×1 -> N×O×1×1 with ``weight`` O×C."""
    _require_rank4("linear", z)
    if z.shape[2:] != (1, 1):
        raise ShapeError("linear", "input spatial size", (1, 1), z.shape[2:])
    if weight.ndim != 2:
        raise ShapeError("linear", "weight rank", 2, weight.ndim)
    if weight.shape[1] != z.shape[1]:
        raise ShapeError("linear", "in_features", weight.shape[1], z.shape[1])
    parents = [z, weight]
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ShapeError("linear", "bias length", (weight.shape[0],), bias.shape)
        parents.append(bias)
    _same_dtype("linear", *parents)
    zv = z.data[:, :, 0, 0]
    wd = weight.data
    out = zv @ wd.T
    if bias is not None:
        out = out + bias.data
    n, o = out.shape

    def backward(g):
        gv = g[:, :, 0, 0]
        gz = (gv @ wd)[:, :, None, None] if z.requires_grad else None
        gw = gv.T @ zv if weight.requires_grad else None
        if bias is None:
            return gz, gw
        return gz, gw, gv.sum(axis=0)

    _count(n * o * wd.shape[1])
    return Tensor._from_op("linear", out.reshape(n, o, 1, 1), parents, backward)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

_mac_counters: list[list[int]] = []


@contextlib.contextmanager
def count_macs() -> Iterator[list[int]]:
    """Tally multiply-accumulates of conv2d/linear calls inside the block.

        with count_macs() as macs:
            model(x)
        total = macs[0]
    """
    counter = [0]
    _mac_counters.append(counter)
    try:
        yield counter
    finally:
        _mac_counters.remove(counter)


def _count(n: int) -> None:
    for c in _mac_counters:
        c[0] += int(n)


def conv_output_size(size: int, kernel: int, stride: int = 1, padding: int = 0, dilation: int = 1) -> int:
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def _windows(xp: np.ndarray, kh: int, kw: int, ho: int, wo: int, stride: int, dilation: int) -> np.ndarray:
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    return as_strided(
        xp,
        shape=(n, c, kh, kw, ho, wo),
        strides=(sn, sc, dilation * sh, dilation * sw, stride * sh, stride * sw),
        writeable=False,
    )


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
) -> Tensor:
    """2-D cross-correlation with zero padding, stride and dilation.

    Lowered to one batched GEMM over an im2col view; 1×1 stride-1 kernels
    skip the lowering entirely.
    """
    _require_rank4("conv2d", x)
    _require_rank4("conv2d", weight, "weight")
    if stride < 1:
        raise TensorError(f"conv2d: stride must be >= 1, got {stride}")
    if dilation < 1:
        raise TensorError(f"conv2d: dilation must be >= 1, got {dilation}")
    if padding < 0:
        raise TensorError(f"conv2d: padding must be >= 0, got {padding}")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ShapeError("conv2d", "in_channels", ci, c)
    parents = [x, weight]
    if bias is not None:
        if bias.shape != (o,):
            raise ShapeError("conv2d", "bias length", (o,), bias.shape)
        parents.append(bias)
    _same_dtype("conv2d", *parents)
    ho = conv_output_size(h, kh, stride, padding, dilation)
    wo = conv_output_size(w, kw, stride, padding, dilation)
    if ho < 1:
        raise ShapeError("conv2d", "output height", ">= 1", ho, f"input height {h} too small for kernel")
    if wo < 1:
        raise ShapeError("conv2d", "output width", ">= 1", wo, f"input width {w} too small for kernel")

    w2 = weight.data.reshape(o, c * kh * kw)
    pointwise = kh == 1 and kw == 1 and stride == 1 and padding == 0
    if pointwise:
        xp = x.data
        cols = xp.reshape(n, c, h * w)
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
        cols = _windows(xp, kh, kw, ho, wo, stride, dilation).reshape(n, c * kh * kw, ho * wo)
    out = np.matmul(w2, cols)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(n, o, ho, wo)
    _count(n * o * ho * wo * c * kh * kw)
    del cols

    def backward(g):
        g3 = g.reshape(n, o, ho * wo)
        grads: list[Optional[np.ndarray]] = [None, None]
        if weight.requires_grad:
            if pointwise:
                cols_b = xp.reshape(n, c, h * w)
            else:
                cols_b = _windows(xp, kh, kw, ho, wo, stride, dilation).reshape(n, c * kh * kw, ho * wo)
            gw = np.matmul(g3, cols_b.transpose(0, 2, 1)).sum(axis=0)
            grads[1] = gw.reshape(weight.shape)
        if x.requires_grad:
            gcols = np.matmul(w2.T, g3)
            if pointwise:
                grads[0] = gcols.reshape(n, c, h, w)
            else:
                gcols = gcols.reshape(n, c, kh, kw, ho, wo)
                gxp = np.zeros(xp.shape, dtype=g.dtype)
                h_span = stride * (ho - 1) + 1
                w_span = stride * (wo - 1) + 1
                for i in range(kh):
                    r0 = i * dilation
                    for j in range(kw):
                        c0 = j * dilation
                        gxp[:, :, r0 : r0 + h_span : stride, c0 : c0 + w_span : stride] += gcols[:, :, i, j]
                if padding:
                    gxp = gxp[:, :, padding : padding + h, padding : padding + w]
                grads[0] = gxp
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return Tensor._from_op("conv2d", out, parents, backward)


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------


@lru_cache(maxsize=64)
def _bilinear_matrix(n_out: int, n_in: int, dtype_name: str) -> np.ndarray:
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    m = m.astype(dtype_name)
    m.setflags(write=False)
    return m


def bilinear_matrix(n_out: int, n_in: int, dtype=np.float64) -> np.ndarray:
    """1-D linear interpolation weights, half-pixel centres, edge-clamped.

    Row ``i`` holds the weights that output sample ``i`` places on the input
    samples; every row sums to one.
    """
    return _bilinear_matrix(int(n_out), int(n_in), np.dtype(dtype).name)


def resize_bilinear(x: Tensor, size: tuple[int, int]) -> Tensor:
    """Separable bilinear resize of the spatial dims to ``size`` (H, W)."""
    _require_rank4("resize_bilinear", x)
    ho, wo = int(size[0]), int(size[1])
    if ho < 1 or wo < 1:
        raise ShapeError("resize_bilinear", "output size", ">= 1", (ho, wo))
    _, _, h, w = x.shape
    if (ho, wo) == (h, w):
        return Tensor._from_op("resize_bilinear", x.data.copy(), (x,), lambda g: (g,))
    rh = bilinear_matrix(ho, h, x.dtype)
    rw = bilinear_matrix(wo, w, x.dtype)
    out = np.matmul(np.matmul(rh, x.data), rw.T)

    def backward(g):
        return (np.matmul(np.matmul(rh.T, g), rw),)

    return Tensor._from_op("resize_bilinear", out, (x,), backward)


def upsample2x(x: Tensor, mode: str = "bilinear") -> Tensor:
    """Double H and W by nearest replication or bilinear interpolation."""
    _require_rank4("upsample2x", x)
    n, c, h, w = x.shape
    if h < 1 or w < 1:
        raise ShapeError("upsample2x", "spatial size", ">= 1", (h, w))
    if mode == "bilinear":
        return resize_bilinear(x, (2 * h, 2 * w))
    if mode != "nearest":
        raise TensorError(f"upsample2x: unknown mode {mode!r}")
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return Tensor._from_op("upsample2x", out, (x,), backward)


# ---------------------------------------------------------------------------
# patch tiling
# ---------------------------------------------------------------------------


def _tile(data: np.ndarray, p: int) -> np.ndarray:
    n, c, h, w = data.shape
    nh, nw = -(-h // p), -(-w // p)
    if (nh * p, nw * p) != (h, w):
        data = np.pad(data, ((0, 0), (0, 0), (0, nh * p - h), (0, nw * p - w)))
    tiles = data.reshape(n, c, nh, p, nw, p).transpose(0, 2, 4, 1, 3, 5)
    return np.ascontiguousarray(tiles).reshape(n * nh * nw, c, p, p)


def _untile(tiles: np.ndarray, p: int, n: int, h: int, w: int) -> np.ndarray:
    nh, nw = -(-h // p), -(-w // p)
    c = tiles.shape[1]
    full = tiles.reshape(n, nh, nw, c, p, p).transpose(0, 3, 1, 4, 2, 5).reshape(n, c, nh * p, nw * p)
    return np.ascontiguousarray(full[:, :, :h, :w])


def to_patches(x: Tensor, p: int) -> Tensor:
    """Zero-pad H, W up to multiples of ``p`` and cut into p×p tiles.

    Returns (N·nh·nw)×C×p×p with nh = ceil(H/p), nw = ceil(W/p); tiles are
    ordered row-major within each image.
    """
    _require_rank4("to_patches", x)
    if p < 1:
        raise TensorError(f"to_patches: patch size must be >= 1, got {p}")
    n, _, h, w = x.shape

    def backward(g):
        return (_untile(g, p, n, h, w),)

    return Tensor._from_op("to_patches", _tile(x.data, p), (x,), backward)


def from_patches(tiles: Tensor, p: int, batch: int, height: int, width: int) -> Tensor:
    """Inverse of :func:`to_patches`, cropping the padding away."""
    _require_rank4("from_patches", tiles)
    nh, nw = -(-height // p), -(-width // p)
    if tiles.shape[0] != batch * nh * nw:
        raise ShapeError("from_patches", "tile count", batch * nh * nw, tiles.shape[0])
    if tiles.shape[2:] != (p, p):
        raise ShapeError("from_patches", "tile size", (p, p), tiles.shape[2:])

    def backward(g):
        return (_tile(g, p),)

    return Tensor._from_op("from_patches", _untile(tiles.data, p, batch, height, width), (tiles,), backward)
