"""Per-op gradient checks shared by the unit and acceptance suites."""

import numpy as np

from dmads import functional as F
from dmads.tensor import Tensor

from conftest import check_gradients, projected_sum


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def _away_from_zero(rng, shape, margin=0.05):
    a = rng.standard_normal(shape)
    return np.where(np.abs(a) < margin, a + np.sign(a + 1e-12) * margin, a)


OP_CASES = {
    "conv2d_s2_d1": lambda x, r: F.conv2d(x, r["w"], r["b"], stride=2, padding=1),
    "conv2d_dil2": lambda x, r: F.conv2d(x, r["w"], r["b"], padding=2, dilation=2),
    "conv2d_1x1": lambda x, r: F.conv2d(x, r["w1"], r["b"]),
    "relu": lambda x, r: F.relu(x),
    "sigmoid": lambda x, r: F.sigmoid(x),
    "add_broadcast": lambda x, r: F.add(x, r["s"]),
    "sub": lambda x, r: F.sub(x, r["y"]),
    "mul": lambda x, r: F.mul(x, r["y"]),
    "channel_scale": lambda x, r: F.channel_scale(x, r["s"]),
    "concat": lambda x, r: F.concat_channels(x, r["y"]),
    "slice": lambda x, r: F.slice_channels(x, 1, 3),
    "gap": lambda x, r: F.global_avg_pool(x),
    "linear": lambda x, r: F.linear(F.global_avg_pool(x), r["lw"], r["lb"]),
    "upsample_nearest": lambda x, r: F.upsample2x(x, "nearest"),
    "upsample_bilinear": lambda x, r: F.upsample2x(x, "bilinear"),
    "resize": lambda x, r: F.resize_bilinear(x, (5, 11)),
    "patches": lambda x, r: F.from_patches(F.conv2d(F.to_patches(x, 3), r["w"], padding=1), 3, 1, 4, 8),
    "log_clip": lambda x, r: F.log(F.clip(F.sigmoid(x), 1e-7, 1 - 1e-7)),
    "mean": lambda x, r: F.mean(x * x),
}


def op_gradient_error(name: str) -> float:
    """Worst relative error of one op's analytic gradients (64-bit, every entry)."""
    rng = np.random.default_rng(sum(map(ord, name)))
    x = t64(_away_from_zero(rng, (1, 4, 4, 8)), grad=True)
    aux = {
        "w": t64(rng.standard_normal((3, 4, 3, 3)) * 0.3, grad=True),
        "w1": t64(rng.standard_normal((3, 4, 1, 1)), grad=True),
        "b": t64(rng.standard_normal(3), grad=True),
        "s": t64(rng.standard_normal((1, 4, 1, 1)), grad=True),
        "y": t64(rng.standard_normal((1, 4, 4, 8)), grad=True),
        "lw": t64(rng.standard_normal((6, 4)), grad=True),
        "lb": t64(rng.standard_normal(6), grad=True),
    }
    fn = OP_CASES[name]
    probe = fn(x, aux)
    used = [x] + [t for t in aux.values() if _depends_on(probe, t)]
    return check_gradients(lambda: projected_sum(fn(x, aux)), used)


def _depends_on(out: Tensor, leaf: Tensor) -> bool:
    stack, seen = [out], set()
    while stack:
        node = stack.pop()
        if node is leaf:
            return True
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.extend(node._parents)
    return False
