"""Reference implementations kept deliberately naive and separate from the
library code paths they check."""

from __future__ import annotations

import math

import numpy as np


def naive_conv2d(x, w, b=None, stride=1, padding=0, dilation=1):
    """Direct 7-loop cross-correlation with zero padding."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    wo = (wd + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, o, ho, wo), dtype=np.float64)
    for bi in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if b is None else float(b[oc])
                    for ic in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                r = i * stride - padding + u * dilation
                                s = j * stride - padding + v * dilation
                                if 0 <= r < h and 0 <= s < wd:
                                    acc += float(x[bi, ic, r, s]) * float(w[oc, ic, u, v])
                    out[bi, oc, i, j] = acc
    return out


def bilinear_reference(x, out_h, out_w):
    """Per-pixel evaluation of half-pixel bilinear interpolation with edge clamp."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, out_h, out_w))

    def coord(i, n_in, n_out):
        src = (i + 0.5) * n_in / n_out - 0.5
        src = min(max(src, 0.0), n_in - 1)
        lo = int(math.floor(src))
        hi = min(lo + 1, n_in - 1)
        return lo, hi, src - lo

    for i in range(out_h):
        y0, y1, fy = coord(i, h, out_h)
        for j in range(out_w):
            x0, x1, fx = coord(j, w, out_w)
            top = (1 - fx) * x[:, :, y0, x0] + fx * x[:, :, y0, x1]
            bot = (1 - fx) * x[:, :, y1, x0] + fx * x[:, :, y1, x1]
            out[:, :, i, j] = (1 - fy) * top + fy * bot
    return out


def numeric_grad(f, arr: np.ndarray, eps: float = 1e-4, indices=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``arr`` (perturbed in place).

    With ``indices`` only those flat positions are evaluated; the rest stay 0.
    """
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def rel_err(a, b) -> float:
    """Norm-wise relative error ||a - b|| / max(||a||, ||b||)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def count_confusion(pred, gt):
    """Pixel-by-pixel tally."""
    tp = fp = fn = tn = 0
    for p, g in zip(np.asarray(pred).reshape(-1), np.asarray(gt).reshape(-1)):
        if p and g:
            tp += 1
        elif p and not g:
            fp += 1
        elif not p and g:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def adam_reference(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar Adam written out step by step in plain Python floats."""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
    return theta
