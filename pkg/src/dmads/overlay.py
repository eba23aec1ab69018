"""Error-coded overlay images: false positives red, false negatives green."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .metrics import _as_binary

__all__ = ["RED", "GREEN", "WHITE", "BLACK", "render_overlay", "count_color"]

RED = (255, 0, 0)
GREEN = (0, 255, 0)
WHITE = (255, 255, 255)
BLACK = (0, 0, 0)


def _squeeze2d(a: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(a)
    while a.ndim > 2 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise ValueError(f"{name} must be a single H×W mask, got shape {a.shape}")
    return a


def render_overlay(pred, gt, base_image: Optional[np.ndarray] = None, alpha: float = 1.0) -> np.ndarray:
    """H×W×3 uint8 image coding each pixel by its confusion class.

    TP white, TN black, FP red, FN green.  With ``base_image`` (H×W or
    H×W×3, uint8 or [0, 1] float) true negatives show the image and the three
    coded classes are blended over it with opacity ``alpha``.
    """
    p = _squeeze2d(_as_binary(pred, "pred"), "pred")
    g = _squeeze2d(_as_binary(gt, "gt"), "gt")
    if p.shape != g.shape:
        raise ValueError(f"pred shape {p.shape} != gt shape {g.shape}")
    out = np.zeros(p.shape + (3,), dtype=np.float64)
    out[p & g] = WHITE
    out[p & ~g] = RED
    out[~p & g] = GREEN
    if base_image is not None:
        base = np.asarray(base_image, dtype=np.float64)
        if base.ndim == 3 and base.shape[0] in (1, 3) and base.shape[-1] not in (1, 3):
            base = base.transpose(1, 2, 0)
        if base.ndim == 2:
            base = base[..., None]
        if base.shape[:2] != p.shape:
            raise ValueError(f"base image shape {base.shape[:2]} != mask shape {p.shape}")
        if base.max() <= 1.0:
            base = base * 255.0
        base = np.broadcast_to(base, p.shape + (3,))
        coded = p | g
        out = np.where(coded[..., None], alpha * out + (1.0 - alpha) * base, base)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def count_color(image: np.ndarray, color: tuple[int, int, int]) -> int:
    return int(np.count_nonzero(np.all(image == np.asarray(color, dtype=image.dtype), axis=-1)))
