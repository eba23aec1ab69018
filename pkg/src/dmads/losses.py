"""Pixel losses and the deep-supervision total."""

from __future__ import annotations

from . import functional as F
from .tensor import ShapeError, Tensor, TensorError

__all__ = ["BCE_EPS", "IOU_EPS", "bce_loss", "soft_iou_loss", "pixel_loss", "deep_supervised_loss"]

BCE_EPS = 1e-7
IOU_EPS = 1e-7


def _check(pred_logits: Tensor, gt: Tensor, op: str) -> None:
    if pred_logits.shape != gt.shape:
        raise ShapeError(op, "shape", pred_logits.shape, gt.shape)


def bce_loss(pred_logits: Tensor, gt: Tensor) -> Tensor:
    """Mean binary cross-entropy on sigmoid probabilities clamped to [eps, 1-eps]."""
    _check(pred_logits, gt, "bce_loss")
    p = F.clip(F.sigmoid(pred_logits), BCE_EPS, 1.0 - BCE_EPS)
    ll = gt * F.log(p) + (1.0 - gt) * F.log(1.0 - p)
    return -F.mean(ll)


def soft_iou_loss(pred_logits: Tensor, gt: Tensor) -> Tensor:
    """1 - (Σp·g + eps) / (Σp + Σg - Σp·g + eps) over the whole batch."""
    _check(pred_logits, gt, "soft_iou_loss")
    p = F.sigmoid(pred_logits)
    inter = F.sum(p * gt)
    union = F.sum(p) + F.sum(gt) - inter
    ratio = F.mul(inter + IOU_EPS, _reciprocal(union + IOU_EPS))
    return 1.0 - ratio


def _reciprocal(x: Tensor) -> Tensor:
    xd = x.data
    return Tensor._from_op("reciprocal", 1.0 / xd, (x,), lambda g: (-g / (xd * xd),))


def pixel_loss(pred_logits: Tensor, gt: Tensor, kind: str = "soft_iou") -> Tensor:
    if kind == "bce":
        return bce_loss(pred_logits, gt)
    if kind == "soft_iou":
        return soft_iou_loss(pred_logits, gt)
    raise TensorError(f"unknown loss kind {kind!r}; expected 'bce' or 'soft_iou'")


def deep_supervised_loss(out, gt: Tensor, theta: float = 0.5, kind: str = "soft_iou") -> Tensor:
    """loss(final) + theta * Σ loss(deep_i) over the six auxiliary maps.

    The auxiliary terms are summed left to right before scaling, so
    ``total - final == theta * deep_sum`` holds exactly for the returned parts
    (see :func:`loss_parts`).
    """
    total, _, _ = loss_parts(out, gt, theta, kind)
    return total


def loss_parts(out, gt: Tensor, theta: float = 0.5, kind: str = "soft_iou") -> tuple[Tensor, Tensor, Tensor | None]:
    """Return (total, final_term, deep_sum or None)."""
    n = len(out.deep_maps)
    if n not in (0, 6):
        raise TensorError(f"deep_supervised_loss: expected 0 or 6 deep maps, got {n}")
    final = pixel_loss(out.final_map, gt, kind)
    if n == 0:
        return final, final, None
    deep = pixel_loss(out.deep_maps[0], gt, kind)
    for m in out.deep_maps[1:]:
        deep = deep + pixel_loss(m, gt, kind)
    return final + theta * deep, final, deep
