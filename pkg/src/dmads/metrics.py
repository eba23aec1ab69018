"""Confusion counts and overlap metrics for binary masks."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

__all__ = ["ConfusionCounts", "SampleMetrics", "MetricsReport", "confusion_counts", "compute_metrics", "binarize", "evaluate"]


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class SampleMetrics:
    dice: float
    iou: float
    precision: float
    recall: float
    counts: ConfusionCounts

    @classmethod
    def from_counts(cls, c: ConfusionCounts) -> "SampleMetrics":
        tp, fp, fn = c.tp, c.fp, c.fn
        # nothing predicted and nothing present: a perfect (empty) segmentation
        if tp + fp + fn == 0:
            return cls(1.0, 1.0, 1.0, 1.0, c)
        dice = 2 * tp / (2 * tp + fp + fn)
        iou = tp / (tp + fp + fn)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        return cls(dice, iou, precision, recall, c)

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("dice", "iou", "precision", "recall")}
        d.update(asdict(self.counts))
        return d


@dataclass
class MetricsReport:
    samples: list[SampleMetrics] = field(default_factory=list)

    def _mean(self, key: str) -> float:
        if not self.samples:
            return float("nan")
        return float(np.mean([getattr(s, key) for s in self.samples]))

    @property
    def dice(self) -> float:
        return self._mean("dice")

    @property
    def iou(self) -> float:
        return self._mean("iou")

    @property
    def precision(self) -> float:
        return self._mean("precision")

    @property
    def recall(self) -> float:
        return self._mean("recall")

    def mean(self) -> dict:
        return {k: self._mean(k) for k in ("dice", "iou", "precision", "recall")}


def _as_binary(a, name: str) -> np.ndarray:
    a = np.asarray(getattr(a, "data", a))
    if a.dtype == bool:
        return a
    if not np.all((a == 0) | (a == 1)):
        raise ValueError(f"{name} must be binary (0/1)")
    return a.astype(bool)


def binarize(logits, threshold: float = 0.5) -> np.ndarray:
    """Binary mask from logits: sigmoid(z) >= threshold."""
    z = np.asarray(getattr(logits, "data", logits), dtype=np.float64)
    cut = np.log(threshold / (1.0 - threshold))
    return z >= cut


def confusion_counts(pred, gt) -> ConfusionCounts:
    p = _as_binary(pred, "pred")
    g = _as_binary(gt, "gt")
    if p.shape != g.shape:
        raise ValueError(f"pred shape {p.shape} != gt shape {g.shape}")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp, fp, fn, p.size - tp - fp - fn)


def compute_metrics(pred, gt) -> SampleMetrics:
    """Dice, IoU, precision and recall of one binary prediction."""
    return SampleMetrics.from_counts(confusion_counts(pred, gt))


def evaluate(preds, gts) -> MetricsReport:
    """Per-sample metrics for paired masks; a leading batch axis is split into samples."""
    report = MetricsReport()
    for p, g in zip(preds, gts):
        report.samples.append(compute_metrics(p, g))
    return report
