"""Training loop with periodic validation and patience-based early stopping.

One epoch is one pass over the training split.  Validation runs only on
epochs that are multiples of ``eval_every``; the epochs-since-best counter
ticks every epoch and resets when a check improves the best Dice, so the run
stops at the first check at least ``patience`` epochs after the last
improvement, or at ``max_epochs``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .checkpoint import save_checkpoint
from .data import DataError, SegmentationSample, stack_batch
from .losses import deep_supervised_loss
from .metrics import MetricsReport, binarize, compute_metrics
from .model import DmADsNet
from .nn import ParameterStore
from .optim import Adam
from .tensor import NumericalError, Tensor, no_grad

__all__ = ["Schedule", "TrainState", "EarlyStopping", "TrainResult", "train", "predict", "validate", "simulate_schedule"]


@dataclass(frozen=True)
class Schedule:
    max_epochs: int = 400
    eval_every: int = 10
    patience: int = 50
    batch_size: int = 4
    lr: float = 1e-3
    seed: int = 0
    max_steps: Optional[int] = None
    # stop as soon as a validation check reaches this Dice
    target_metric: Optional[float] = None


@dataclass
class TrainState:
    epoch: int = 0
    step: int = 0
    best_metric: float = -math.inf
    best_epoch: int = 0
    epochs_since_best: int = 0


class EarlyStopping:
    """Best-metric tracking for the epoch schedule.

    Call :meth:`end_epoch` once per finished epoch with the validation metric
    (or None off-check); it returns ``(improved, stop)``.
    """

    def __init__(self, schedule: Schedule, state: Optional[TrainState] = None):
        self.schedule = schedule
        self.state = state or TrainState()

    def is_check_epoch(self, epoch: int) -> bool:
        return epoch % self.schedule.eval_every == 0

    def end_epoch(self, epoch: int, metric: Optional[float]) -> tuple[bool, bool]:
        s = self.state
        s.epoch = epoch
        s.epochs_since_best += 1
        improved = False
        if metric is not None:
            if metric > s.best_metric:
                s.best_metric = metric
                s.best_epoch = epoch
                s.epochs_since_best = 0
                improved = True
            elif s.epochs_since_best >= self.schedule.patience:
                return improved, True
        return improved, epoch >= self.schedule.max_epochs


def simulate_schedule(metric_at: Callable[[int], float], schedule: Schedule = Schedule()) -> TrainState:
    """Drive :class:`EarlyStopping` with a synthetic validation curve."""
    stopper = EarlyStopping(schedule)
    for epoch in range(1, schedule.max_epochs + 1):
        metric = metric_at(epoch) if stopper.is_check_epoch(epoch) else None
        _, stop = stopper.end_epoch(epoch, metric)
        if stop:
            break
    return stopper.state


@dataclass
class TrainResult:
    state: TrainState
    best_params: ParameterStore
    log: list[dict] = field(default_factory=list)
    stop_reason: str = ""


def predict(model: DmADsNet, images: np.ndarray, batch_size: int = 4) -> np.ndarray:
    """Final-map logits for a stack of images, without recording a graph."""
    outs = []
    with no_grad():
        for i in range(0, len(images), batch_size):
            x = Tensor(images[i : i + batch_size], dtype=_model_dtype(model))
            outs.append(model(x).final_map.data)
    return np.concatenate(outs, axis=0)


def validate(model: DmADsNet, samples: Sequence[SegmentationSample], batch_size: int = 4) -> MetricsReport:
    images, masks = stack_batch(samples)
    pred = binarize(predict(model, images, batch_size))
    report = MetricsReport()
    for p, g in zip(pred, masks):
        report.samples.append(compute_metrics(p, g))
    return report


def _model_dtype(model: DmADsNet):
    return next(iter(model.parameter_store().values())).dtype


def _snapshot(model: DmADsNet) -> ParameterStore:
    return ParameterStore((k, Tensor(v.data.copy())) for k, v in model.parameter_store().items())


def train(
    model: DmADsNet,
    train_set: Sequence[SegmentationSample],
    val_set: Sequence[SegmentationSample],
    schedule: Schedule = Schedule(),
    checkpoint_path=None,
    log_path=None,
    on_record: Optional[Callable[[dict], None]] = None,
) -> TrainResult:
    """Fit ``model`` with Adam on the deep-supervised loss from its config."""
    if not train_set:
        raise DataError("training split is empty")
    if not val_set:
        raise DataError("validation split is empty")
    cfg = model.cfg
    dtype = _model_dtype(model)
    images, masks = stack_batch(train_set)
    images, masks = images.astype(dtype), masks.astype(dtype)
    opt = Adam(model, lr=schedule.lr)
    stopper = EarlyStopping(schedule)
    state = stopper.state
    rng = np.random.default_rng(schedule.seed)
    log: list[dict] = []
    log_file = open(log_path, "w") if log_path else None
    best = _snapshot(model)
    reason = "max_epochs"

    def emit(record: dict) -> None:
        log.append(record)
        if log_file:
            log_file.write(json.dumps(record) + "\n")
            log_file.flush()
        if on_record:
            on_record(record)

    try:
        for epoch in range(1, schedule.max_epochs + 1):
            order = rng.permutation(len(images))
            losses = []
            for start in range(0, len(order), schedule.batch_size):
                idx = order[start : start + schedule.batch_size]
                x, y = Tensor(images[idx]), Tensor(masks[idx])
                opt.zero_grad()
                loss = deep_supervised_loss(model(x), y, cfg.theta, cfg.loss_kind)
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericalError(f"non-finite loss {value} at step {state.step + 1} (epoch {epoch})")
                loss.backward()
                opt.step()
                state.step = opt.step_count
                losses.append(value)
                if schedule.max_steps is not None and state.step >= schedule.max_steps:
                    break
            emit({"kind": "epoch", "epoch": epoch, "step": state.step, "loss": float(np.mean(losses))})

            out_of_steps = schedule.max_steps is not None and state.step >= schedule.max_steps
            metric = None
            if stopper.is_check_epoch(epoch) or out_of_steps:
                report = validate(model, val_set, schedule.batch_size)
                metric = report.dice
            improved, stop = stopper.end_epoch(epoch, metric)
            if metric is not None:
                rec = {"kind": "val", "epoch": epoch, "step": state.step, **report.mean()}
                rec["best"] = state.best_metric
                emit(rec)
            if improved:
                best = _snapshot(model)
                if checkpoint_path:
                    save_checkpoint(best, cfg, checkpoint_path)
            if stop:
                reason = "max_epochs" if epoch >= schedule.max_epochs and state.epochs_since_best < schedule.patience else "patience"
                break
            if metric is not None and schedule.target_metric is not None and metric >= schedule.target_metric:
                reason = "target_metric"
                break
            if out_of_steps:
                reason = "max_steps"
                break
    finally:
        if log_file:
            log_file.close()
    return TrainResult(state, best, log, reason)
