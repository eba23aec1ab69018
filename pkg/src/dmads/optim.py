from __future__ import annotations

from typing import Iterable, Optional

import numpy as np

from .nn import Module, ParameterStore
from .tensor import Tensor

__all__ = ["Adam", "adam_step"]


def adam_step(
    param: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    step: int,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place on ``param``, ``m`` and ``v``.

    ``step`` is the 1-based count of updates including this one.
    """
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    param -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype, copy=False)


class Adam:
    """Adam over a named parameter set; moment buffers live in ``state``."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if isinstance(params, Module):
            params = ParameterStore.from_module(params)
        elif not isinstance(params, dict):
            params = ParameterStore((f"param{i}", p) for i, p in enumerate(params))
        self.params: dict[str, Tensor] = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        missing = [k for k, p in self.params.items() if p.grad is None]
        if missing:
            raise ValueError(f"adam: missing gradient for parameter {missing[0]!r}")
        self.step_count += 1
        for k, p in self.params.items():
            adam_step(p.data, p.grad, self.m[k], self.v[k], self.step_count, self.lr, self.beta1, self.beta2, self.eps)

    def state_dict(self) -> dict:
        return {"step": self.step_count, "m": self.m, "v": self.v}
