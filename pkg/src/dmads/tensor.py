"""Dense NCHW tensor with define-by-run reverse-mode autodiff.

Every differentiable op builds a result tensor that remembers its parents and
a closure mapping the upstream gradient to per-parent gradients.  Calling
``backward`` on a scalar walks the graph in reverse topological order, so each
node is visited once, after all of its consumers have contributed.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "TensorError",
    "ShapeError",
    "NumericalError",
    "GradTape",
    "no_grad",
    "is_grad_enabled",
    "default_dtype",
    "get_default_dtype",
    "set_default_dtype",
    "check_finite",
    "tensor",
]

_SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_state = {
    "dtype": np.dtype(np.float32),
    "grad_enabled": True,
    "check_finite": False,
    "tapes": [],
}


class TensorError(ValueError):
    """Invalid use of a tensor op (bad arguments, dtype mixing, graph misuse)."""


class ShapeError(TensorError):
    """Operand shapes are incompatible.

    ``op`` names the operation, ``dim`` the offending dimension, and
    ``expected``/``got`` the values that disagreed.
    """

    def __init__(self, op: str, dim: str, expected, got, detail: str = ""):
        self.op = op
        self.dim = dim
        self.expected = expected
        self.got = got
        msg = f"{op}: {dim} mismatch (expected {expected}, got {got})"
        if detail:
            msg += f"; {detail}"
        super().__init__(msg)


class NumericalError(ArithmeticError):
    """A non-finite value was produced while finite checks were enabled."""


def get_default_dtype() -> np.dtype:
    return _state["dtype"]


def set_default_dtype(dtype) -> None:
    dt = np.dtype(dtype)
    if dt not in _SUPPORTED_DTYPES:
        raise TensorError(f"unsupported dtype {dt}; use float32 or float64")
    _state["dtype"] = dt


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily switch the dtype used for newly created tensors."""
    previous = _state["dtype"]
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = previous


def is_grad_enabled() -> bool:
    return _state["grad_enabled"]


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording a graph (inference, optimizer updates)."""
    previous = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = previous


@contextlib.contextmanager
def check_finite(enabled: bool = True) -> Iterator[None]:
    """Debug mode: raise NumericalError as soon as an op yields NaN or Inf."""
    previous = _state["check_finite"]
    _state["check_finite"] = enabled
    try:
        yield
    finally:
        _state["check_finite"] = previous


class GradTape:
    """Ordered log of the ops executed while the tape is active.

    Recording is for inspection (e.g. asserting which ops a forward pass
    used); gradients flow through the graph links regardless.

        with GradTape() as tape:
            y = model(x)
        assert "max_pool" not in tape.op_names()
    """

    def __init__(self) -> None:
        self.records: list[tuple[str, tuple["Tensor", ...], "Tensor"]] = []

    def __enter__(self) -> "GradTape":
        _state["tapes"].append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state["tapes"].remove(self)

    def op_names(self) -> list[str]:
        return [name for name, _, _ in self.records]

    def __len__(self) -> int:
        return len(self.records)


class Tensor:
    """Numeric array plus optional gradient tracking.

    ``data`` is a float32 or float64 ndarray.  Leaf tensors created with
    ``requires_grad=True`` accumulate into ``grad`` on every backward pass;
    intermediate tensors keep only the links needed to propagate gradients.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        dt = np.dtype(dtype) if dtype is not None else None
        if dt is None:
            if isinstance(data, np.ndarray) and data.dtype in _SUPPORTED_DTYPES:
                dt = data.dtype
            else:
                dt = _state["dtype"]
        if dt not in _SUPPORTED_DTYPES:
            raise TensorError(f"unsupported dtype {dt}; use float32 or float64")
        self.data: np.ndarray = np.asarray(data, dtype=dt, order="C")
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable] = None
        self._op = "leaf"

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _from_op(
        cls,
        op: str,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
    ) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._op = op
        if _state["check_finite"] and not np.all(np.isfinite(data)):
            raise NumericalError(f"{op}: produced non-finite values")
        track = _state["grad_enabled"] and any(p.requires_grad for p in parents)
        out.requires_grad = track
        if track:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        for tape in _state["tapes"]:
            tape.records.append((op, tuple(parents), out))
        return out

    # -- array protocol -------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def op(self) -> str:
        return self._op

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar("item")

    def _not_scalar(self, what: str):
        raise TensorError(f"{what}: tensor with shape {self.shape} is not a scalar")

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, op={self._op}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators (implemented in functional) --------------------------------
    def __add__(self, other):
        from . import functional as F

        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F

        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F

        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F

        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import functional as F

        return F.div(self, other)

    def __neg__(self):
        from . import functional as F

        return F.neg(self)

    def sum(self) -> "Tensor":
        from . import functional as F

        return F.sum(self)

    def mean(self) -> "Tensor":
        from . import functional as F

        return F.mean(self)

    # -- autodiff -------------------------------------------------------------
    def backward(self) -> None:
        backward(self)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every leaf that ``loss`` depends on.

    The graph is released as it is consumed; a second backward through the
    same graph raises instead of silently producing zeros.
    """
    if loss.data.size != 1 or loss.ndim > 1 and any(d != 1 for d in loss.shape):
        raise TensorError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise TensorError("backward: loss does not depend on any tensor that requires grad")
    if loss._op != "leaf" and loss._backward is None:
        raise TensorError("backward: graph already consumed (double backward is unsupported)")

    order = _topological_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._backward is None:
            if node._op != "leaf":
                raise TensorError("backward: graph already consumed (double backward is unsupported)")
            if g is not None:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if g is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
        node._backward = None
        node._parents = ()
