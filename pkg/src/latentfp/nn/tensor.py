"""Tensor container and reverse-mode differentiation.

Every op in :mod:`latentfp.nn.ops` returns a new :class:`Tensor` that remembers
its parents and a closure mapping the output gradient to parent gradients.
The graph is rebuilt on each forward pass and walked once by :func:`backward`.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Sequence

import numpy as np

from latentfp.errors import ShapeError

DTYPE = np.float64

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph construction inside the block (inference)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def kink_monitor() -> Iterator[list]:
    """Collect the branch decisions of non-smooth ops (relu masks, pool argmax, abs signs).

    Finite-difference checks compare the recorded decisions of the perturbed
    passes; a different record means the perturbation crossed a kink.
    """
    prev = getattr(_state, "kinks", None)
    record: list = []
    _state.kinks = record
    try:
        yield record
    finally:
        _state.kinks = prev


def record_kink(decision: np.ndarray) -> None:
    record = getattr(_state, "kinks", None)
    if record is not None:
        record.append(np.packbits(decision.astype(bool)).tobytes() if decision.dtype == bool
                      else decision.tobytes())


BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    """Float64 array with an optional gradient buffer.

    Activations are rank-4 ``(batch, channels, height, width)``; parameters
    keep their natural shape (kernels are rank-4, biases and norm vectors rank-1).
    """

    __slots__ = ("data", "_grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DTYPE, copy=True) if not isinstance(data, np.ndarray) \
            else np.ascontiguousarray(data, dtype=DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self._grad: np.ndarray | None = np.zeros_like(arr) if self.requires_grad else None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple["Tensor", ...], fn: BackwardFn) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.name = None
        track = _grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._grad = None  # materialized lazily, see the grad property
        out._parents = parents if track else ()
        out._backward = fn if track else None
        return out

    @property
    def grad(self) -> np.ndarray | None:
        if self.requires_grad and self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value: np.ndarray | None) -> None:
        self._grad = value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; the implementations live in ops.
    def __add__(self, other):
        from latentfp.nn import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from latentfp.nn import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from latentfp.nn import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: float):
        from latentfp.nn import ops
        return ops.scale(self, 1.0 / float(other))

    def __neg__(self):
        from latentfp.nn import ops
        return ops.scale(self, -1.0)


def _not_scalar(t: Tensor) -> float:
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


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
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tracked tensor reachable from ``loss``.

    Gradients accumulate across calls; call :meth:`Tensor.zero_grad` to reset.
    """
    if loss.shape != (1, 1, 1, 1):
        raise ShapeError(f"backward() needs a scalar loss of shape (1, 1, 1, 1), got {loss.shape}")
    if not loss.requires_grad:
        return
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad += g  # leaves own their buffer
        elif node._grad is None:
            node._grad = g  # op outputs may alias; never mutated in place
        else:
            node._grad = node._grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg
