"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations only record onto a tape while a ``record()`` block is active, so
inference outside of one never allocates backward closures. A tape lives for
one training step: open it, run the forward pass, call ``backward`` on the
scalar loss, then drop it.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class DomainError(ValueError):
    """An op was evaluated outside its mathematical domain (log 0, x/0, ...)."""


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tape:
    """Ordered record of the ops executed since it was opened."""

    _ids = itertools.count()

    def __init__(self) -> None:
        self.id = next(Tape._ids)
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], BackwardFn]] = []

    def push(self, out: "Tensor", parents: tuple["Tensor", ...], fn: BackwardFn) -> None:
        out._node = len(self.nodes)
        out._tape = self
        self.nodes.append((out, parents, fn))

    def __len__(self) -> int:
        return len(self.nodes)


_local = threading.local()


def active_tape() -> Tape | None:
    return getattr(_local, "tape", None)


@contextmanager
def record() -> Iterator[Tape]:
    """Open a fresh tape for the current thread."""
    prev = active_tape()
    tape = Tape()
    _local.tape = tape
    try:
        yield tape
    finally:
        _local.tape = prev


@contextmanager
def no_record() -> Iterator[None]:
    prev = active_tape()
    _local.tape = None
    try:
        yield
    finally:
        _local.tape = prev


class Tensor:
    """A float64 array plus the bookkeeping reverse mode needs."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_node", "_tape", "_retain")
    __array_ufunc__ = None  # make ndarray (op) Tensor defer to the Tensor's reflected operator

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._node: int | None = None
        self._tape: Tape | None = None
        self._retain = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def tape_id(self) -> int | None:
        return None if self._tape is None else self._tape.id

    @property
    def T(self) -> "Tensor":
        return _ops().transpose(self, None)

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def retain_grad(self) -> "Tensor":
        """Keep ``.grad`` on this intermediate after ``backward``."""
        self._retain = True
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # operator sugar; implementations live in ops.py
    def __add__(self, other):
        return _ops().add(self, other)

    def __radd__(self, other):
        return _ops().add(other, self)

    def __sub__(self, other):
        return _ops().sub(self, other)

    def __rsub__(self, other):
        return _ops().sub(other, self)

    def __mul__(self, other):
        return _ops().mul(self, other)

    def __rmul__(self, other):
        return _ops().mul(other, self)

    def __truediv__(self, other):
        return _ops().div(self, other)

    def __rtruediv__(self, other):
        return _ops().div(other, self)

    def __neg__(self):
        return _ops().neg(self)

    def __pow__(self, exponent: float):
        return _ops().power(self, exponent)

    def __matmul__(self, other):
        return _ops().matmul(self, other)

    def __getitem__(self, idx):
        return _ops().getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return _ops().sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return _ops().mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _ops().reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return _ops().transpose(self, axes or None)

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return _ops().transpose(self, tuple(axes))

    def exp(self):
        return _ops().exp(self)

    def log(self):
        return _ops().log(self)

    def tanh(self):
        return _ops().tanh(self)

    def sigmoid(self):
        return _ops().sigmoid(self)

    def relu(self):
        return _ops().relu(self)


def _ops():
    from rdeepsc.engine import ops

    return ops


def _not_scalar(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data: np.ndarray, parents: tuple[Tensor, ...], fn: BackwardFn) -> Tensor:
    """Wrap an op output, recording it when a tape is open and a parent needs grad."""
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.push(out, parents, fn)
    return out


def _sweep(outputs: Tensor, seed: np.ndarray) -> dict[int, tuple[Tensor, np.ndarray]]:
    """Propagate ``seed`` backwards along the tape; returns id -> (tensor, grad)."""
    grads: dict[int, tuple[Tensor, np.ndarray]] = {id(outputs): (outputs, seed)}
    tape = outputs._tape
    if tape is None:
        return grads
    done: dict[int, tuple[Tensor, np.ndarray]] = {}
    for idx in range(outputs._node, -1, -1):
        out, parents, fn = tape.nodes[idx]
        entry = grads.pop(id(out), None)
        if entry is None:
            continue
        g = entry[1]
        done[id(out)] = (out, g)
        for parent, pg in zip(parents, fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = (parent, grads[key][1] + pg)
            else:
                grads[key] = (parent, pg)
    done.update(grads)
    return done


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Intermediates only keep their gradient when ``retain_grad()`` was called.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    for tensor, g in _sweep(loss, np.ones_like(loss.data)).values():
        if not tensor.requires_grad:
            continue
        if tensor.is_leaf:
            tensor.grad = g.copy() if tensor.grad is None else tensor.grad + g
        elif tensor._retain:
            tensor.grad = g


def grad(loss: Tensor, inputs: Sequence[Tensor]) -> list[np.ndarray]:
    """Functional gradient: returns d(loss)/d(input) without touching ``.grad``."""
    if loss.data.size != 1:
        raise ShapeError(f"grad needs a scalar loss, got shape {loss.shape}")
    found = _sweep(loss, np.ones_like(loss.data))
    return [found[id(x)][1] if id(x) in found else np.zeros_like(x.data) for x in inputs]
