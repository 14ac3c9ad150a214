"""Differentiable primitives.

Every op takes Tensors (or array-likes, which are treated as constants) and
returns a Tensor; the backward closure receives the upstream gradient and
returns one gradient per parent, ``None`` for parents that need none.
"""

from __future__ import annotations

import numpy as np

from rdeepsc import diagnostics
from rdeepsc.engine.tensor import DomainError, ShapeError, Tensor, as_tensor, make_result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- elementwise binary -------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def back(g):
        return (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    return make_result(a.data * b.data, (a, b), back)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    if np.any(b.data == 0):
        raise DomainError("division by zero")
    out = a.data / b.data

    def back(g):
        return (
            _unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None,
        )

    return make_result(out, (a, b), back)


# -- elementwise unary --------------------------------------------------------


def neg(x) -> Tensor:
    x = as_tensor(x)
    return make_result(-x.data, (x,), lambda g: (-g,))


def power(x, exponent: float) -> Tensor:
    x = as_tensor(x)
    if exponent < 1 and np.any(x.data < 0):
        raise DomainError(f"negative base with exponent {exponent}")
    if exponent < 0 and np.any(x.data == 0):
        raise DomainError(f"zero base with exponent {exponent}")
    out = x.data**exponent
    return make_result(out, (x,), lambda g: (g * exponent * x.data ** (exponent - 1),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data > 709.0):
        raise DomainError("exp overflow: argument above 709")
    out = np.exp(x.data)
    return make_result(out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log of non-positive value")
    return make_result(np.log(x.data), (x,), lambda g: (g / x.data,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return make_result(out, (x,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = _sigmoid(x.data)
    return make_result(out, (x,), lambda g: (g * out * (1.0 - out),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp into [lo, hi]; gradient passes only where the value was inside."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return make_result(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


_UNARY = {"exp": exp, "log": log, "tanh": tanh, "sigmoid": sigmoid, "relu": relu, "neg": neg}
_BINARY = {"+": add, "-": sub, "*": mul, "/": div, "add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op_kind: str, a, b=None) -> Tensor:
    """Dispatch by name: binary ``+ - * /`` or unary ``exp log tanh sigmoid relu``."""
    if op_kind in _BINARY:
        if b is None:
            raise ValueError(f"{op_kind!r} needs two operands")
        return _BINARY[op_kind](a, b)
    if op_kind in _UNARY:
        return _UNARY[op_kind](a)
    raise ValueError(f"unknown elementwise op {op_kind!r}")


# -- reductions and shape ops -------------------------------------------------


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for a in axes:
        if not -ndim <= a < ndim:
            raise ShapeError(f"axis {a} out of range for ndim {ndim}")
        out.append(a % ndim)
    return tuple(out)


def _expand(g: np.ndarray, shape, axes, keepdims):
    if axes is not None and not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)
    return make_result(out, (x,), lambda g: (_expand(g, x.shape, axes, keepdims),))


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    count = x.data.size if axes is None else int(np.prod([x.shape[a] for a in axes]))
    out = x.data.mean(axis=axes, keepdims=keepdims)
    return make_result(out, (x,), lambda g: (_expand(g / count, x.shape, axes, keepdims),))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} to {tuple(shape)}") from None
    return make_result(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(a % x.ndim for a in axes)
    inverse = tuple(np.argsort(axes))
    return make_result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)
    out = x.data[idx]
    fancy = isinstance(idx, np.ndarray) or (
        isinstance(idx, tuple) and any(isinstance(i, (np.ndarray, list)) for i in idx)
    )

    def back(g):
        full = np.zeros_like(x.data)
        if fancy:
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return make_result(out, (x,), back)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"cannot concatenate shapes {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return make_result(out, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"cannot stack shapes {[t.shape for t in tensors]}") from exc
    n = len(tensors)
    return make_result(
        out, tuple(tensors), lambda g: tuple(np.take(g, i, axis=axis) for i in range(n))
    )


# -- linear algebra -----------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul batch dims not broadcastable: {a.shape} @ {b.shape}") from None

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return make_result(out, (a, b), back)


# -- normalizations -----------------------------------------------------------


def _check_axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} invalid for shape {x.shape}")
    return axis % x.ndim


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    axis = _check_axis(x, axis)
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    s = e.sum(axis=axis, keepdims=True)
    out = e / s

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (x,), back)


def calibrated_softmax(x, weights, axis: int = -1) -> Tensor:
    """Softmax with per-entry multiplicative mass, renormalized along ``axis``.

    ``out ∝ weights * exp(x)``. With all weights equal to 1.0 the result is
    bitwise identical to ``softmax``. Rows whose weighted mass is zero fall
    back to a uniform distribution over their unmasked entries and raise the
    ``degenerate_attention`` diagnostics flag.
    """
    x, w = as_tensor(x), as_tensor(weights)
    axis = _check_axis(x, axis)
    _broadcast_shape(x, w)
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    we = w.data * e
    s = we.sum(axis=axis, keepdims=True)
    bad = s == 0
    if np.any(bad):
        diagnostics.flag("degenerate_attention", int(bad.sum()))
        alive = (e > 0).astype(np.float64)
        uniform = alive / alive.sum(axis=axis, keepdims=True)
        safe = np.where(bad, 1.0, s)
        out = np.where(bad, uniform, we / safe)
    else:
        safe = s
        out = we / s

    def back(g):
        inner = g - (g * out).sum(axis=axis, keepdims=True)
        live = ~bad
        gx = gw = None
        if x.requires_grad:
            gx = np.where(live, out * inner, 0.0)
        if w.requires_grad:
            gw = _unbroadcast(np.where(live, e / safe * inner, 0.0), w.shape)
        return gx, gw

    return make_result(out, (x, w), back)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    axis = _check_axis(x, axis)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def back(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (x,), back)


def logsumexp(x, axis: int = -1, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axis = _check_axis(x, axis)
    m = x.data.max(axis=axis, keepdims=True)
    s = np.exp(x.data - m).sum(axis=axis, keepdims=True)
    out_k = m + np.log(s)
    out = out_k if keepdims else np.squeeze(out_k, axis=axis)

    def back(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        return (gk * np.exp(x.data - out_k),)

    return make_result(out, (x,), back)


def layer_norm(x, gain, bias, eps: float = 1e-8) -> Tensor:
    """Normalize over the last axis, then apply ``gain`` and ``bias``."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm gain/bias must be ({d},), got {gain.shape} and {bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv
    out = xhat * gain.data + bias.data

    def back(g):
        lead = tuple(range(g.ndim - 1))
        gx = None
        if x.requires_grad:
            dxhat = g * gain.data
            gx = inv * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_result(out, (x, gain, bias), back)


# -- lookup -------------------------------------------------------------------


def embedding_lookup(table, indices) -> Tensor:
    """Gather rows of ``table``; the gradient scatters back into those rows only."""
    table = as_tensor(table)
    idx = np.asarray(indices)
    if idx.size and not np.issubdtype(idx.dtype, np.integer):
        raise TypeError(f"indices must be integers, got {idx.dtype}")
    idx = idx.astype(np.int64)
    rows = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= rows):
        raise IndexError(f"embedding index out of range for table with {rows} rows")

    def back(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return make_result(table.data[idx], (table,), back)


def one_hot(indices, depth: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64)
    out = np.zeros(idx.shape + (depth,))
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out
