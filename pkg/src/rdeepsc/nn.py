"""Layer building blocks on top of the tensor engine."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from rdeepsc.engine import Tensor, ops

NEG_INF = -1e9


def parameter(data: np.ndarray) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


class Module:
    """Parameters are Tensor attributes with requires_grad; children are Modules or lists of them."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, list) and value and isinstance(value[0], Module):
                for i, child in enumerate(value):
                    yield from child.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        if missing:
            raise KeyError(f"missing parameters: {missing[:5]}")
        for name, p in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ValueError(f"tensor {name!r}: expected shape {p.shape}, got {value.shape}")
            p.data = value.copy()


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        limit = math.sqrt(6.0 / (d_in + d_out))
        self.weight = parameter(rng.uniform(-limit, limit, size=(d_in, d_out)))
        self.bias = parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim == 1:
            out = ops.matmul(x.reshape(1, -1), self.weight).reshape(-1)
        else:
            out = ops.matmul(x, self.weight)
        return out + self.bias if self.bias is not None else out


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gain = parameter(np.ones(d))
        self.bias = parameter(np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gain, self.bias)


class FeedForward(Module):
    def __init__(self, d: int, d_ff: int, rng: np.random.Generator):
        self.inner = Linear(d, d_ff, rng)
        self.outer = Linear(d_ff, d, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(ops.relu(self.inner(x)))


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    *lead, length, d = x.shape
    return x.reshape(*lead, length, n_heads, d // n_heads).swapaxes(-2, -3)


def merge_heads(x: Tensor) -> Tensor:
    *lead, heads, length, d_k = x.shape
    return x.swapaxes(-2, -3).reshape(*lead, length, heads * d_k)


def keep_weights(p: Tensor, ndim: int) -> Tensor:
    """Broadcastable (1 - P) over the key axis of an attention score tensor."""
    keep = 1.0 - p
    if p.ndim == 1:
        return keep.reshape((1,) * (ndim - 1) + p.shape)
    return keep.reshape(p.shape[:1] + (1,) * (ndim - 2) + p.shape[1:])


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask=None, p: Tensor | None = None):
    """softmax(QK^T / sqrt(d_k)) V, optionally calibrated by error probabilities ``p``.

    Calibration scales the attention paid to key j by (1 - p[j]) and
    renormalizes each row. Returns (output, attention weights).
    """
    scores = ops.matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
    if mask is not None:
        scores = scores + mask
    if p is None:
        weights = ops.softmax(scores, axis=-1)
    else:
        weights = ops.calibrated_softmax(scores, keep_weights(p, scores.ndim), axis=-1)
    return ops.matmul(weights, v), weights


class MultiHeadAttention(Module):
    def __init__(self, d: int, n_heads: int, rng: np.random.Generator):
        if d % n_heads:
            raise ValueError(f"{n_heads} heads do not divide d_model={d}")
        self.n_heads = n_heads
        self.query = Linear(d, d, rng)
        self.key = Linear(d, d, rng)
        self.value = Linear(d, d, rng)
        self.out = Linear(d, d, rng)
        self.last_weights: Tensor | None = None

    def __call__(self, x: Tensor, memory: Tensor, mask=None, p: Tensor | None = None) -> Tensor:
        h = self.n_heads
        q = split_heads(self.query(x), h)
        k = split_heads(self.key(memory), h)
        v = split_heads(self.value(memory), h)
        attended, self.last_weights = scaled_dot_attention(q, k, v, mask, p)
        return self.out(merge_heads(attended))


class EncoderLayer(Module):
    def __init__(self, d: int, n_heads: int, d_ff: int, rng: np.random.Generator):
        self.attn = MultiHeadAttention(d, n_heads, rng)
        self.norm1 = LayerNorm(d)
        self.ffn = FeedForward(d, d_ff, rng)
        self.norm2 = LayerNorm(d)

    def __call__(self, x: Tensor, mask=None, p: Tensor | None = None) -> Tensor:
        x = self.norm1(x + self.attn(x, x, mask, p))
        return self.norm2(x + self.ffn(x))


class DecoderLayer(Module):
    def __init__(self, d: int, n_heads: int, d_ff: int, rng: np.random.Generator):
        self.self_attn = MultiHeadAttention(d, n_heads, rng)
        self.norm1 = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, n_heads, rng)
        self.norm2 = LayerNorm(d)
        self.ffn = FeedForward(d, d_ff, rng)
        self.norm3 = LayerNorm(d)

    def __call__(self, x: Tensor, memory: Tensor, self_mask=None, memory_mask=None) -> Tensor:
        x = self.norm1(x + self.self_attn(x, x, self_mask))
        x = self.norm2(x + self.cross_attn(x, memory, memory_mask))
        return self.norm3(x + self.ffn(x))


class GRU(Module):
    """Unidirectional GRU over axis -2 of a (..., L, d_in) input; returns all hidden states."""

    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        self.w_input = Linear(d_in, 3 * hidden, rng)
        self.w_state = Linear(hidden, 3 * hidden, rng)

    def __call__(self, x: Tensor) -> Tensor:
        H = self.hidden
        gates_x = self.w_input(x)
        h = Tensor(np.zeros(x.shape[:-2] + (H,)))
        states = []
        for t in range(x.shape[-2]):
            gx = gates_x[..., t, :]
            gh = self.w_state(h)
            r = ops.sigmoid(gx[..., :H] + gh[..., :H])
            z = ops.sigmoid(gx[..., H : 2 * H] + gh[..., H : 2 * H])
            n = ops.tanh(gx[..., 2 * H :] + r * gh[..., 2 * H :])
            h = (1.0 - z) * n + z * h
            states.append(h)
        return ops.stack(states, axis=-2)


def positional_encoding(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    rate = np.exp(-math.log(10000.0) * (np.arange(0, d, 2) / d))
    pe = np.zeros((length, d))
    pe[:, 0::2] = np.sin(pos * rate)
    pe[:, 1::2] = np.cos(pos * rate[: d // 2])
    return pe


def key_mask(valid: np.ndarray) -> np.ndarray:
    """(B, L) validity -> additive (B, 1, 1, L) mask."""
    return np.where(valid, 0.0, NEG_INF)[:, None, None, :]


def causal_mask(length: int) -> np.ndarray:
    return np.triu(np.full((length, length), NEG_INF), k=1)
