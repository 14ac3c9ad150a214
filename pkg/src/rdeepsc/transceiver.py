"""The robust transceiver: detection-calibrated transformer encoder, dense
channel coder and transformer decoder.

Arrays carry an optional leading batch axis. Single sentences use shape
(L,) for token ids; batches use (B, L) plus a boolean validity mask.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from rdeepsc import diagnostics
from rdeepsc.channel import ChannelConfig, transmit_frame
from rdeepsc.engine import ShapeError, Tensor, no_record, ops
from rdeepsc.nn import (
    GRU,
    DecoderLayer,
    EncoderLayer,
    LayerNorm,
    Linear,
    Module,
    causal_mask,
    key_mask,
    parameter,
    positional_encoding,
    scaled_dot_attention,
)
from rdeepsc.text.noise import NoiseSpec, VerbLexicon, inject_literal_noise
from rdeepsc.text.vocab import END_ID, PAD_ID, START_ID, Vocabulary, encode


class DegenerateFrameError(ValueError):
    """A symbol frame with zero power cannot be normalized."""


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 128
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    d_ff: int = 512
    k_sym: int = 8
    d_det: int = 64
    max_len: int = 32
    calibrate: bool = True

    def __post_init__(self) -> None:
        for name in ("vocab_size", "d_model", "n_heads", "d_ff", "k_sym", "d_det", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d_model % self.n_heads:
            raise ValueError(f"n_heads={self.n_heads} must divide d_model={self.d_model}")
        if self.d_model % 2:
            raise ValueError("d_model must be even for sinusoidal positions")

    def to_dict(self) -> dict:
        return asdict(self)


class DetectionNet(Module):
    def __init__(self, d_model: int, d_det: int, rng: np.random.Generator):
        self.gru = GRU(d_model, d_det, rng)
        self.head = Linear(d_det, 1, rng)

    def __call__(self, x: Tensor) -> Tensor:
        logits = self.head(self.gru(x))
        return ops.sigmoid(logits.reshape(logits.shape[:-1]))


class ChannelDecoder(Module):
    def __init__(self, d_in: int, d_model: int, rng: np.random.Generator):
        self.inner = Linear(d_in, d_model, rng)
        self.outer = Linear(d_model, d_model, rng)
        self.norm = LayerNorm(d_model)

    def __call__(self, y: Tensor) -> Tensor:
        return self.norm(self.outer(ops.relu(self.inner(y))))


class SemanticDecoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.embedding = parameter(rng.standard_normal((cfg.vocab_size, cfg.d_model)))
        self.layers = [
            DecoderLayer(cfg.d_model, cfg.n_heads, cfg.d_ff, rng) for _ in range(cfg.n_dec_layers)
        ]
        self.project = Linear(cfg.d_model, cfg.vocab_size, rng)


class RDeepSC(Module):
    """All transceiver weights. The MI estimator lives with the training code."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.embedding = parameter(rng.standard_normal((cfg.vocab_size, cfg.d_model)))
        self.detector = DetectionNet(cfg.d_model, cfg.d_det, rng)
        self.encoder = [
            EncoderLayer(cfg.d_model, cfg.n_heads, cfg.d_ff, rng) for _ in range(cfg.n_enc_layers)
        ]
        self.channel_encoder = Linear(cfg.d_model, 2 * cfg.k_sym, rng)
        self.channel_decoder = ChannelDecoder(2 * cfg.k_sym, cfg.d_model, rng)
        self.decoder = SemanticDecoder(cfg, rng)


# -- stages -------------------------------------------------------------------


def embed(indices, gamma: Tensor) -> Tensor:
    """Token embedding plus sinusoidal positions."""
    indices = np.asarray(indices)
    pe = positional_encoding(indices.shape[-1], gamma.shape[1])
    return ops.embedding_lookup(gamma, indices) + pe


def detect_errors(x_embed: Tensor, detector: DetectionNet) -> Tensor:
    if x_embed.shape[-2] == 0:
        raise ValueError("cannot run detection on an empty sequence")
    return detector(x_embed)


def calibrate_attention(q, k, v, p) -> Tensor:
    """Scaled dot-product attention with weights reduced in proportion to P."""
    out, _ = scaled_dot_attention(ops.as_tensor(q), ops.as_tensor(k), ops.as_tensor(v), p=ops.as_tensor(p))
    return out


def semantic_encode(x_embed: Tensor, p: Tensor | None, layers: Sequence[EncoderLayer], valid=None) -> Tensor:
    """Stacked encoder layers; the same P calibrates every layer. ``p=None`` disables calibration."""
    mask = key_mask(valid) if valid is not None else None
    x = x_embed
    for layer in layers:
        x = layer(x, mask, p)
    return x


def _valid_or_all(shape: tuple[int, ...], valid) -> np.ndarray:
    return np.ones(shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)


def channel_encode(features: Tensor, phi: Linear, valid=None) -> Tensor:
    """Dense map to 2*k_sym reals per token, normalized to unit mean symbol power.

    Output shape (..., L, 2k): the first k columns are real parts, the rest
    imaginary parts. Padded positions are zeroed and excluded from the power.
    """
    raw = phi(features)
    mask = _valid_or_all(raw.shape[:-1], valid)[..., None].astype(np.float64)
    raw = raw * mask
    k = raw.shape[-1] // 2
    n_symbols = mask.sum(axis=(-2, -1)) * k
    energy = ops.sum(raw * raw, axis=(-2, -1))
    if np.any(energy.data <= 0.0):
        diagnostics.flag("degenerate_frame")
        raise DegenerateFrameError("symbol frame has zero power; normalization undefined")
    scale = ops.power(energy / n_symbols, -0.5)
    return raw * scale.reshape(scale.shape + (1, 1))


def frame_power(x: np.ndarray, valid=None) -> np.ndarray:
    """Mean |x|^2 per frame over valid tokens."""
    x = np.asarray(x.data if isinstance(x, Tensor) else x)
    mask = _valid_or_all(x.shape[:-1], valid)
    k = x.shape[-1] // 2
    return (x**2 * mask[..., None]).sum(axis=(-2, -1)) / (mask.sum(axis=-1) * k)


def to_complex(x: np.ndarray) -> np.ndarray:
    k = x.shape[-1] // 2
    return x[..., :k] + 1j * x[..., k:]


def from_complex(z: np.ndarray) -> np.ndarray:
    return np.concatenate([z.real, z.imag], axis=-1)


def channel_perturbation(x: np.ndarray, cfg: ChannelConfig, rng: np.random.Generator, valid=None) -> np.ndarray:
    """Additive real-valued difference X-hat - X after the channel and equalization.

    One fading draw per frame (sentence). Adding this constant to the
    differentiable frame reproduces the equalized receive exactly.
    """
    x = np.asarray(x)
    lead = x.shape[:-2]
    mask = _valid_or_all(x.shape[:-1], valid)
    out = np.zeros_like(x)
    for idx in np.ndindex(*lead):
        rows = mask[idx]
        z = to_complex(x[idx][rows])
        _, zhat, _ = transmit_frame(z, cfg, rng)
        out[idx][rows] = from_complex(zhat) - x[idx][rows]
    return out


def channel_decode(y: Tensor, zeta: ChannelDecoder) -> Tensor:
    expected = zeta.inner.weight.shape[0]
    if y.shape[-1] != expected:
        raise ShapeError(f"frame has {y.shape[-1]} reals per token, channel decoder expects {expected}")
    return zeta(y)


def _decoder_stack(tgt_in, memory: Tensor, delta: SemanticDecoder, memory_valid) -> Tensor:
    tgt_in = np.asarray(tgt_in)
    x = embed(tgt_in, delta.embedding)
    self_mask = causal_mask(tgt_in.shape[-1])
    if tgt_in.ndim > 1:
        self_mask = self_mask + np.where(tgt_in == PAD_ID, -1e9, 0.0)[:, None, None, :]
    mem_mask = key_mask(memory_valid) if memory_valid is not None else None
    for layer in delta.layers:
        x = layer(x, memory, self_mask, mem_mask)
    return delta.project(x)


def semantic_decode_train(features: Tensor, target_tokens, delta: SemanticDecoder, max_len: int = 32, memory_valid=None) -> Tensor:
    """Teacher-forced logits, shape (..., T, vocab)."""
    target_tokens = np.asarray(target_tokens)
    if target_tokens.shape[-1] > max_len:
        raise ValueError(f"target length {target_tokens.shape[-1]} exceeds max_len={max_len}")
    if not np.all(target_tokens[..., 0] == START_ID):
        raise ValueError("target must begin with <start>")
    return _decoder_stack(target_tokens, features, delta, memory_valid)


def semantic_decode_greedy(features: Tensor, delta: SemanticDecoder, max_len: int = 32, memory_valid=None) -> list[list[int]]:
    """Argmax generation from <start> until <end> or ``max_len`` tokens.

    ``features`` is (L, d) or (B, L, d); returns one id list per sentence,
    without <start> and <end>.
    """
    single = features.ndim == 2
    if single:
        features = features.reshape((1,) + features.shape)
        memory_valid = None if memory_valid is None else np.asarray(memory_valid)[None]
    B = features.shape[0]
    tokens = np.full((B, 1), START_ID, dtype=np.int64)
    done = np.zeros(B, dtype=bool)
    outputs: list[list[int]] = [[] for _ in range(B)]
    with no_record():
        for _ in range(max_len):
            logits = _decoder_stack(tokens, features, delta, memory_valid).data[:, -1]
            nxt = logits.argmax(axis=-1)
            for b in np.flatnonzero(~done):
                if nxt[b] == END_ID:
                    done[b] = True
                else:
                    outputs[b].append(int(nxt[b]))
            if done.all():
                break
            tokens = np.concatenate([tokens, nxt[:, None]], axis=1)
    return outputs[0:1] if single else outputs


# -- composition ----------------------------------------------------------------


def pad_batch(seqs: Sequence[Sequence[int]], prefix: int | None = None, suffix: int | None = None):
    """Right-pad id lists into a (B, L) array and its validity mask."""
    rows = [([prefix] if prefix is not None else []) + list(s) + ([suffix] if suffix is not None else []) for s in seqs]
    width = max(len(r) for r in rows)
    ids = np.full((len(rows), width), PAD_ID, dtype=np.int64)
    valid = np.zeros((len(rows), width), dtype=bool)
    for i, r in enumerate(rows):
        ids[i, : len(r)] = r
        valid[i, : len(r)] = True
    return ids, valid


@dataclass
class Transmission:
    x_embed: Tensor
    p: Tensor
    features: Tensor
    symbols: Tensor
    valid: np.ndarray


def transmit(model: RDeepSC, src_ids: np.ndarray, valid: np.ndarray, perturb: np.ndarray | None = None) -> Transmission:
    """Transmitter side for a padded batch. ``perturb`` is added to X_embed."""
    x_embed = embed(src_ids, model.embedding)
    x_embed.retain_grad()
    x_in = x_embed + perturb if perturb is not None else x_embed
    p = detect_errors(x_in, model.detector)
    features = semantic_encode(x_in, p if model.cfg.calibrate else None, model.encoder, valid)
    symbols = channel_encode(features, model.channel_encoder, valid)
    return Transmission(x_embed, p, features, symbols, valid)


def receive_logits(model: RDeepSC, received: Tensor, valid: np.ndarray, tgt_in: np.ndarray) -> Tensor:
    features = channel_decode(received, model.channel_decoder)
    return semantic_decode_train(features, tgt_in, model.decoder, model.cfg.max_len, valid)


Perturber = Callable[[RDeepSC, np.ndarray, np.ndarray, list[list[int]]], np.ndarray]


def transmit_receive_batch(
    sentences: Sequence[str],
    model: RDeepSC,
    vocab: Vocabulary,
    channel_cfg: ChannelConfig,
    noise_spec: NoiseSpec,
    verbs: VerbLexicon,
    rng: np.random.Generator | None = None,
    perturber: Perturber | None = None,
) -> list[str]:
    """Corrupt, send and greedily decode a batch of sentences.

    Sentence i is corrupted with seed ``noise_spec.seed + i``. ``perturber``
    (for example an FGM attack) maps (model, src, valid, clean ids) to an
    additive embedding perturbation.
    """
    rng = rng if rng is not None else np.random.default_rng(channel_cfg.seed)
    clean = [encode(s, vocab) for s in sentences]
    noisy = [
        inject_literal_noise(c, noise_spec.with_seed(noise_spec.seed + i), vocab, verbs).noisy
        for i, c in enumerate(clean)
    ]
    src, valid = pad_batch([n.ids for n in noisy])
    perturb = perturber(model, src, valid, [list(c.ids) for c in clean]) if perturber else None
    with no_record():
        tx = transmit(model, src, valid, perturb)
        received = tx.symbols + channel_perturbation(tx.symbols.data, channel_cfg, rng, valid)
        features = channel_decode(received, model.channel_decoder)
        out = semantic_decode_greedy(features, model.decoder, model.cfg.max_len, valid)
    return [" ".join(vocab.token(i) for i in ids) for ids in out]


def transmit_receive(
    sentence: str,
    model: RDeepSC,
    vocab: Vocabulary,
    channel_cfg: ChannelConfig,
    noise_spec: NoiseSpec,
    verbs: VerbLexicon,
    rng: np.random.Generator | None = None,
    perturber: Perturber | None = None,
) -> str:
    return transmit_receive_batch([sentence], model, vocab, channel_cfg, noise_spec, verbs, rng, perturber)[0]
