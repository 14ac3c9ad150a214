"""Sweep adapters for the trained transceiver and its encoder-based similarity embedder."""

from __future__ import annotations

import numpy as np

from rdeepsc.channel import ChannelConfig
from rdeepsc.engine import no_record
from rdeepsc.metrics import unit_rows
from rdeepsc.text.noise import NoiseSpec, VerbLexicon
from rdeepsc.text.vocab import Vocabulary
from rdeepsc.transceiver import RDeepSC, detect_errors, embed, semantic_encode, transmit_receive_batch


def channel_rng(seed: int, snr_db: float) -> np.random.Generator:
    return np.random.default_rng([seed, int(round(snr_db * 1000)) % 2**31])


def semantic_system(model: RDeepSC, vocab: Vocabulary, verbs: VerbLexicon, channel_kind: str, perturber=None, chunk: int = 64):
    """``f(sentences, snr_db, ratio, seed)``; sentence i gets literal-noise seed ``seed + i``."""

    def run(sentences, snr_db, ratio, seed):
        cfg = ChannelConfig(channel_kind, snr_db, seed)
        rng = channel_rng(seed, snr_db)
        out = []
        for at in range(0, len(sentences), chunk):
            spec = NoiseSpec(ratio, seed=seed + at)
            out += transmit_receive_batch(sentences[at : at + chunk], model, vocab, cfg, spec, verbs, rng, perturber)
        return out

    return run


class EncoderEmbedder:
    """Token vectors from the trained semantic encoder, unit-normalized per token."""

    def __init__(self, model: RDeepSC, vocab: Vocabulary):
        self.model, self.vocab = model, vocab
        self.cache: dict[tuple[str, ...], np.ndarray] = {}

    def __call__(self, tokens) -> np.ndarray:
        key = tuple(tokens)
        if key not in self.cache:
            ids = np.array([self.vocab.id(t) for t in key])
            with no_record():
                x = embed(ids, self.model.embedding)
                p = detect_errors(x, self.model.detector) if self.model.cfg.calibrate else None
                feats = semantic_encode(x, p, self.model.encoder).data
            self.cache[key] = unit_rows(feats)
        return self.cache[key]
