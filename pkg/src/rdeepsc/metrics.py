"""Corpus BLEU and an idf-weighted token-embedding similarity score."""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from rdeepsc import diagnostics

REPORT_COLUMNS = ("model_id", "channel", "snr_db", "noise_ratio", "bleu", "sim_score", "n_sentences", "seed")


@dataclass(frozen=True)
class BleuConfig:
    max_n: int = 4
    weights: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.max_n < 1:
            raise ValueError(f"max_n must be >= 1, got {self.max_n}")
        w = self.weights if self.weights is not None else (1.0 / self.max_n,) * self.max_n
        if len(w) != self.max_n or abs(sum(w) - 1.0) > 1e-9:
            raise ValueError(f"weights must be {self.max_n} values summing to 1, got {w}")
        object.__setattr__(self, "weights", tuple(w))


def _tokens(x) -> list:
    return x.split() if isinstance(x, str) else list(x)


def ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def clipped_ngram_stats(candidate, reference, n: int) -> tuple[int, int]:
    """(clipped matches, candidate n-gram count)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    cand, ref = ngrams(_tokens(candidate), n), ngrams(_tokens(reference), n)
    matched = sum(min(c, ref[g]) for g, c in cand.items())
    return matched, sum(cand.values())


def brevity_penalty(l_r: int, l_t: int) -> float:
    """Penalty for a received text of length ``l_r`` shorter than the transmitted ``l_t``."""
    if l_r <= 0 or l_t <= 0:
        raise ValueError(f"lengths must be positive, got l_R={l_r}, l_T={l_t}")
    return 1.0 if l_r >= l_t else math.exp(1.0 - l_t / l_r)


def bleu(candidates: Sequence, references: Sequence, cfg: BleuConfig = BleuConfig()) -> float:
    """Corpus-level BLEU with clipped counts pooled over sentences."""
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates vs {len(references)} references")
    if not candidates:
        raise ValueError("empty corpus")
    cands = [_tokens(c) for c in candidates]
    refs = [_tokens(r) for r in references]
    l_r = sum(map(len, cands))
    l_t = sum(map(len, refs))
    if l_r == 0:
        return 0.0
    log_p = 0.0
    for n, w in zip(range(1, cfg.max_n + 1), cfg.weights):
        matched = total = 0
        for c, r in zip(cands, refs):
            m, t = clipped_ngram_stats(c, r, n)
            matched += m
            total += t
        if matched == 0:
            return 0.0
        log_p += w * math.log(matched / total)
    return brevity_penalty(l_r, l_t) * math.exp(log_p)


def sentence_bleu(candidate, reference, cfg: BleuConfig = BleuConfig()) -> float:
    return bleu([candidate], [reference], cfg)


@dataclass(frozen=True)
class IdfTable:
    weights: dict
    m: int

    @property
    def unseen(self) -> float:
        return math.log(1.0 + self.m)

    def __getitem__(self, token) -> float:
        return self.weights.get(token, self.unseen)


def idf_weights(corpus: Sequence) -> IdfTable:
    """Smoothed idf: -log((1 + df) / (1 + M)) over sentence document frequency."""
    if not corpus:
        raise ValueError("empty corpus")
    m = len(corpus)
    df = Counter(tok for sent in corpus for tok in set(_tokens(sent)))
    return IdfTable({tok: -math.log((1 + c) / (1 + m)) for tok, c in df.items()}, m)


def similarity_precision(transmitted: np.ndarray, received: np.ndarray, idf: Sequence[float]) -> float:
    """Idf-weighted mean over received tokens of the best dot product with any transmitted token.

    Rows of both embedding matrices should be unit length.
    """
    transmitted, received = np.asarray(transmitted), np.asarray(received)
    if len(transmitted) == 0 or len(received) == 0:
        raise ValueError("similarity needs non-empty sequences")
    weights = np.asarray(idf, dtype=np.float64)
    if len(weights) != len(received):
        raise ValueError(f"{len(weights)} idf weights for {len(received)} received tokens")
    if weights.sum() <= 0:
        diagnostics.flag("uniform_idf_fallback")
        weights = np.ones(len(received))
    best = (received @ transmitted.T).max(axis=1)
    return float(weights @ best / weights.sum())


def rescale_similarity(p: float, b: float) -> float:
    if b >= 1:
        raise ValueError(f"baseline b must be < 1, got {b}")
    return (p - b) / (1.0 - b)


def unit_rows(x: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.where(norm > 0, norm, 1.0)


Embedder = Callable[[list[str]], np.ndarray]


def sentence_similarity(transmitted: str, received: str, embedder: Embedder, idf: IdfTable, b: float = 0.0) -> float:
    t, r = _tokens(transmitted), _tokens(received)
    if not r:
        diagnostics.flag("empty_received")
        return rescale_similarity(0.0, b)
    p = similarity_precision(embedder(t), embedder(r), [idf[tok] for tok in r])
    return rescale_similarity(p, b)


def empirical_baseline(sentences: Sequence[str], embedder: Embedder, idf: IdfTable, pairs: int = 1000, seed: int = 0) -> float:
    """Mean precision over random mismatched sentence pairs."""
    if len(sentences) < 2:
        raise ValueError("need at least two sentences for mismatched pairs")
    rng = np.random.default_rng(seed)
    scores = []
    for _ in range(pairs):
        i, j = rng.choice(len(sentences), size=2, replace=False)
        scores.append(sentence_similarity(sentences[i], sentences[j], embedder, idf))
    return float(np.mean(scores))


@dataclass(frozen=True)
class MetricsRow:
    model_id: str
    channel: str
    snr_db: float
    noise_ratio: float
    bleu: float
    sim_score: float
    n_sentences: int
    seed: int


def write_report(rows: Iterable[MetricsRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow(astuple(row))


def read_report(path: str | Path) -> list[MetricsRow]:
    kinds = {f.name: f.type for f in fields(MetricsRow)}
    cast = {"str": str, "float": float, "int": int}
    with open(path, newline="", encoding="utf-8") as fh:
        return [MetricsRow(**{k: cast[kinds[k]](v) for k, v in rec.items()}) for rec in csv.DictReader(fh)]


# A system maps (clean sentences, snr_db, noise_ratio, seed) to received sentences.
System = Callable[[list[str], float, float, int], list[str]]


def evaluate_sweep(
    system: System,
    test_set: Sequence[str],
    snr_list: Sequence[float],
    noise_ratios: Sequence[float],
    channel_kind: str,
    model_id: str,
    seed: int = 0,
    embedder: Embedder | None = None,
    idf: IdfTable | None = None,
    b: float = 0.0,
) -> list[MetricsRow]:
    """One row per (snr, ratio) cell: corpus BLEU against the clean text and mean similarity."""
    if not snr_list or not noise_ratios:
        raise ValueError("empty evaluation grid")
    if not test_set:
        raise ValueError("empty test set")
    test_set = list(test_set)
    idf = idf or idf_weights(test_set)
    rows = []
    for snr in snr_list:
        for ratio in noise_ratios:
            received = system(test_set, snr, ratio, seed)
            score = bleu(received, test_set)
            sim = (
                float(np.mean([sentence_similarity(t, r, embedder, idf, b) for t, r in zip(test_set, received)]))
                if embedder is not None
                else float("nan")
            )
            rows.append(MetricsRow(model_id, channel_kind, float(snr), float(ratio), score, sim, len(test_set), seed))
    return rows
