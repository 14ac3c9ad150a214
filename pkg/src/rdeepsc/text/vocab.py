"""Tokenization and the word-level dictionary."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

PAD, START, END, UNK, MASK = "<pad>", "<start>", "<end>", "<unk>", "<mask>"
RESERVED = (PAD, START, END, UNK, MASK)
PAD_ID, START_ID, END_ID, UNK_ID, MASK_ID = range(5)
N_RESERVED = len(RESERVED)

_TOKEN_RE = re.compile(r"<[a-z]+>|[\w]+(?:'[\w]+)*|[^\w\s]")


def tokenize(sentence: str) -> list[str]:
    """Lowercase, split on whitespace, detach punctuation into separate tokens."""
    return _TOKEN_RE.findall(sentence.lower())


def normalize(sentence: str) -> str:
    return " ".join(tokenize(sentence))


@dataclass
class Vocabulary:
    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if tuple(self.tokens[:N_RESERVED]) != RESERVED:
            raise ValueError(f"first {N_RESERVED} tokens must be {RESERVED}")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self.tokens[idx]

    @property
    def content_ids(self) -> range:
        """Indices of ordinary (non-reserved) words."""
        return range(N_RESERVED, len(self.tokens))


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    words: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.ids) != len(self.words):
            raise ValueError("ids and words differ in length")
        if not self.ids:
            raise ValueError("token sequence must be non-empty")

    def __len__(self) -> int:
        return len(self.ids)

    def text(self) -> str:
        return " ".join(self.words)


def build_vocab(corpus: Sequence[str], min_freq: int = 1, cap: int = 4000) -> Vocabulary:
    """Most frequent tokens first (ties alphabetical), reserved tokens always kept."""
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    if cap < N_RESERVED:
        raise ValueError(f"cap must be at least {N_RESERVED}")
    counts = Counter(tok for line in corpus for tok in tokenize(line))
    for tok in RESERVED:
        counts.pop(tok, None)
    kept = sorted(
        (tok for tok, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t)
    )
    return Vocabulary(list(RESERVED) + kept[: cap - N_RESERVED])


def encode(sentence: str, vocab: Vocabulary) -> TokenSequence:
    words = tokenize(sentence)
    return TokenSequence(tuple(vocab.id(w) for w in words), tuple(words))


def decode(seq: TokenSequence | Iterable[int], vocab: Vocabulary) -> str:
    ids = seq.ids if isinstance(seq, TokenSequence) else seq
    return " ".join(vocab.token(i) for i in ids)


def from_ids(ids: Iterable[int], vocab: Vocabulary) -> TokenSequence:
    ids = tuple(int(i) for i in ids)
    return TokenSequence(ids, tuple(vocab.token(i) for i in ids))


def one_hot(seq: TokenSequence, vocab: Vocabulary) -> np.ndarray:
    out = np.zeros((len(seq), len(vocab)))
    out[np.arange(len(seq)), seq.ids] = 1.0
    return out
