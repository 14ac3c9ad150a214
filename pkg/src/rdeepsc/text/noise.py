"""Word-level literal noise with ground-truth error labels."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from rdeepsc.text.vocab import MASK, MASK_ID, TokenSequence, Vocabulary

KINDS = ("replacement", "mask", "insertion", "verb")


@dataclass(frozen=True)
class NoiseSpec:
    ratio: float
    kinds: frozenset[str] = frozenset(KINDS)
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError(f"noise ratio must lie in [0, 1], got {self.ratio}")
        unknown = set(self.kinds) - set(KINDS)
        if unknown:
            raise ValueError(f"unknown noise kinds: {sorted(unknown)}")
        if self.ratio > 0 and not self.kinds:
            raise ValueError("noise ratio > 0 needs at least one enabled kind")
        object.__setattr__(self, "kinds", frozenset(self.kinds))

    def with_seed(self, seed: int) -> "NoiseSpec":
        return NoiseSpec(self.ratio, self.kinds, seed)


@dataclass(frozen=True)
class Edit:
    kind: str
    position: int  # index into the noisy sequence


@dataclass(frozen=True)
class NoisySample:
    clean: TokenSequence
    noisy: TokenSequence
    labels: tuple[int, ...]
    edits: tuple[Edit, ...] = ()
    seed: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {
                "clean": self.clean.text(),
                "noisy": self.noisy.text(),
                "labels": list(self.labels),
                "seed": self.seed,
            },
            ensure_ascii=False,
        )


@dataclass
class VerbLexicon:
    """Surface form -> alternative inflections; closed under symmetry."""

    alternatives: dict[str, frozenset[str]] = field(default_factory=dict)

    @classmethod
    def from_groups(cls, groups: Iterable[Iterable[str]]) -> "VerbLexicon":
        alt: dict[str, set[str]] = {}
        for group in groups:
            forms = set(group)
            for form in forms:
                alt.setdefault(form, set()).update(forms - {form})
        return cls({k: frozenset(v) for k, v in alt.items() if v})

    @classmethod
    def bundled(cls) -> "VerbLexicon":
        raw = resources.files("rdeepsc").joinpath("data/verbs.json").read_text("utf-8")
        table: Mapping[str, list[str]] = json.loads(raw)
        return cls.from_groups(table.values())

    def __contains__(self, word: str) -> bool:
        return word in self.alternatives

    def __len__(self) -> int:
        return len(self.alternatives)

    def candidates(self, word: str) -> list[str]:
        """Lexicon alternatives, else a suffix-toggle guess (s / ed / ing)."""
        if word in self.alternatives:
            return sorted(self.alternatives[word])
        if len(word) < 4 or not word.isalpha():
            return []
        guesses = []
        for suffix in ("ing", "ed", "s"):
            if word.endswith(suffix) and len(word) - len(suffix) >= 3:
                stem = word[: -len(suffix)]
                guesses.append(stem)
                if suffix != "s":
                    guesses.append(stem + "e")
        if not guesses:
            guesses.append(word + "s")
        return guesses


def edit_count(ratio: float, length: int) -> int:
    """ceil(ratio * length), robust to float noise such as 0.6 * 5 = 3.0000000000000004."""
    return min(length, math.ceil(round(ratio * length, 9)))


def _random_content(rng: np.random.Generator, vocab: Vocabulary, exclude: int | None) -> int:
    lo, hi = vocab.content_ids.start, vocab.content_ids.stop
    pool = hi - lo - (1 if exclude is not None and lo <= exclude < hi else 0)
    if pool < 1:
        raise ValueError("vocabulary has no ordinary word to substitute")
    pick = lo + int(rng.integers(pool))
    if exclude is not None and lo <= exclude <= pick:
        pick += 1
    return pick


def inject_literal_noise(
    clean: TokenSequence, spec: NoiseSpec, vocab: Vocabulary, verbs: VerbLexicon
) -> NoisySample:
    """Corrupt ``ceil(ratio * len)`` distinct positions, one edit each.

    Each edit's kind is drawn uniformly from the enabled kinds. A verb edit on
    a word with no in-vocabulary inflection is applied as a replacement.
    Insertions keep the original word and add a random word after it; only
    the inserted word is labelled.
    """
    if len(clean) == 0:
        raise ValueError("cannot corrupt an empty sequence")
    rng = np.random.default_rng(spec.seed)
    n = len(clean)
    k = edit_count(spec.ratio, n) if spec.ratio > 0 else 0
    chosen = set(rng.choice(n, size=k, replace=False).tolist()) if k else set()
    kinds = [kind for kind in KINDS if kind in spec.kinds]

    ids: list[int] = []
    words: list[str] = []
    labels: list[int] = []
    edits: list[Edit] = []
    for pos, (tok, word) in enumerate(zip(clean.ids, clean.words)):
        if pos not in chosen:
            ids.append(tok)
            words.append(word)
            labels.append(0)
            continue
        kind = kinds[int(rng.integers(len(kinds)))]
        if kind == "verb":
            options = sorted(
                {vocab.id(w) for w in verbs.candidates(word) if w in vocab and w != word} - {tok}
            )
            if options:
                new = options[int(rng.integers(len(options)))]
            else:
                kind = "replacement"
        if kind == "replacement":
            new = _random_content(rng, vocab, tok)
        elif kind == "mask":
            new = MASK_ID
        elif kind == "insertion":
            ids.append(tok)
            words.append(word)
            labels.append(0)
            new = _random_content(rng, vocab, None)
        ids.append(new)
        words.append(MASK if new == MASK_ID else vocab.token(new))
        labels.append(1)
        edits.append(Edit(kind, len(ids) - 1))

    noisy = TokenSequence(tuple(ids), tuple(words))
    return NoisySample(clean, noisy, tuple(labels), tuple(edits), spec.seed)


def write_jsonl(samples: Iterable[NoisySample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sample in samples:
            fh.write(sample.to_json() + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
