"""Plain-text corpus ingestion (one sentence per line)."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from rdeepsc.text.vocab import tokenize

DESK_CORPUS = "desk_corpus.txt"


def load_corpus(
    path: str | Path,
    max_sentences: int | None = None,
    min_len: int = 4,
    max_len: int | None = 30,
) -> list[str]:
    """Read non-blank lines whose token count lies in [min_len, max_len], in file order."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"corpus file not found: {path}")
    kept: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            n = len(tokenize(line))
            if n < min_len or (max_len is not None and n > max_len):
                continue
            kept.append(line)
            if max_sentences is not None and len(kept) >= max_sentences:
                break
    if not kept:
        raise ValueError(f"no sentences left in {path} after length filtering")
    return kept


def desk_corpus_path() -> Path:
    """Location of the bundled parliamentary-style corpus."""
    return Path(str(resources.files("rdeepsc").joinpath("data", DESK_CORPUS)))
