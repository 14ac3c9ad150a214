"""Corpus ingestion, dictionary, tokenization and literal-noise injection."""

from rdeepsc.text.corpus import desk_corpus_path, load_corpus
from rdeepsc.text.noise import (
    KINDS,
    Edit,
    NoiseSpec,
    NoisySample,
    VerbLexicon,
    edit_count,
    inject_literal_noise,
    read_jsonl,
    write_jsonl,
)
from rdeepsc.text.vocab import (
    END_ID,
    MASK_ID,
    N_RESERVED,
    PAD_ID,
    RESERVED,
    START_ID,
    UNK_ID,
    TokenSequence,
    Vocabulary,
    build_vocab,
    decode,
    encode,
    from_ids,
    normalize,
    one_hot,
    tokenize,
)

__all__ = [
    "END_ID", "KINDS", "MASK_ID", "N_RESERVED", "PAD_ID", "RESERVED", "START_ID", "UNK_ID",
    "Edit", "NoiseSpec", "NoisySample", "TokenSequence", "VerbLexicon", "Vocabulary",
    "build_vocab", "decode", "desk_corpus_path", "edit_count", "encode", "from_ids",
    "inject_literal_noise", "load_corpus", "normalize", "one_hot", "read_jsonl", "tokenize",
    "write_jsonl",
]
