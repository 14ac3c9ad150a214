"""Command-line entry point: ``rdeepsc {corrupt,train,eval,baseline,plot}``.

SNR is Es/N0 per complex channel symbol, measured on the unit-power frame.
Every command is deterministic given its configuration and seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from rdeepsc import checkpoint
from rdeepsc.channel import KINDS as CHANNEL_KINDS
from rdeepsc.channel import ChannelConfig
from rdeepsc.classical import ClassicalChain, classical_system
from rdeepsc.config import ConfigError, RunConfig
from rdeepsc.evaluation import EncoderEmbedder, semantic_system
from rdeepsc.metrics import empirical_baseline, evaluate_sweep, idf_weights, read_report, write_report
from rdeepsc.plot import plot_rows
from rdeepsc.text import (
    NoiseSpec,
    VerbLexicon,
    Vocabulary,
    build_vocab,
    desk_corpus_path,
    encode,
    inject_literal_noise,
    load_corpus,
)
from rdeepsc.training import AdversarialConfig, TrainConfig, fgm_perturber, load_model, sample_seed, train
from rdeepsc.transceiver import ModelConfig, RDeepSC

log = logging.getLogger("rdeepsc")


@dataclass
class Dataset:
    train: list[str]
    test: list[str]
    vocab: Vocabulary


def prepare_data(cfg: RunConfig, vocab_tokens: list[str] | None = None) -> Dataset:
    """Load, filter and split the corpus: the last ``test_size`` sentences are held out.

    At most a fifth of the corpus is held out so tiny smoke runs still train on something.
    """
    path = cfg.corpus if cfg.corpus is not None else desk_corpus_path()
    sentences = load_corpus(path, cfg.max_sentences, cfg.min_len, cfg.max_len_words)
    n_test = min(cfg.test_size, max(1, len(sentences) // 5))
    train_set, test_set = sentences[:-n_test], sentences[-n_test:]
    if not train_set:
        raise ConfigError("max_sentences", "corpus too small to split into train and test")
    vocab = Vocabulary(vocab_tokens) if vocab_tokens is not None else build_vocab(sentences, cap=cfg.vocab_cap)
    return Dataset(train_set, test_set, vocab)


def model_config(cfg: RunConfig, vocab_size: int) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size,
        d_model=cfg.d_model,
        n_heads=cfg.n_heads,
        n_enc_layers=cfg.n_layers,
        n_dec_layers=cfg.n_layers,
        d_ff=cfg.d_ff,
        k_sym=cfg.k_sym,
        d_det=cfg.d_det,
        max_len=cfg.max_len,
        calibrate=cfg.calibrate,
    )


def train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        alpha=cfg.alpha,
        beta=cfg.beta,
        seed=cfg.seed,
        adv=AdversarialConfig(cfg.epsilon, cfg.adv, cfg.adv_loss),
        clip_norm=cfg.clip_norm,
        val_size=cfg.val_size,
    )


def noise_spec(cfg: RunConfig, ratio: float | None = None) -> NoiseSpec:
    return NoiseSpec(cfg.noise_ratio if ratio is None else ratio, frozenset(cfg.noise_kinds), cfg.seed)


# -- commands ---------------------------------------------------------------------


def cmd_corrupt(cfg: RunConfig) -> Path:
    data = prepare_data(cfg)
    verbs = VerbLexicon.bundled()
    spec = noise_spec(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "corrupted.jsonl"
    hist: Counter = Counter()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, sentence in enumerate(data.train + data.test):
            sample = inject_literal_noise(encode(sentence, data.vocab), spec.with_seed(sample_seed(cfg.seed, 0, i)), data.vocab, verbs)
            hist.update(e.kind for e in sample.edits)
            fh.write(sample.to_json() + "\n")
    print(f"wrote {len(data.train) + len(data.test)} samples to {path}")
    for kind in cfg.noise_kinds:
        print(f"  {kind:<12} {hist[kind]}")
    print(f"  {'total':<12} {sum(hist.values())}")
    return path


def cmd_train(cfg: RunConfig, resume: str | None = None) -> float:
    data = prepare_data(cfg)
    if resume is not None:
        _, rmeta = checkpoint.load(resume)
        if rmeta.get("vocab") != data.vocab.tokens:
            raise ConfigError("resume", "checkpoint vocabulary differs from the configured corpus")
    model = RDeepSC(model_config(cfg, len(data.vocab)), seed=cfg.seed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    meta = {"run_config": cfg.to_dict(), "vocab": data.vocab.tokens}

    def progress(row):
        print(" ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()), flush=True)

    result = train(
        model,
        data.train,
        data.test,
        data.vocab,
        VerbLexicon.bundled(),
        noise_spec(cfg),
        ChannelConfig(cfg.channel, cfg.snr_db, cfg.seed),
        train_config(cfg),
        out_dir=out,
        meta=meta,
        resume=resume,
        progress=progress,
    )
    print(f"best validation BLEU {result.best_val_bleu:.4f} over {len(result.history)} epochs")
    return result.best_val_bleu


def _channels(cfg: RunConfig, only: str | None) -> list[str]:
    return [only] if only is not None else list(cfg.channels)


def load_checkpoint_model(path: str) -> tuple[RDeepSC, Vocabulary, dict]:
    model, meta = load_model(path)
    if "vocab" not in meta:
        raise checkpoint.CheckpointError(f"{path}: no vocabulary stored in checkpoint metadata")
    vocab = Vocabulary(list(meta["vocab"]))
    if len(vocab) != model.cfg.vocab_size:
        raise checkpoint.DimensionMismatch(f"vocabulary of {len(vocab)} tokens does not match model.embedding rows {model.cfg.vocab_size}")
    return model, vocab, meta


def _similarity(model, vocab, test, empirical_b: bool, seed: int):
    embedder = EncoderEmbedder(model, vocab)
    idf = idf_weights(test)
    b = empirical_baseline(test, embedder, idf, seed=seed) if empirical_b and len(test) > 1 else 0.0
    return embedder, idf, b


def cmd_eval(cfg: RunConfig, ckpt: str, only_channel: str | None = None, attack: bool = False, plot: str | None = None, empirical_b: bool = False) -> Path:
    model, vocab, meta = load_checkpoint_model(ckpt)
    data = prepare_data(cfg, vocab.tokens)
    if not data.test:
        raise ValueError("empty test set")
    verbs = VerbLexicon.bundled()
    trained = meta.get("run_config", {})
    model_id = "rdeepsc" + ("+fgm" if trained.get("adv") else "") + ("" if model.cfg.calibrate else "-nocal")
    perturber = fgm_perturber(cfg.epsilon) if attack else None
    if attack:
        model_id += "@attack"
    embedder, idf, b = _similarity(model, vocab, data.test, empirical_b, cfg.seed)
    rows = []
    for kind in _channels(cfg, only_channel):
        system = semantic_system(model, vocab, verbs, kind, perturber)
        rows += evaluate_sweep(system, data.test, cfg.snr_list, cfg.noise_ratios, kind, model_id, cfg.seed, embedder, idf, b)
    return _emit(rows, Path(cfg.out) / "eval.csv", plot, "R-DeepSC")


def cmd_baseline(cfg: RunConfig, ckpt: str | None = None, only_channel: str | None = None, plot: str | None = None) -> Path:
    data = prepare_data(cfg)
    chain = ClassicalChain.from_corpus(data.train + data.test)
    verbs = VerbLexicon.bundled()
    embedder = idf = None
    b = 0.0
    if ckpt is not None:
        model, vocab, _ = load_checkpoint_model(ckpt)
        embedder, idf, b = _similarity(model, vocab, data.test, False, cfg.seed)
    rows = []
    for kind in _channels(cfg, only_channel):
        system = classical_system(chain, kind, data.vocab, verbs)
        rows += evaluate_sweep(system, data.test, cfg.snr_list, cfg.noise_ratios, kind, "classical", cfg.seed, embedder, idf, b)
    return _emit(rows, Path(cfg.out) / "baseline.csv", plot, "Huffman + RS + 64-QAM")


def _emit(rows, path: Path, plot: str | None, title: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    write_report(rows, path)
    print(f"wrote {len(rows)} rows to {path}")
    for r in rows:
        print(f"  {r.channel:<8} snr={r.snr_db:5.1f} ratio={r.noise_ratio:.2f} bleu={r.bleu:.4f} sim={r.sim_score:.4f}")
    if plot:
        plot_rows(rows, plot, title=f"{title}: BLEU versus SNR")
    return path


def cmd_plot(inputs: list[str], out: str, metric: str = "bleu", title: str = "") -> Path:
    rows = [r for path in inputs for r in read_report(path)]
    if not rows:
        raise ValueError("no rows to plot")
    plot_rows(rows, out, metric, title)
    print(f"wrote {out}")
    return Path(out)


# -- argument parsing -------------------------------------------------------------


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    p.add_argument("--corpus", help="plain-text corpus, one sentence per line (default: bundled desk corpus)")
    p.add_argument("--max-sentences", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--noise-ratio", type=float, help="literal-noise ratio used for training and corruption")
    p.add_argument("--noise-ratios", type=_float_list, help="comma-separated ratios for the evaluation grid")
    p.add_argument("--snr-list", type=_float_list, help="comma-separated SNRs in dB (Es/N0 per complex symbol)")
    p.add_argument("--channel", choices=CHANNEL_KINDS, help="channel kind; restricts eval and baseline to one channel")
    p.add_argument("--epsilon", type=float, help="FGM perturbation norm per sentence")
    p.add_argument("--alpha", type=float, help="weight of the mutual-information term")
    p.add_argument("--beta", type=float, help="weight of the detection-network BCE term")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rdeepsc", description="Robust semantic text transmission simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("corrupt", help="inject literal noise and write JSONL samples")
    _common(p)

    p = sub.add_parser("train", help="train the transceiver, checkpointing every epoch")
    _common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--adv", action="store_true", default=None, help="enable adversarial (FGM) training")
    p.add_argument("--no-calibrate", dest="calibrate", action="store_false", default=None, help="disable attention calibration")
    p.add_argument("--snr", type=float, dest="snr_db", help="training SNR in dB")
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("eval", help="sweep a trained checkpoint over SNR and noise ratio")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--attack", action="store_true", help="apply an FGM attack of norm --epsilon at evaluation")
    p.add_argument("--empirical-b", action="store_true", help="estimate the similarity baseline from mismatched pairs")
    p.add_argument("--plot", help="also write an SVG chart to this path")

    p = sub.add_parser("baseline", help="sweep the Huffman + RS + 64-QAM chain")
    _common(p)
    p.add_argument("--checkpoint", help="optional checkpoint whose encoder scores similarity")
    p.add_argument("--plot", help="also write an SVG chart to this path")

    p = sub.add_parser("plot", help="draw metric-versus-SNR curves from report CSVs")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--metric", choices=("bleu", "sim_score"), default="bleu")
    p.add_argument("--title", default="")
    return parser


OVERRIDES = {
    "corpus": "corpus",
    "max_sentences": "max_sentences",
    "seed": "seed",
    "out": "out",
    "noise_ratio": "noise_ratio",
    "noise_ratios": "noise_ratios",
    "snr_list": "snr_list",
    "epsilon": "epsilon",
    "alpha": "alpha",
    "beta": "beta",
    "epochs": "epochs",
    "adv": "adv",
    "calibrate": "calibrate",
    "snr_db": "snr_db",
}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    base = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {field: getattr(args, attr) for attr, field in OVERRIDES.items() if hasattr(args, attr)}
    if getattr(args, "channel", None) is not None:
        overrides["channel"] = args.channel
    return base.with_overrides(**overrides).validate()


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING)
    try:
        if args.command == "plot":
            cmd_plot(args.inputs, args.out, args.metric, args.title)
            return 0
        cfg = resolve_config(args)
        if args.command == "corrupt":
            cmd_corrupt(cfg)
        elif args.command == "train":
            cmd_train(cfg, args.resume)
        elif args.command == "eval":
            cmd_eval(cfg, args.checkpoint, args.channel, args.attack, args.plot, args.empirical_b)
        elif args.command == "baseline":
            cmd_baseline(cfg, args.checkpoint, args.channel, args.plot)
    except (ConfigError, checkpoint.CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
