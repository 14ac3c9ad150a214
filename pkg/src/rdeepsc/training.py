"""Losses, mutual-information estimator, FGM perturbations and the training loop."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from rdeepsc import checkpoint, diagnostics
from rdeepsc.channel import ChannelConfig
from rdeepsc.engine import Adam, Tensor, backward, grad, no_record, ops, record
from rdeepsc.metrics import bleu
from rdeepsc.nn import Linear, Module
from rdeepsc.text.noise import NoiseSpec, NoisySample, VerbLexicon, inject_literal_noise
from rdeepsc.text.vocab import END_ID, PAD_ID, START_ID, Vocabulary, encode
from rdeepsc.transceiver import (
    ModelConfig,
    RDeepSC,
    channel_perturbation,
    pad_batch,
    receive_logits,
    transmit,
    transmit_receive_batch,
)

PROB_CLAMP = 1e-7


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass(frozen=True)
class AdversarialConfig:
    epsilon: float = 0.5
    enabled: bool = False
    loss_choice: str = "ce"

    def __post_init__(self) -> None:
        if self.loss_choice not in ("ce", "total"):
            raise ValueError(f"loss_choice must be 'ce' or 'total', got {self.loss_choice!r}")
        if self.epsilon < 0 or not math.isfinite(self.epsilon):
            raise ValueError(f"epsilon must be finite and >= 0, got {self.epsilon}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    alpha: float = 0.05
    beta: float = 1.0
    seed: int = 0
    adv: AdversarialConfig = field(default_factory=AdversarialConfig)
    clip_norm: float | None = None
    val_size: int = 200
    mi_hidden: int = 64

    def __post_init__(self) -> None:
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")


@dataclass(frozen=True)
class LossBreakdown:
    l_ce: float
    l_mi: float
    l_bce: float
    total: float
    alpha: float
    beta: float


# -- loss terms ---------------------------------------------------------------


def cross_entropy_loss(logits: Tensor, targets) -> Tensor:
    """Mean token NLL over non-pad targets."""
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise ValueError(f"logits {logits.shape} do not match targets {targets.shape}")
    keep = np.flatnonzero(targets.reshape(-1) != PAD_ID)
    if keep.size == 0:
        raise ValueError("target contains only padding")
    flat = ops.log_softmax(logits, axis=-1).reshape(-1, logits.shape[-1])
    picked = flat[keep, targets.reshape(-1)[keep]]
    return -ops.mean(picked)


def detection_bce(p: Tensor, labels, valid=None) -> Tensor:
    labels = np.asarray(labels, dtype=np.float64)
    if p.shape != labels.shape:
        raise ValueError(f"{p.shape} probabilities vs {labels.shape} labels")
    q = ops.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    per = -(labels * ops.log(q) + (1.0 - labels) * ops.log(1.0 - q))
    if valid is None:
        return ops.mean(per)
    mask = np.asarray(valid, dtype=np.float64)
    return ops.sum(per * mask) / mask.sum()


class MiEstimator(Module):
    """Statistics network T(x, y): one hidden ReLU layer, scalar output."""

    def __init__(self, d_in: int, hidden: int = 64, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.inner = Linear(d_in, hidden, rng)
        self.outer = Linear(hidden, 1, rng)

    def __call__(self, xy: Tensor) -> Tensor:
        out = self.outer(ops.relu(self.inner(xy)))
        return out.reshape(out.shape[:-1])


def mine_mi_lower_bound(x: Tensor, y: Tensor, est: MiEstimator, perm=None, rng=None) -> Tensor:
    """Donsker-Varadhan bound E_joint[T] - log E_marginal[e^T], marginals by shuffling y."""
    x, y = ops.as_tensor(x), ops.as_tensor(y)
    n = x.shape[0]
    if n < 2:
        raise ValueError("MI bound needs at least two samples to shuffle")
    if perm is None:
        perm = (rng or np.random.default_rng()).permutation(n)
    joint = est(ops.concat([x, y], axis=-1))
    marginal = est(ops.concat([x, y[np.asarray(perm)]], axis=-1))
    return ops.mean(joint) - (ops.logsumexp(marginal, axis=0) - math.log(n))


def total_loss(l_ce: Tensor, l_mi: Tensor, l_bce: Tensor, alpha: float, beta: float) -> tuple[Tensor, LossBreakdown]:
    """l_ce - alpha * l_mi + beta * l_bce; the MI bound is maximized."""
    parts = {"l_ce": l_ce.item(), "l_mi": l_mi.item(), "l_bce": l_bce.item()}
    bad = [k for k, v in parts.items() if not math.isfinite(v)]
    if bad:
        raise NonFiniteLoss(f"non-finite loss component(s): {bad}")
    total = l_ce
    if alpha:
        total = total - alpha * l_mi
    if beta:
        total = total + beta * l_bce
    return total, LossBreakdown(total=total.item(), alpha=alpha, beta=beta, **parts)


def fgm_perturbation(g: np.ndarray, epsilon: float, axis=None) -> np.ndarray:
    """epsilon * g / ||g||_2. With ``axis`` the norm is taken per slice over those axes."""
    g = np.asarray(g, dtype=np.float64)
    keep = axis is not None
    # scale before squaring so tiny or huge gradients neither underflow nor overflow
    peak = np.max(np.abs(g), axis=axis, keepdims=keep)
    zero = peak == 0
    if np.any(zero):
        diagnostics.flag("zero_gradient", int(np.sum(zero)))
    unit = g / np.where(zero, 1.0, peak)
    norm = np.sqrt(np.sum(unit * unit, axis=axis, keepdims=keep))
    return np.where(zero, 0.0, epsilon * unit / np.where(zero, 1.0, norm))


# -- batches ------------------------------------------------------------------


@dataclass
class Batch:
    src: np.ndarray
    valid: np.ndarray
    labels: np.ndarray
    tgt_in: np.ndarray
    tgt_out: np.ndarray


def make_batch(samples: Sequence[NoisySample]) -> Batch:
    src, valid = pad_batch([s.noisy.ids for s in samples])
    labels, _ = pad_batch([s.labels for s in samples])
    tgt_in, _ = pad_batch([s.clean.ids for s in samples], prefix=START_ID)
    tgt_out, _ = pad_batch([s.clean.ids for s in samples], suffix=END_ID)
    return Batch(src, valid, labels.astype(np.float64), tgt_in, tgt_out)


@dataclass
class StepNoise:
    """Channel noise and MINE shuffle shared by the clean and adversarial passes."""

    delta: np.ndarray
    perm: np.ndarray


def draw_step_noise(model: RDeepSC, batch: Batch, channel: ChannelConfig, rng: np.random.Generator) -> StepNoise:
    shape = batch.src.shape + (2 * model.cfg.k_sym,)
    # the equalized channel adds noise that does not depend on the symbols
    delta = channel_perturbation(np.zeros(shape), channel, rng, batch.valid)
    return StepNoise(delta, rng.permutation(int(batch.valid.sum())))


def forward_losses(model, est, batch: Batch, noise: StepNoise, alpha: float, beta: float, perturb=None):
    """Returns (total, l_ce, breakdown, transmission)."""
    tx = transmit(model, batch.src, batch.valid, perturb)
    received = tx.symbols + noise.delta
    logits = receive_logits(model, received, batch.valid, batch.tgt_in)
    l_ce = cross_entropy_loss(logits, batch.tgt_out)
    tokens = np.nonzero(batch.valid)
    l_mi = mine_mi_lower_bound(tx.symbols[tokens], received[tokens], est, noise.perm)
    l_bce = detection_bce(tx.p, batch.labels, batch.valid)
    total, breakdown = total_loss(l_ce, l_mi, l_bce, alpha, beta)
    return total, l_ce, breakdown, tx


def _clip(params: list[Tensor], max_norm: float | None) -> None:
    if max_norm is None:
        return
    norm = math.sqrt(sum(float(np.sum(p.grad**2)) for p in params if p.grad is not None))
    if norm > max_norm:
        for p in params:
            if p.grad is not None:
                p.grad *= max_norm / norm


def plain_step(model, est, opt: Adam, batch: Batch, noise: StepNoise, cfg: TrainConfig) -> LossBreakdown:
    opt.zero_grad()
    with record():
        total, _, breakdown, _ = forward_losses(model, est, batch, noise, cfg.alpha, cfg.beta)
        backward(total)
    _clip(opt.params, cfg.clip_norm)
    opt.step()
    return breakdown


def adversarial_step(model, est, opt: Adam, batch: Batch, noise: StepNoise, cfg: TrainConfig, counter=None):
    """Average the clean loss and the loss at X_embed + N_A, then take one optimizer step."""
    opt.zero_grad()
    with record():
        total, l_ce, clean, tx = forward_losses(model, est, batch, noise, cfg.alpha, cfg.beta)
        attack = l_ce if cfg.adv.loss_choice == "ce" else total
        (g,) = grad(attack, [tx.x_embed])
        backward(total * 0.5)
    n_a = fgm_perturbation(g, cfg.adv.epsilon, axis=(-2, -1))
    with record():
        total_adv, _, adv, _ = forward_losses(model, est, batch, noise, cfg.alpha, cfg.beta, n_a)
        backward(total_adv * 0.5)
    if counter is not None:
        counter["adv_forwards"] += 1
    _clip(opt.params, cfg.clip_norm)
    opt.step()
    return clean, adv


# -- epochs -------------------------------------------------------------------


def sample_seed(base: int, epoch: int, index: int) -> int:
    return int(np.random.SeedSequence([base, epoch, index]).generate_state(1)[0])


def corrupt_all(sentences, vocab, verbs, noise: NoiseSpec, epoch: int) -> list[NoisySample]:
    return [
        inject_literal_noise(encode(s, vocab), noise.with_seed(sample_seed(noise.seed, epoch, i)), vocab, verbs)
        for i, s in enumerate(sentences)
    ]


def snap_float32(params: list[Tensor], opt: Adam | None = None) -> None:
    """Round parameters (and Adam moments) to float32 so a checkpoint resumes exactly."""
    for p in params:
        p.data = checkpoint.to_float32(p.data)
    if opt is not None:
        for buf in opt.state.m + opt.state.v:
            buf[...] = checkpoint.to_float32(buf)


def all_params(model: RDeepSC, est: MiEstimator) -> list[tuple[str, Tensor]]:
    return [("model." + n, p) for n, p in model.named_parameters()] + [
        ("mi." + n, p) for n, p in est.named_parameters()
    ]


def save_checkpoint(path, model: RDeepSC, est: MiEstimator, opt: Adam | None, meta: dict) -> None:
    named = all_params(model, est)
    tensors = {n: p.data for n, p in named}
    meta = dict(meta, model_config=model.cfg.to_dict())
    if opt is not None:
        for (n, _), m, v in zip(named, opt.state.m, opt.state.v):
            tensors["adam_m." + n] = m
            tensors["adam_v." + n] = v
        meta["adam_step"] = opt.state.step
    checkpoint.save(path, tensors, meta)


def restore(tensors: dict, model: RDeepSC, est: MiEstimator | None = None, opt: Adam | None = None, meta=None) -> None:
    named = [("model." + n, p) for n, p in model.named_parameters()]
    if est is not None:
        named += [("mi." + n, p) for n, p in est.named_parameters()]
    checkpoint.check_shapes(tensors, {n: p.shape for n, p in named})
    for n, p in named:
        p.data = tensors[n].copy()
    if opt is not None:
        for i, (n, _) in enumerate(named):
            opt.state.m[i][...] = tensors["adam_m." + n]
            opt.state.v[i][...] = tensors["adam_v." + n]
        opt.state.step = int(meta["adam_step"])


def load_model(path) -> tuple[RDeepSC, dict]:
    tensors, meta = checkpoint.load(path)
    model = RDeepSC(ModelConfig(**meta["model_config"]))
    restore(tensors, model)
    return model, meta


def log_columns(adv: bool) -> list[str]:
    cols = ["epoch", "l_ce", "l_mi", "l_bce", "total", "val_bleu"]
    return cols + ["adv_total"] if adv else cols


def validation_bleu(model, vocab, verbs, val_set, noise: NoiseSpec, channel: ChannelConfig, seed: int) -> float:
    if not val_set:
        return float("nan")
    rng = np.random.default_rng([seed, 99])
    out = []
    for i in range(0, len(val_set), 64):
        chunk = list(val_set[i : i + 64])
        out += transmit_receive_batch(chunk, model, vocab, channel, noise.with_seed(noise.seed + i), verbs, rng)
    return bleu(out, [" ".join(encode(s, vocab).words) for s in val_set])


@dataclass
class TrainResult:
    history: list[dict]
    best_val_bleu: float
    counters: dict


def train(
    model: RDeepSC,
    train_set: Sequence[str],
    val_set: Sequence[str],
    vocab: Vocabulary,
    verbs: VerbLexicon,
    noise: NoiseSpec,
    channel: ChannelConfig,
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
    meta: dict | None = None,
    resume: str | Path | None = None,
    progress: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Epoch loop with per-epoch CSV log and checkpoint ``epoch_XXX.rdsc`` in ``out_dir``.

    Fresh literal noise is drawn every epoch. All randomness derives from
    (seed, epoch), so resuming from an epoch checkpoint continues exactly.
    """
    est = MiEstimator(4 * model.cfg.k_sym, cfg.mi_hidden, seed=cfg.seed + 1)
    params = model.parameters() + est.parameters()
    opt = Adam(params, lr=cfg.lr)
    start = 0
    if resume is not None:
        tensors, rmeta = checkpoint.load(resume)
        restore(tensors, model, est, opt, rmeta)
        start = int(rmeta["epoch"])
    snap_float32(params, opt)

    out = Path(out_dir) if out_dir is not None else None
    cols = log_columns(cfg.adv.enabled)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "train_log.csv"
        if start == 0 or not log_path.exists():
            with open(log_path, "w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(cols)

    val_set = list(val_set)[: cfg.val_size]
    history, counters, best = [], {"adv_forwards": 0, "steps": 0}, -1.0
    for epoch in range(start, cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        samples = corrupt_all(train_set, vocab, verbs, noise, epoch)
        order = rng.permutation(len(samples))
        sums = np.zeros(5)
        n_batches = 0
        for b, at in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[at : at + cfg.batch_size]
            batch = make_batch([samples[i] for i in idx])
            step_noise = draw_step_noise(model, batch, channel, rng)
            try:
                if cfg.adv.enabled:
                    br, adv = adversarial_step(model, est, opt, batch, step_noise, cfg, counters)
                else:
                    br, adv = plain_step(model, est, opt, batch, step_noise, cfg), None
            except NonFiniteLoss as exc:
                raise NonFiniteLoss(f"epoch {epoch + 1} batch {b}: {exc}") from None
            if not math.isfinite(br.total) or (adv is not None and not math.isfinite(adv.total)):
                raise NonFiniteLoss(f"epoch {epoch + 1} batch {b}: non-finite total loss")
            counters["steps"] += 1
            sums += [br.l_ce, br.l_mi, br.l_bce, br.total, adv.total if adv else 0.0]
            n_batches += 1
        snap_float32(params, opt)
        means = sums / max(n_batches, 1)
        row = dict(zip(["l_ce", "l_mi", "l_bce", "total"], means[:4].tolist()))
        row = {"epoch": epoch + 1, **row, "val_bleu": validation_bleu(model, vocab, verbs, val_set, noise, channel, cfg.seed)}
        if cfg.adv.enabled:
            row["adv_total"] = float(means[4])
        history.append(row)
        best = max(best, row["val_bleu"]) if math.isfinite(row["val_bleu"]) else best
        if out is not None:
            with open(out / "train_log.csv", "a", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow([repr(row[c]) if c != "epoch" else row[c] for c in cols])
            ckpt_meta = dict(meta or {}, epoch=epoch + 1, rng={"seed": cfg.seed, "next_epoch": epoch + 1})
            save_checkpoint(out / f"epoch_{epoch + 1:03d}.rdsc", model, est, opt, ckpt_meta)
        if progress is not None:
            progress(row)
    return TrainResult(history, best, counters)


# -- evaluation under attack ----------------------------------------------------


def fgm_perturber(epsilon: float, loss_choice: str = "ce", alpha: float = 0.05, beta: float = 1.0):
    """White-box attack for evaluation: perturb each sentence's embedding along its CE gradient."""

    def perturb(model: RDeepSC, src, valid, clean_ids) -> np.ndarray:
        tgt_in, _ = pad_batch(clean_ids, prefix=START_ID)
        tgt_out, _ = pad_batch(clean_ids, suffix=END_ID)
        with record():
            tx = transmit(model, src, valid)
            logits = receive_logits(model, tx.symbols, valid, tgt_in)
            (g,) = grad(cross_entropy_loss(logits, tgt_out), [tx.x_embed])
        return fgm_perturbation(g, epsilon, axis=(-2, -1))

    return perturb


def attacked_ce(model: RDeepSC, sentences, vocab, verbs, noise: NoiseSpec, channel: ChannelConfig, epsilon: float, seed: int = 0, batch_size: int = 64) -> float:
    """Token-weighted CE on ``sentences`` with FGM perturbations of norm ``epsilon`` per sentence.

    The attack gradient is taken under the same channel noise that is then
    used to score the perturbed input.
    """
    est = MiEstimator(4 * model.cfg.k_sym)
    rng = np.random.default_rng([seed, 123])
    samples = corrupt_all(sentences, vocab, verbs, noise, epoch=10**6)
    nll, tokens = 0.0, 0
    for at in range(0, len(samples), batch_size):
        batch = make_batch(samples[at : at + batch_size])
        step_noise = draw_step_noise(model, batch, channel, rng)
        perturb = None
        if epsilon > 0:
            with record():
                _, l_ce, _, tx = forward_losses(model, est, batch, step_noise, 0.0, 0.0)
                (g,) = grad(l_ce, [tx.x_embed])
            perturb = fgm_perturbation(g, epsilon, axis=(-2, -1))
        with no_record():
            _, l_ce, _, _ = forward_losses(model, est, batch, step_noise, 0.0, 0.0, perturb)
        n = int((batch.tgt_out != PAD_ID).sum())
        nll += l_ce.item() * n
        tokens += n
    return nll / tokens


def estimate_mi(x: np.ndarray, y: np.ndarray, steps: int = 2000, batch: int = 256, lr: float = 1e-3, hidden: int = 64, seed: int = 0, holdout: float = 0.25) -> float:
    """Fit a fresh estimator on paired samples and report the bound on held-out pairs."""
    rng = np.random.default_rng(seed)
    n_fit = int(len(x) * (1 - holdout))
    est = MiEstimator(x.shape[1] + y.shape[1], hidden, seed=seed)
    opt = Adam(est.parameters(), lr=lr)
    for _ in range(steps):
        idx = rng.choice(n_fit, size=batch, replace=False)
        opt.zero_grad()
        with record():
            backward(-mine_mi_lower_bound(Tensor(x[idx]), Tensor(y[idx]), est, rng=rng))
        opt.step()
    with no_record():
        held_x, held_y = Tensor(x[n_fit:]), Tensor(y[n_fit:])
        return mine_mi_lower_bound(held_x, held_y, est, rng=rng).item()


__all__ = [
    "AdversarialConfig",
    "Batch",
    "LossBreakdown",
    "MiEstimator",
    "NonFiniteLoss",
    "TrainConfig",
    "TrainResult",
    "adversarial_step",
    "attacked_ce",
    "cross_entropy_loss",
    "detection_bce",
    "estimate_mi",
    "fgm_perturbation",
    "fgm_perturber",
    "load_model",
    "make_batch",
    "mine_mi_lower_bound",
    "plain_step",
    "save_checkpoint",
    "total_loss",
    "train",
]
