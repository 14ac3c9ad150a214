"""Run configuration: JSON file plus command-line overrides, validated by field."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from rdeepsc.channel import KINDS as CHANNEL_KINDS
from rdeepsc.text.noise import KINDS as NOISE_KINDS

DEFAULT_SNRS = (0.0, 3.0, 6.0, 9.0, 12.0, 15.0, 18.0)


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class RunConfig:
    corpus: str | None = None  # None selects the bundled desk corpus
    vocab_cap: int = 4000
    max_sentences: int | None = None
    test_size: int = 300
    min_len: int = 4
    max_len_words: int = 30
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 512
    k_sym: int = 8
    d_det: int = 64
    max_len: int = 32
    calibrate: bool = True
    noise_ratio: float = 0.2
    noise_kinds: list[str] = field(default_factory=lambda: list(NOISE_KINDS))
    channel: str = "awgn"
    snr_db: float = 12.0
    snr_list: list[float] = field(default_factory=lambda: list(DEFAULT_SNRS))
    noise_ratios: list[float] = field(default_factory=lambda: [0.0, 0.2])
    channels: list[str] = field(default_factory=lambda: ["awgn", "rayleigh"])
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    alpha: float = 0.05
    beta: float = 1.0
    epsilon: float = 0.5
    adv: bool = False
    adv_loss: str = "ce"
    clip_norm: float | None = None
    val_size: int = 200
    seed: int = 0
    out: str = "runs/default"

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown configuration field")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError("config", f"file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config", "top level must be a JSON object")
        return cls.from_dict(data)

    def with_overrides(self, **overrides) -> "RunConfig":
        data = asdict(self)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self, need_corpus: bool = True) -> "RunConfig":
        if need_corpus and self.corpus is not None and not Path(self.corpus).is_file():
            raise ConfigError("corpus", f"file not found: {self.corpus}")
        positive = ("vocab_cap", "d_model", "n_heads", "n_layers", "d_ff", "k_sym", "d_det", "max_len", "batch_size", "min_len")
        for name in positive:
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                raise ConfigError(name, f"must be a positive integer, got {getattr(self, name)!r}")
        if self.vocab_cap <= 5:
            raise ConfigError("vocab_cap", "must leave room beyond the 5 reserved tokens")
        if self.d_model % self.n_heads:
            raise ConfigError("n_heads", f"{self.n_heads} does not divide d_model={self.d_model}")
        if self.d_model % 2:
            raise ConfigError("d_model", "must be even")
        if self.epochs < 0:
            raise ConfigError("epochs", "must be >= 0")
        if self.max_sentences is not None and self.max_sentences < 1:
            raise ConfigError("max_sentences", "must be positive")
        if self.test_size < 1:
            raise ConfigError("test_size", "must be positive")
        if self.max_len_words < self.min_len:
            raise ConfigError("max_len_words", "must be >= min_len")
        if self.max_len_words + 1 > self.max_len:
            raise ConfigError("max_len", f"must exceed max_len_words={self.max_len_words} to fit <end>")
        for name in ("noise_ratio",):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(name, f"must lie in [0, 1], got {getattr(self, name)}")
        if any(not 0.0 <= r <= 1.0 for r in self.noise_ratios):
            raise ConfigError("noise_ratios", "every ratio must lie in [0, 1]")
        if not self.noise_ratios:
            raise ConfigError("noise_ratios", "must not be empty")
        bad = set(self.noise_kinds) - set(NOISE_KINDS)
        if bad or not self.noise_kinds:
            raise ConfigError("noise_kinds", f"must be a non-empty subset of {NOISE_KINDS}")
        if self.channel not in CHANNEL_KINDS:
            raise ConfigError("channel", f"must be one of {CHANNEL_KINDS}")
        if not self.channels or any(c not in CHANNEL_KINDS for c in self.channels):
            raise ConfigError("channels", f"entries must be among {CHANNEL_KINDS}")
        if not self.snr_list or any(not math.isfinite(s) for s in self.snr_list + [self.snr_db]):
            raise ConfigError("snr_list", "must be a non-empty list of finite values")
        if self.lr <= 0:
            raise ConfigError("lr", "must be positive")
        if self.alpha < 0:
            raise ConfigError("alpha", "must be >= 0")
        if self.beta < 0:
            raise ConfigError("beta", "must be >= 0")
        if not math.isfinite(self.epsilon) or self.epsilon < 0 or (self.adv and self.epsilon == 0):
            raise ConfigError("epsilon", "must be > 0 when adversarial training is on (and never negative)")
        if self.adv_loss not in ("ce", "total"):
            raise ConfigError("adv_loss", "must be 'ce' or 'total'")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("clip_norm", "must be positive")
        return self
