"""Complex baseband channel: Y = hX + n with perfect-CSI equalization.

SNR is Es/N0 per complex symbol on the unit-power frame, so the total complex
noise variance is ``10**(-snr_db/10)`` (half of it per real dimension).
Rayleigh fading is block fading: one h ~ CN(0, 1) per frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("awgn", "rayleigh", "identity")
DEEP_FADE = 1e-9


class DeepFadeError(RuntimeError):
    """|h| too small to invert without amplifying noise into garbage."""


@dataclass(frozen=True)
class ChannelConfig:
    kind: str = "awgn"
    snr_db: float = 12.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"channel kind must be one of {KINDS}, got {self.kind!r}")

    @property
    def noise_var(self) -> float:
        return 0.0 if self.kind == "identity" else snr_to_noise_var(self.snr_db)


@dataclass(frozen=True)
class FadingRealization:
    h: complex


def snr_to_noise_var(snr_db: float, signal_power: float = 1.0) -> float:
    if signal_power <= 0:
        raise ValueError(f"signal power must be positive, got {signal_power}")
    return signal_power / 10.0 ** (snr_db / 10.0)


def complex_noise(shape, noise_var: float, rng: np.random.Generator) -> np.ndarray:
    if noise_var < 0:
        raise ValueError(f"noise variance must be non-negative, got {noise_var}")
    scale = np.sqrt(noise_var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def apply_awgn(x: np.ndarray, noise_var: float, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    if noise_var < 0:
        raise ValueError(f"noise variance must be non-negative, got {noise_var}")
    if noise_var == 0:
        return x.copy()
    return x + complex_noise(x.shape, noise_var, rng)


def draw_fading(rng: np.random.Generator) -> complex:
    re, im = rng.standard_normal(2) * np.sqrt(0.5)
    return complex(re, im)


def apply_rayleigh(
    x: np.ndarray, noise_var: float, rng: np.random.Generator, h: complex | None = None
) -> tuple[np.ndarray, FadingRealization]:
    """One fading draw for the whole frame, then AWGN. Pass ``h`` to force a value."""
    x = np.asarray(x, dtype=np.complex128)
    if h is None:
        h = draw_fading(rng)
    return apply_awgn(h * x, noise_var, rng), FadingRealization(complex(h))


def equalize(y: np.ndarray, h: complex) -> np.ndarray:
    if abs(h) < DEEP_FADE:
        raise DeepFadeError(f"deep fade: |h| = {abs(h):.3g} below {DEEP_FADE}")
    return np.conj(h) / (abs(h) ** 2) * np.asarray(y, dtype=np.complex128)


def transmit_frame(
    x: np.ndarray, cfg: ChannelConfig, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, complex]:
    """Send one frame; returns (received Y, equalized X-hat, h)."""
    if cfg.kind == "identity":
        return x.copy(), x.copy(), 1.0 + 0j
    if cfg.kind == "awgn":
        y = apply_awgn(x, cfg.noise_var, rng)
        return y, y, 1.0 + 0j
    y, fade = apply_rayleigh(x, cfg.noise_var, rng)
    return y, equalize(y, fade.h), fade.h
