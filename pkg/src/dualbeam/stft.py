"""Windowed STFT analysis/synthesis with exact overlap-add reconstruction.

Frames of ``frame_size`` samples advance by ``hop`` samples; the one-sided
spectrum keeps frame_size/2 + 1 bins. The analysis/synthesis window pair must
satisfy constant overlap-add at the chosen hop. Signals are reflect-padded by
frame_size - hop at both ends before framing and the padding is trimmed after
synthesis, so the round trip is exact over the whole original signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import AudioBuffer, MultichannelAudio
from .errors import ConfigError, InvalidInputError

WINDOW_NAMES = ("sqrt_hann", "hann", "rect")


def _window(name: str, frame_size: int) -> np.ndarray:
    # periodic windows, as required for overlap-add
    n = np.arange(frame_size)
    hann = 0.5 * (1.0 - np.cos(2.0 * np.pi * n / frame_size))
    if name == "sqrt_hann":
        return np.sqrt(hann)
    if name == "hann":
        return hann
    if name == "rect":
        return np.ones(frame_size)
    raise ConfigError(f"unknown window {name!r}, expected one of {WINDOW_NAMES}")


def cola_deviation(window: np.ndarray, hop: int) -> float:
    """Relative deviation of the overlapped analysis*synthesis product from a
    constant; zero (to rounding) means the pair reconstructs exactly."""
    n = window.shape[0]
    product = window * window
    acc = np.zeros(n + 8 * n)
    for start in range(0, acc.shape[0] - n + 1, hop):
        acc[start:start + n] += product
    interior = acc[n:-n]
    return float((interior.max() - interior.min()) / interior.max())


@dataclass(frozen=True)
class StftConfig:
    frame_size: int = 512
    hop: int = 128
    window: str = "sqrt_hann"

    def __post_init__(self):
        if self.frame_size <= 0 or self.frame_size % 2 != 0:
            raise ConfigError(f"frame_size must be a positive even number, got {self.frame_size}")
        if not 0 < self.hop <= self.frame_size:
            raise ConfigError(f"hop must satisfy 0 < hop <= frame_size, got {self.hop}")
        if self.window not in WINDOW_NAMES:
            raise ConfigError(f"unknown window {self.window!r}, expected one of {WINDOW_NAMES}")
        if cola_deviation(self.analysis_window(), self.hop) > 1e-10:
            raise ConfigError(
                f"window {self.window!r} does not satisfy overlap-add at hop {self.hop}")

    @property
    def num_bins(self) -> int:
        return self.frame_size // 2 + 1

    @property
    def pad(self) -> int:
        return self.frame_size - self.hop

    def analysis_window(self) -> np.ndarray:
        return _window(self.window, self.frame_size)

    def synthesis_window(self) -> np.ndarray:
        return _window(self.window, self.frame_size)


@dataclass
class Spectrogram:
    """One-sided complex time-frequency matrix, (frames, bins)."""

    bins: np.ndarray
    config: StftConfig
    sample_rate: int
    num_samples: int

    def __post_init__(self):
        self.bins = np.asarray(self.bins)
        if self.bins.ndim != 2:
            raise InvalidInputError(f"Spectrogram bins must be 2-D, got {self.bins.shape}")
        if self.bins.shape[1] != self.config.num_bins:
            raise InvalidInputError(
                f"expected {self.config.num_bins} bins per frame, got {self.bins.shape[1]}")
        if self.bins.shape[0] < 1:
            raise InvalidInputError("Spectrogram needs at least one frame")

    @property
    def num_frames(self) -> int:
        return self.bins.shape[0]

    @property
    def num_bins(self) -> int:
        return self.bins.shape[1]

    def magnitude(self) -> np.ndarray:
        return np.abs(self.bins)


@dataclass
class MultichannelSpectrogram:
    """Per-channel spectrograms sharing framing, stacked as (channels, frames, bins)."""

    bins: np.ndarray
    config: StftConfig
    sample_rate: int
    num_samples: int

    def __post_init__(self):
        self.bins = np.asarray(self.bins)
        if self.bins.ndim != 3:
            raise InvalidInputError(
                f"MultichannelSpectrogram bins must be 3-D, got {self.bins.shape}")
        if self.bins.shape[2] != self.config.num_bins:
            raise InvalidInputError(
                f"expected {self.config.num_bins} bins per frame, got {self.bins.shape[2]}")

    @property
    def num_channels(self) -> int:
        return self.bins.shape[0]

    @property
    def num_frames(self) -> int:
        return self.bins.shape[1]

    @property
    def num_bins(self) -> int:
        return self.bins.shape[2]

    def channel(self, index: int) -> Spectrogram:
        return Spectrogram(self.bins[index].copy(), self.config,
                           self.sample_rate, self.num_samples)


def _frame_signal(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Reflect-pad, zero-extend to whole frames and return (frames, frame_size)."""
    n = cfg.frame_size
    hop = cfg.hop
    if x.shape[0] < n:
        x = np.concatenate([x, np.zeros(n - x.shape[0])])
    pad = cfg.pad
    if pad > 0:
        x = np.concatenate([x[pad:0:-1], x, x[-2:-pad - 2:-1]])
    num_frames = int(np.ceil((x.shape[0] - n) / hop)) + 1
    full = (num_frames - 1) * hop + n
    if full > x.shape[0]:
        x = np.concatenate([x, np.zeros(full - x.shape[0])])
    frames = np.lib.stride_tricks.sliding_window_view(x, n)[::hop]
    return frames[:num_frames]


def stft(audio: AudioBuffer, cfg: StftConfig) -> Spectrogram:
    """Analysis transform: windowed frames -> one-sided spectra (frames, bins)."""
    if not np.all(np.isfinite(audio.samples)):
        raise InvalidInputError("stft input contains NaN or Inf")
    frames = _frame_signal(audio.samples, cfg)
    windowed = frames * cfg.analysis_window()
    bins = np.fft.rfft(windowed, axis=1)
    return Spectrogram(bins, cfg, audio.sample_rate, audio.num_samples)


def istft(spec: Spectrogram) -> AudioBuffer:
    """Overlap-add synthesis; trims the analysis padding so the output length
    equals the original signal length."""
    cfg = spec.config
    n = cfg.frame_size
    hop = cfg.hop
    frames = np.fft.irfft(spec.bins, n=n, axis=1)
    frames *= cfg.synthesis_window()
    total = (spec.num_frames - 1) * hop + n
    out = np.zeros(total)
    norm = np.zeros(total)
    wprod = cfg.analysis_window() * cfg.synthesis_window()
    for l in range(spec.num_frames):
        start = l * hop
        out[start:start + n] += frames[l]
        norm[start:start + n] += wprod
    out = out / np.maximum(norm, 1e-12)
    pad = cfg.pad
    return AudioBuffer(out[pad:pad + spec.num_samples], spec.sample_rate)


def stft_multichannel(audio: MultichannelAudio, cfg: StftConfig) -> MultichannelSpectrogram:
    """Channel-wise analysis with identical framing across channels."""
    per_channel = [stft(audio.channel(d), cfg).bins for d in range(audio.num_channels)]
    return MultichannelSpectrogram(np.stack(per_channel), cfg,
                                   audio.sample_rate, audio.num_samples)


def spectral_energy(spec: Spectrogram) -> float:
    """Total energy of the windowed frames, computed from the one-sided
    spectrum (DC and Nyquist counted once, interior bins twice)."""
    n = spec.config.frame_size
    mag2 = np.abs(spec.bins) ** 2
    total = mag2[:, 0].sum() + mag2[:, -1].sum() + 2.0 * mag2[:, 1:-1].sum()
    return float(total / n)
