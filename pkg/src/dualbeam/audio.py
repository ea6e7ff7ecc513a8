"""Time-domain audio containers and WAV file I/O.

Samples are kept as float64 in nominal [-1, 1] range. WAV files may be PCM
16-bit or IEEE float-32, mono or multichannel; resampling is not supported,
rate mismatches are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import DataError, InvalidInputError

DEFAULT_SAMPLE_RATE = 16000


@dataclass
class AudioBuffer:
    """Single-channel signal: samples (n,) float64 plus sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InvalidInputError(
                f"AudioBuffer expects a 1-D signal, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidInputError("AudioBuffer contains NaN or Inf samples")
        if int(self.sample_rate) <= 0:
            raise InvalidInputError(f"sample_rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)

    @property
    def num_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return self.num_samples / self.sample_rate


@dataclass
class MultichannelAudio:
    """D-channel signal: samples (D, n) float64, all channels at one rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise InvalidInputError(
                f"MultichannelAudio expects (channels, samples), got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidInputError("MultichannelAudio contains NaN or Inf samples")
        if int(self.sample_rate) <= 0:
            raise InvalidInputError(f"sample_rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)

    @classmethod
    def from_buffers(cls, buffers) -> "MultichannelAudio":
        buffers = list(buffers)
        if not buffers:
            raise InvalidInputError("need at least one channel")
        rate = buffers[0].sample_rate
        length = buffers[0].num_samples
        for b in buffers[1:]:
            if b.sample_rate != rate:
                raise InvalidInputError("channel sample rates differ")
            if b.num_samples != length:
                raise InvalidInputError("channel lengths differ")
        return cls(np.stack([b.samples for b in buffers]), rate)

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    def channel(self, index: int) -> AudioBuffer:
        return AudioBuffer(self.samples[index].copy(), self.sample_rate)


def read_wav(path, expected_rate: int | None = None) -> MultichannelAudio:
    """Read a WAV file (PCM16 or float32) into a MultichannelAudio.

    Mono files come back with one channel. If expected_rate is given and the
    file's rate differs, a DataError is raised (resampling is unsupported).
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"WAV file not found: {path}")
    try:
        rate, data = wavfile.read(str(path))
    except ValueError as exc:
        raise DataError(f"cannot read WAV file {path}: {exc}") from exc
    if expected_rate is not None and rate != expected_rate:
        raise DataError(
            f"{path}: sample rate {rate} Hz does not match required {expected_rate} Hz "
            "and resampling is not supported")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    else:
        raise DataError(f"{path}: unsupported WAV sample format {data.dtype}")
    if samples.ndim == 1:
        samples = samples[None, :]
    else:
        samples = samples.T  # wavfile gives (n, D)
    return MultichannelAudio(samples, rate)


def read_wav_mono(path, expected_rate: int | None = None) -> AudioBuffer:
    audio = read_wav(path, expected_rate=expected_rate)
    if audio.num_channels != 1:
        raise DataError(f"{path}: expected a mono file, found {audio.num_channels} channels")
    return audio.channel(0)


def write_wav(path, audio, fmt: str = "float32") -> None:
    """Write an AudioBuffer or MultichannelAudio as float32 (default) or pcm16."""
    if isinstance(audio, AudioBuffer):
        data = audio.samples[None, :]
        rate = audio.sample_rate
    else:
        data = audio.samples
        rate = audio.sample_rate
    out = data.T if data.shape[0] > 1 else data[0]
    if fmt == "float32":
        wavfile.write(str(path), rate, out.astype(np.float32))
    elif fmt == "pcm16":
        clipped = np.clip(out, -1.0, 32767.0 / 32768.0)
        wavfile.write(str(path), rate, np.round(clipped * 32768.0).astype(np.int16))
    else:
        raise DataError(f"unsupported WAV format {fmt!r} (use 'float32' or 'pcm16')")
