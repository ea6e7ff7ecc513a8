"""Objective quality metrics: projection SDR and STOI.

SDR here is the scale-invariant single-coefficient projection ratio, not the
filtered BSS-eval variant, so absolute values are comparable only within this
codebase. STOI follows the published short-time envelope-correlation recipe:
10 kHz, 15 one-third-octave bands from 150 Hz, 384 ms segments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .audio import AudioBuffer
from .errors import InvalidInputError
from .stft import Spectrogram

SDR_CAP_DB = 60.0

STOI_FS = 10000
STOI_FRAME = 256
STOI_HOP = 128
STOI_FFT = 512
STOI_NUM_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_SEG_FRAMES = 30
STOI_DYN_RANGE_DB = 40.0
STOI_CLIP_DB = -15.0

SPECTROGRAM_FLOOR = 1e-9


@dataclass(frozen=True)
class MetricResult:
    name: str
    value: float
    units: str


def _trimmed(estimate: AudioBuffer, reference: AudioBuffer):
    if estimate.sample_rate != reference.sample_rate:
        raise InvalidInputError("estimate and reference sample rates differ")
    n = min(estimate.num_samples, reference.num_samples)
    if n == 0:
        raise InvalidInputError("empty signals")
    return estimate.samples[:n], reference.samples[:n]


def sdr(estimate: AudioBuffer, reference: AudioBuffer) -> float:
    """Scale-invariant projection SDR in dB, clamped to +-60.

    The reference-aligned component is the orthogonal projection of the
    estimate onto the reference; everything else counts as distortion.
    """
    est, ref = _trimmed(estimate, reference)
    ref_energy = np.dot(ref, ref)
    if ref_energy == 0.0:
        raise InvalidInputError("reference signal is all zero")
    target = (np.dot(est, ref) / ref_energy) * ref
    target_energy = np.dot(target, target)
    error_energy = np.dot(est - target, est - target)
    if error_energy == 0.0 or target_energy >= error_energy * 10.0 ** (SDR_CAP_DB / 10.0):
        return SDR_CAP_DB
    if target_energy == 0.0:
        return -SDR_CAP_DB
    return float(max(10.0 * np.log10(target_energy / error_energy), -SDR_CAP_DB))


def _resample_to_10k(x: np.ndarray, sample_rate: int) -> np.ndarray:
    """Polyphase windowed-sinc resampling to the STOI rate (64 taps per
    phase); group delay compensated so frame indices stay aligned."""
    if sample_rate == STOI_FS:
        return x
    from math import gcd
    g = gcd(sample_rate, STOI_FS)
    up, down = STOI_FS // g, sample_rate // g
    taps = 64 * up
    h = signal.firwin(taps, 1.0 / max(up, down), window="hann")
    y = signal.upfirdn(h * up, x, up=up, down=down)
    delay = (taps - 1) / 2.0 / down
    start = int(round(delay))
    out_len = int(x.shape[0] * up / down)
    return y[start:start + out_len]


def _frame_indices(num_samples: int):
    starts = np.arange(0, num_samples - STOI_FRAME + 1, STOI_HOP)
    return starts


def _remove_silent_frames(x: np.ndarray, y: np.ndarray):
    """Drop frames whose clean-signal energy is 40 dB below the loudest,
    overlap-adding the kept Hann-windowed frames back together."""
    w = np.hanning(STOI_FRAME)
    starts = _frame_indices(x.shape[0])
    if starts.size == 0:
        return x[:0], y[:0]
    frames_x = np.stack([x[s:s + STOI_FRAME] * w for s in starts])
    frames_y = np.stack([y[s:s + STOI_FRAME] * w for s in starts])
    energies = 20.0 * np.log10(np.linalg.norm(frames_x, axis=1) + np.finfo(float).eps)
    keep = energies > energies.max() - STOI_DYN_RANGE_DB
    frames_x, frames_y = frames_x[keep], frames_y[keep]
    count = frames_x.shape[0]
    out_len = (count - 1) * STOI_HOP + STOI_FRAME if count else 0
    x_out = np.zeros(out_len)
    y_out = np.zeros(out_len)
    for i in range(count):
        sl = slice(i * STOI_HOP, i * STOI_HOP + STOI_FRAME)
        x_out[sl] += frames_x[i]
        y_out[sl] += frames_y[i]
    return x_out, y_out


def _third_octave_matrix(sample_rate: int):
    """Boolean band-membership matrix (bands, fft_bins), edges snapped to
    the nearest FFT bin frequency."""
    freqs = np.linspace(0.0, sample_rate, STOI_FFT + 1)[:STOI_FFT // 2 + 1]
    j = np.arange(STOI_NUM_BANDS)
    cf = STOI_MIN_FREQ * 2.0 ** (j / 3.0)
    lo = cf * 2.0 ** (-1.0 / 6.0)
    hi = cf * 2.0 ** (1.0 / 6.0)
    bands = np.zeros((STOI_NUM_BANDS, freqs.shape[0]), dtype=bool)
    for b in range(STOI_NUM_BANDS):
        lo_i = int(np.argmin(np.abs(freqs - lo[b])))
        hi_i = int(np.argmin(np.abs(freqs - hi[b])))
        bands[b, lo_i:hi_i] = True
    return bands


def _band_envelopes(x: np.ndarray, bands: np.ndarray) -> np.ndarray:
    """One-third-octave short-time envelopes, (num_frames, bands)."""
    w = np.hanning(STOI_FRAME)
    starts = _frame_indices(x.shape[0])
    frames = np.stack([x[s:s + STOI_FRAME] * w for s in starts])
    spec = np.fft.rfft(frames, n=STOI_FFT, axis=1)
    power = np.abs(spec) ** 2
    return np.sqrt(power @ bands.T)


def stoi(estimate: AudioBuffer, reference: AudioBuffer) -> float:
    """Short-time objective intelligibility in [0, 1].

    Mean correlation between 384 ms one-third-octave envelope segments of
    the clean reference and the normalized, clipped estimate.
    """
    est, ref = _trimmed(estimate, reference)
    est = _resample_to_10k(est, estimate.sample_rate)
    ref = _resample_to_10k(ref, reference.sample_rate)
    ref, est = _remove_silent_frames(ref, est)
    if ref.shape[0] < (STOI_SEG_FRAMES - 1) * STOI_HOP + STOI_FRAME:
        raise InvalidInputError(
            "fewer than 384 ms of active speech after silent-frame removal")
    bands = _third_octave_matrix(STOI_FS)
    x_env = _band_envelopes(ref, bands)
    y_env = _band_envelopes(est, bands)
    clip_gain = 10.0 ** (-STOI_CLIP_DB / 20.0)
    eps = np.finfo(float).eps
    scores = []
    for m in range(STOI_SEG_FRAMES, x_env.shape[0] + 1):
        x_seg = x_env[m - STOI_SEG_FRAMES:m]
        y_seg = y_env[m - STOI_SEG_FRAMES:m]
        alpha = np.linalg.norm(x_seg, axis=0) / (np.linalg.norm(y_seg, axis=0) + eps)
        y_norm = np.minimum(alpha * y_seg, (1.0 + clip_gain) * x_seg)
        xc = x_seg - x_seg.mean(axis=0)
        yc = y_norm - y_norm.mean(axis=0)
        denom = np.linalg.norm(xc, axis=0) * np.linalg.norm(yc, axis=0) + eps
        scores.append(np.sum(xc * yc, axis=0) / denom)
    return float(np.mean(scores))


def export_spectrogram_csv(spec: Spectrogram, path) -> None:
    """Log-magnitude matrix (frames, bins) in dB as exact-round-trip CSV."""
    logmag = 20.0 * np.log10(np.abs(spec.bins) + SPECTROGRAM_FLOOR)
    np.savetxt(path, logmag, delimiter=",", fmt="%.17g")


def import_spectrogram_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=","))


def export_spectrogram_image(spec: Spectrogram, path) -> None:
    """8-bit PGM of the log magnitudes: width = frames, height = bins, low
    frequencies at the bottom, 80 dB display range below the peak."""
    logmag = 20.0 * np.log10(np.abs(spec.bins) + SPECTROGRAM_FLOOR)
    vmax = logmag.max()
    vmin = vmax - 80.0
    scaled = np.clip((logmag - vmin) / (vmax - vmin), 0.0, 1.0)
    gray = np.round(255.0 * scaled).astype(np.uint8)
    image = gray.T[::-1]
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n255\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(image.tobytes())
