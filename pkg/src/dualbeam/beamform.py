"""Mask-weighted spatial covariance estimation and dual MVDR filters.

Two complementary beamformers share one weight formula: the target filter
uses the interference-plus-noise covariance in the inverse and the target
covariance in the numerator; the interference filter swaps the two. Both are
driven by a coarse oracle mask computed from the pre-mixed source images.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .stft import MultichannelSpectrogram, Spectrogram

# floor for magnitude ratios and log arguments
EPS = 1e-9

# relative diagonal loading before inversion; absolute loading for
# zero-trace bins
LOADING_REL = 1e-6
LOADING_ABS = 1e-12

ROLE_TARGET = "target"
ROLE_INTERFERENCE = "interference"


@dataclass
class Mask:
    """Real time-frequency weighting, (frames, bins), entries in [0, 1].

    Serves both as the coarse mask steering the covariance estimates and as
    the postfilter mask applied to beamformer outputs.
    """

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise InvalidInputError(f"mask must be 2-D, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise InvalidInputError("mask contains NaN or Inf")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise InvalidInputError("mask entries must lie in [0, 1]")

    @property
    def shape(self):
        return self.values.shape


@dataclass
class ScmSet:
    """Per-bin spatial covariance pair, each (bins, D, D) complex Hermitian."""

    phi_ss: np.ndarray
    phi_bb: np.ndarray

    def __post_init__(self):
        if self.phi_ss.shape != self.phi_bb.shape:
            raise InvalidInputError("covariance stacks must share a shape")
        if self.phi_ss.ndim != 3 or self.phi_ss.shape[1] != self.phi_ss.shape[2]:
            raise InvalidInputError(
                f"covariances must be (bins, D, D), got {self.phi_ss.shape}")

    @property
    def num_bins(self) -> int:
        return self.phi_ss.shape[0]

    @property
    def num_channels(self) -> int:
        return self.phi_ss.shape[1]

    def swapped(self) -> "ScmSet":
        return ScmSet(phi_ss=self.phi_bb, phi_bb=self.phi_ss)


@dataclass
class BeamformerWeights:
    """Per-bin weight vectors, (bins, D) complex; output is w[k]^H x[k].

    diagnostics counts bins that fell back to the plain reference-channel
    selector and records the worst conditioning seen before inversion.
    """

    weights: np.ndarray
    ref_index: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def num_bins(self) -> int:
        return self.weights.shape[0]

    @property
    def num_channels(self) -> int:
        return self.weights.shape[1]


def _check_mask_shape(mask: Mask, num_frames: int, num_bins: int):
    if mask.shape != (num_frames, num_bins):
        raise InvalidInputError(
            f"mask shape {mask.shape} does not match spectrogram "
            f"({num_frames}, {num_bins})")


def scm_from_mask(x: MultichannelSpectrogram, mask: Mask) -> ScmSet:
    """Accumulate mask-weighted outer products over frames.

    phi_ss[k] = sum_l m[l,k] x[l,k] x[l,k]^H and phi_bb uses 1 - m; both are
    Hermitian-symmetrized after accumulation.
    """
    _check_mask_shape(mask, x.num_frames, x.num_bins)
    m = mask.values
    conj = np.conj(x.bins)
    phi_ss = np.einsum("lk,dlk,elk->kde", m, x.bins, conj, optimize=True)
    phi_bb = np.einsum("lk,dlk,elk->kde", 1.0 - m, x.bins, conj, optimize=True)
    phi_ss = 0.5 * (phi_ss + np.conj(np.swapaxes(phi_ss, 1, 2)))
    phi_bb = 0.5 * (phi_bb + np.conj(np.swapaxes(phi_bb, 1, 2)))
    return ScmSet(phi_ss=phi_ss, phi_bb=phi_bb)


def oracle_mask_from_premix(target: MultichannelSpectrogram,
                            interf: MultichannelSpectrogram,
                            ref_index: int = 0) -> Mask:
    """Coarse energy-ratio mask from the pre-mixed images, reference channel:
    |S|^2 / (|S|^2 + |B|^2 + eps)."""
    if target.bins.shape != interf.bins.shape:
        raise InvalidInputError("premix spectrogram shapes differ")
    s2 = np.abs(target.bins[ref_index]) ** 2
    b2 = np.abs(interf.bins[ref_index]) ** 2
    return Mask(s2 / (s2 + b2 + EPS))


def _loaded(phi: np.ndarray) -> np.ndarray:
    """Diagonal loading: phi + rel*(trace/D)*I, absolute floor on dead bins."""
    d = phi.shape[1]
    trace = np.einsum("kdd->k", phi).real
    load = np.where(trace > 0.0, LOADING_REL * trace / d, LOADING_ABS)
    return phi + load[:, None, None] * np.eye(d)


def _swap_for_role(scms: ScmSet, role: str) -> ScmSet:
    if role == ROLE_INTERFERENCE:
        return scms.swapped()
    if role != ROLE_TARGET:
        raise InvalidInputError(f"unknown beamformer role {role!r}")
    return scms


def normalized_ratio_matrix(scms: ScmSet, role: str = ROLE_TARGET) -> np.ndarray:
    """Per-bin phi_bb^-1 phi_ss divided by its own trace, (bins, D, D).

    Well-posed bins have unit trace by construction; degenerate bins (zero
    trace after loading) come back as NaN for the caller to handle.
    """
    scms = _swap_for_role(scms, role)
    num = scms.phi_ss
    den = _loaded(scms.phi_bb)
    try:
        ratio = np.linalg.solve(den, num)
    except np.linalg.LinAlgError:
        ratio = np.full_like(num, np.nan)
        for k in range(num.shape[0]):
            try:
                ratio[k] = np.linalg.solve(den[k], num[k])
            except np.linalg.LinAlgError:
                pass
    # trace of a product of Hermitian matrices is analytically real;
    # dividing real/imag parts separately keeps IEEE-exact division (the
    # complex-division ufunc is not correctly rounded, so z/z can miss 1.0)
    trace = np.einsum("kdd->k", ratio).real
    safe = np.where(trace == 0.0, np.nan, trace)[:, None, None]
    out = np.empty_like(ratio)
    with np.errstate(invalid="ignore"):
        out.real = ratio.real / safe
        out.imag = ratio.imag / safe
    return out


def mvdr_weights(scms: ScmSet, ref_index: int = 0,
                 role: str = ROLE_TARGET) -> BeamformerWeights:
    """Distortionless weights from the covariance ratio.

    role=target: w[k] = (phi_bb^-1 phi_ss / trace) u; role=interference swaps
    the two covariances. Bins where the ratio is unusable (non-finite or
    zero trace) fall back to the one-hot selector u and are counted.
    """
    scms = _swap_for_role(scms, role)
    if not 0 <= ref_index < scms.num_channels:
        raise InvalidInputError(f"ref_index {ref_index} out of range")
    normalized = normalized_ratio_matrix(scms)
    k_bins, d = normalized.shape[0], normalized.shape[1]
    weights = np.zeros((k_bins, d), dtype=complex)
    fallback = 0
    for k in range(k_bins):
        w = normalized[k, :, ref_index]
        if np.all(np.isfinite(w)):
            weights[k] = w
        else:
            weights[k, ref_index] = 1.0
            fallback += 1
    diagnostics = {
        "fallback_bins": fallback,
        "max_condition": float(np.max(np.linalg.cond(_loaded(scms.phi_bb)))),
    }
    return BeamformerWeights(weights=weights, ref_index=ref_index,
                             diagnostics=diagnostics)


def apply_weights(w: BeamformerWeights, x: MultichannelSpectrogram) -> Spectrogram:
    """Per-bin inner product y[l,k] = w[k]^H x[l,k]."""
    if w.num_channels != x.num_channels:
        raise InvalidInputError(
            f"weights expect {w.num_channels} channels, got {x.num_channels}")
    if w.num_bins != x.num_bins:
        raise InvalidInputError(
            f"weights expect {w.num_bins} bins, got {x.num_bins}")
    y = np.einsum("kd,dlk->lk", np.conj(w.weights), x.bins, optimize=True)
    return Spectrogram(y, x.config, x.sample_rate, x.num_samples)


def oracle_postfilter_mask(y_target: Spectrogram, y_ref: Spectrogram) -> Mask:
    """Fine mask |y_ref| / (|y_target| + eps), clipped to [0, 1]."""
    if y_target.bins.shape != y_ref.bins.shape:
        raise InvalidInputError("spectrogram shapes differ")
    ratio = np.abs(y_ref.bins) / (np.abs(y_target.bins) + EPS)
    return Mask(np.clip(ratio, 0.0, 1.0))


def apply_mask(mask: Mask, y: Spectrogram) -> Spectrogram:
    """Scale complex bins by the real mask; phase is untouched.

    The output keeps the spectrogram dtype, so masking a single-precision
    record does not silently promote it (and a mask of ones is an exact
    identity for any storage precision).
    """
    _check_mask_shape(mask, y.num_frames, y.num_bins)
    real_dtype = np.float32 if y.bins.dtype == np.complex64 else np.float64
    gain = mask.values.astype(real_dtype, copy=False)
    return Spectrogram(gain * y.bins, y.config, y.sample_rate, y.num_samples)
