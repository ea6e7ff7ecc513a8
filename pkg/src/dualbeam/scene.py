"""Room scenes: shoebox geometry, microphone arrays, image-source RIRs.

A scene holds one target and one interfering point source near a microphone
array inside a rectangular room. Rendering convolves dry source signals with
simulated room impulse responses and returns the per-source images plus their
sample-exact sum, which downstream modules use both as the observed mixture
and as the oracle ground truth.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .audio import AudioBuffer, MultichannelAudio
from .errors import ConfigError, InvalidInputError

SPEED_OF_SOUND = 343.0
MAX_SOURCE_DISTANCE = 3.0
GAIN_RANGE_DB = (-20.0, 0.0)

# windowed-sinc fractional delay: 81 taps, half width 40.5 samples
SINC_HALF_WIDTH = 40.5
SINC_TAPS = 81

ARRAY_CATALOG = ("circular-4", "circular-8", "linear-4", "square-4")


@dataclass(frozen=True)
class ArrayGeometry:
    """Microphone layout in the array-local frame.

    positions: (D, 3) offsets in meters from the array center.
    """

    name: str
    positions: np.ndarray

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise InvalidInputError(f"array positions must be (D, 3), got {pos.shape}")
        diffs = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        np.fill_diagonal(diffs, np.inf)
        if np.min(diffs) < 1e-6:
            raise InvalidInputError("array has coincident microphones")
        object.__setattr__(self, "positions", pos)

    @property
    def num_mics(self) -> int:
        return self.positions.shape[0]

    @property
    def radius(self) -> float:
        return float(np.max(np.linalg.norm(self.positions, axis=1)))


def builtin_array(name: str) -> ArrayGeometry:
    """Catalog of fixed array layouts, all centered at the origin in the
    xy plane: circular-4 / circular-8 (r = 5 cm), linear-4 (4 cm pitch),
    square-4 (5 cm side)."""
    if name == "circular-4" or name == "circular-8":
        count = 4 if name == "circular-4" else 8
        angles = 2.0 * np.pi * np.arange(count) / count
        pos = 0.05 * np.stack([np.cos(angles), np.sin(angles), np.zeros(count)], axis=1)
    elif name == "linear-4":
        x = 0.04 * (np.arange(4) - 1.5)
        pos = np.stack([x, np.zeros(4), np.zeros(4)], axis=1)
    elif name == "square-4":
        half = 0.05 / 2.0
        pos = np.array([[-half, -half, 0.0], [half, -half, 0.0],
                        [half, half, 0.0], [-half, half, 0.0]])
    else:
        raise ConfigError(f"unknown array {name!r}, expected one of {ARRAY_CATALOG}")
    return ArrayGeometry(name, pos)


def resolve_array(entry) -> ArrayGeometry:
    """Accept either a builtin catalog name or a ready ArrayGeometry."""
    if isinstance(entry, str):
        return builtin_array(entry)
    if isinstance(entry, ArrayGeometry):
        return entry
    raise ConfigError(f"array entry must be a catalog name or ArrayGeometry, "
                      f"got {type(entry).__name__}")


@dataclass(frozen=True)
class RoomSpec:
    """Shoebox room with uniform frequency-independent wall absorption."""

    dimensions: np.ndarray
    absorption: float = 0.7
    max_reflection_order: int = 6
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        dims = np.asarray(self.dimensions, dtype=float)
        if dims.shape != (3,) or np.any(dims <= 0):
            raise InvalidInputError(f"room dimensions must be 3 positive lengths, got {dims}")
        if not 0.0 < self.absorption <= 1.0:
            raise InvalidInputError(f"absorption must be in (0, 1], got {self.absorption}")
        if self.max_reflection_order < 0:
            raise InvalidInputError("max_reflection_order must be >= 0")
        if self.speed_of_sound <= 0:
            raise InvalidInputError("speed_of_sound must be positive")
        object.__setattr__(self, "dimensions", dims)

    def contains(self, point: np.ndarray) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p > 0) and np.all(p < self.dimensions))


def _yaw_matrix(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Scene:
    """One two-source scenario: room, posed array, source positions, gain."""

    room: RoomSpec
    array: ArrayGeometry
    array_center: np.ndarray
    array_yaw: float
    target_pos: np.ndarray
    interf_pos: np.ndarray
    interf_gain_db: float
    rng_seed: int

    def __post_init__(self):
        center = np.asarray(self.array_center, dtype=float)
        target = np.asarray(self.target_pos, dtype=float)
        interf = np.asarray(self.interf_pos, dtype=float)
        for label, p in (("array center", center), ("target", target), ("interference", interf)):
            if p.shape != (3,):
                raise InvalidInputError(f"{label} position must be (3,), got {p.shape}")
            if not self.room.contains(p):
                raise InvalidInputError(f"{label} position {p} is outside the room")
        for label, p in (("target", target), ("interference", interf)):
            if np.linalg.norm(p - center) > MAX_SOURCE_DISTANCE + 1e-9:
                raise InvalidInputError(
                    f"{label} source farther than {MAX_SOURCE_DISTANCE} m from the array")
        lo, hi = GAIN_RANGE_DB
        if not lo <= self.interf_gain_db <= hi:
            raise InvalidInputError(
                f"interference gain must be in [{lo}, {hi}] dB, got {self.interf_gain_db}")
        object.__setattr__(self, "array_center", center)
        object.__setattr__(self, "target_pos", target)
        object.__setattr__(self, "interf_pos", interf)

    def mic_positions(self) -> np.ndarray:
        """Absolute microphone positions, (D, 3) meters."""
        rot = _yaw_matrix(self.array_yaw)
        return self.array_center + self.array.positions @ rot.T


@dataclass
class SceneRender:
    """Reverberant images of both sources and their sample-exact sum."""

    mixture: MultichannelAudio
    target_image: MultichannelAudio
    interf_image: MultichannelAudio


def _enumerate_images(room: RoomSpec, src: np.ndarray):
    """All image sources up to the room's reflection order.

    Returns (positions (n, 3), amplitudes (n,)): mirrored positions and the
    accumulated wall reflection coefficients (distance law applied later).
    """
    order = room.max_reflection_order
    beta = np.sqrt(1.0 - room.absorption)
    half = order // 2 + 1
    axis_combos = list(itertools.product(range(-half, half + 1), (0, 1)))
    rows = np.array(list(itertools.product(axis_combos, repeat=3)), dtype=float)
    n = rows[:, :, 0]
    q = rows[:, :, 1]
    reflections = np.sum(np.abs(n - q) + np.abs(n), axis=1)
    keep = reflections <= order
    n, q, reflections = n[keep], q[keep], reflections[keep]
    positions = 2.0 * n * room.dimensions + (1.0 - 2.0 * q) * src
    amplitudes = beta ** reflections
    return positions, amplitudes


def compute_rir(room: RoomSpec, src, mic, sample_rate: int,
                rir_length: int | None = None) -> AudioBuffer:
    """Image-source room impulse response from src to mic.

    Each arrival contributes an 81-tap Hann-windowed sinc centered at its
    fractional delay d*fs/c, scaled by beta^reflections / (4*pi*d).
    """
    src = np.asarray(src, dtype=float)
    mic = np.asarray(mic, dtype=float)
    if not room.contains(src):
        raise InvalidInputError(f"source {src} is outside the room")
    if not room.contains(mic):
        raise InvalidInputError(f"microphone {mic} is outside the room")
    if np.linalg.norm(src - mic) < 1e-6:
        raise InvalidInputError("source and microphone coincide")

    positions, wall_amps = _enumerate_images(room, src)
    dists = np.linalg.norm(positions - mic, axis=1)
    delays = dists * sample_rate / room.speed_of_sound
    amps = wall_amps / (4.0 * np.pi * dists)

    if rir_length is None:
        rir_length = int(np.ceil(np.max(delays) + SINC_HALF_WIDTH)) + 1
    h = np.zeros(rir_length)
    offsets = np.arange(SINC_TAPS + 1)
    starts = np.ceil(delays - SINC_HALF_WIDTH).astype(int)
    taps = starts[:, None] + offsets
    u = taps - delays[:, None]
    window = 0.5 * (1.0 + np.cos(2.0 * np.pi * u / SINC_TAPS))
    vals = amps[:, None] * window * np.sinc(u)
    valid = (np.abs(u) <= SINC_HALF_WIDTH) & (taps >= 0) & (taps < rir_length)
    np.add.at(h, taps[valid], vals[valid])
    return AudioBuffer(h, sample_rate)


def render_scene(scene: Scene, target_speech: AudioBuffer,
                 interf_speech: AudioBuffer) -> SceneRender:
    """Convolve both dry sources with their RIRs at every microphone.

    Output length is num_samples + rir_length - 1, identical across channels.
    The interference image carries the scene gain; the mixture is the exact
    sum of the two images.
    """
    if target_speech.sample_rate != interf_speech.sample_rate:
        raise InvalidInputError("target and interference sample rates differ")
    fs = target_speech.sample_rate
    mics = scene.mic_positions()
    rirs_t = [compute_rir(scene.room, scene.target_pos, m, fs) for m in mics]
    rirs_i = [compute_rir(scene.room, scene.interf_pos, m, fs) for m in mics]
    rir_len = max(r.num_samples for r in rirs_t + rirs_i)
    out_len = max(target_speech.num_samples, interf_speech.num_samples) + rir_len - 1
    gain = 10.0 ** (scene.interf_gain_db / 20.0)

    def image(speech, rirs, scale):
        rows = []
        for r in rirs:
            y = signal.fftconvolve(speech.samples, r.samples)
            rows.append(scale * np.concatenate([y, np.zeros(out_len - y.shape[0])]))
        return np.stack(rows)

    target = image(target_speech, rirs_t, 1.0)
    interf = image(interf_speech, rirs_i, gain)
    return SceneRender(
        mixture=MultichannelAudio(target + interf, fs),
        target_image=MultichannelAudio(target, fs),
        interf_image=MultichannelAudio(interf, fs),
    )


@dataclass(frozen=True)
class SceneConstraints:
    """Sampling ranges for random scenes."""

    room_min: tuple = (4.0, 4.0, 2.5)
    room_max: tuple = (10.0, 10.0, 4.0)
    absorption: float = 0.7
    max_reflection_order: int = 6
    wall_margin: float = 0.3
    min_source_distance: float = 0.5
    max_source_distance: float = MAX_SOURCE_DISTANCE
    gain_range_db: tuple = GAIN_RANGE_DB
    max_retries: int = 1000

    def __post_init__(self):
        if self.max_source_distance > MAX_SOURCE_DISTANCE:
            raise ConfigError(
                f"max_source_distance cannot exceed {MAX_SOURCE_DISTANCE} m")
        if self.min_source_distance >= self.max_source_distance:
            raise ConfigError("min_source_distance must be below max_source_distance")
        lo, hi = self.gain_range_db
        if lo < GAIN_RANGE_DB[0] or hi > GAIN_RANGE_DB[1] or lo > hi:
            raise ConfigError(f"gain_range_db must lie within {GAIN_RANGE_DB}")


def sample_scene(seed: int, catalog=ARRAY_CATALOG,
                 constraints: SceneConstraints = SceneConstraints()) -> Scene:
    """Draw a random scene, fully determined by the integer seed.

    Room dimensions are uniform within the constraint box; the array center
    keeps wall_margin + array radius clearance; sources are rejection-sampled
    uniformly in the room until within [min, max] distance of the array.
    """
    if len(catalog) == 0:
        raise ConfigError("array catalog is empty")
    rng = np.random.default_rng(seed)
    c = constraints
    dims = rng.uniform(np.asarray(c.room_min), np.asarray(c.room_max))
    room = RoomSpec(dims, absorption=c.absorption,
                    max_reflection_order=c.max_reflection_order)

    geometry = resolve_array(catalog[int(rng.integers(len(catalog)))])
    yaw = float(rng.uniform(0.0, 2.0 * np.pi))
    clearance = c.wall_margin + geometry.radius
    if np.any(dims <= 2.0 * clearance):
        raise ConfigError("room too small for the array and wall margin")
    center = rng.uniform(clearance, dims - clearance)

    def draw_source():
        for _ in range(c.max_retries):
            p = rng.uniform(c.wall_margin, dims - c.wall_margin)
            d = np.linalg.norm(p - center)
            if c.min_source_distance <= d <= c.max_source_distance:
                return p
        raise ConfigError(
            f"could not place a source within {c.max_retries} attempts")

    target = draw_source()
    interf = draw_source()
    gain = float(rng.uniform(*c.gain_range_db))
    return Scene(room=room, array=geometry, array_center=center, array_yaw=yaw,
                 target_pos=target, interf_pos=interf, interf_gain_db=gain,
                 rng_seed=int(seed))


def _syllable(rng, length: int, sample_rate: int, f0_lo: float,
              f0_hi: float) -> np.ndarray:
    """One syllable: voiced (glottal pulse train with pitch drift) or
    unvoiced (noise) excitation through three random formant resonators,
    under a raised-cosine attack/decay envelope. (length,) float."""
    nyq = sample_rate / 2.0
    if rng.uniform() < 0.85:
        # voiced: band-limited pulse train via phase accumulation
        f0 = rng.uniform(f0_lo, f0_hi)
        drift = rng.uniform(-0.08, 0.08)
        inst = f0 * (1.0 + drift * np.linspace(0.0, 1.0, length))
        phase = np.cumsum(inst / sample_rate)
        excitation = np.zeros(length)
        excitation[np.flatnonzero(np.diff(np.floor(phase))) + 1] = 1.0
        excitation += 0.03 * rng.standard_normal(length)
    else:
        excitation = rng.standard_normal(length)
    shaped = np.zeros(length)
    bands = [(300.0, 900.0), (900.0, 2200.0), (2200.0, 4000.0)]
    for weight, (lo, hi) in zip((1.0, 0.6, 0.3), bands):
        center = rng.uniform(lo, hi)
        b, a = signal.iirpeak(center / nyq, rng.uniform(8.0, 16.0))
        shaped += weight * signal.lfilter(b, a, excitation)
    attack = min(length // 2, int(0.03 * sample_rate))
    env = np.ones(length)
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(attack) / max(attack, 1))
    env[:attack] = ramp
    env[length - attack:] = ramp[::-1]
    shaped *= env
    rms = np.sqrt(np.mean(shaped ** 2))
    return shaped * (rng.uniform(0.5, 1.0) / max(rms, 1e-12))


# fraction of syllable slots replaced by a word-length pause
PAUSE_PROBABILITY = 0.20


def synthetic_speech(seed: int, duration: float = 5.0,
                     sample_rate: int = 16000) -> AudioBuffer:
    """Deterministic speech-like test signal: a sequence of voiced and
    unvoiced syllables with random formants, separated by short gaps and
    occasional word-length pauses. Each utterance keeps a talker-like pitch
    identity: syllable f0 varies around a per-utterance center."""
    rng = np.random.default_rng([int(seed), 0x5eec])
    n = int(round(duration * sample_rate))
    out = np.zeros(n)
    center = rng.uniform(110.0, 280.0)
    t = 0
    first = True
    while t < n:
        if not first and rng.uniform() < PAUSE_PROBABILITY:
            t += int(rng.uniform(0.08, 0.30) * sample_rate)  # pause
            continue
        first = False
        length = int(rng.uniform(0.12, 0.35) * sample_rate)
        seg = _syllable(rng, length, sample_rate, 0.88 * center, 1.12 * center)
        stop = min(t + length, n)
        out[t:stop] += seg[:stop - t]
        t = stop + int(rng.uniform(0.01, 0.04) * sample_rate)
    out = 0.5 * out / max(np.max(np.abs(out)), 1e-12)
    return AudioBuffer(out, sample_rate)
