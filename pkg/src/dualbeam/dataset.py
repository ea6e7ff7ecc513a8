"""Datasets on disk: simulated scene directories and beamformed records.

A scene directory holds the rendered WAVs (mixture plus both source images)
and a scene.json with the full geometry, so every downstream stage can be
re-run from disk. A record is one training example: both beamformer output
spectrograms, the oracle postfilter mask, and the reference-channel target
image, stored as a compressed npz.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, MultichannelAudio, read_wav, read_wav_mono, write_wav
from .beamform import (ROLE_INTERFERENCE, ROLE_TARGET, Mask, apply_weights,
                       mvdr_weights, oracle_mask_from_premix,
                       oracle_postfilter_mask, scm_from_mask)
from .errors import ConfigError, DataError, InvalidInputError
from .rnn import MODE_TARGET_ONLY, build_features
from .scene import (ARRAY_CATALOG, ArrayGeometry, RoomSpec, Scene,
                    SceneConstraints, SceneRender, render_scene, sample_scene,
                    synthetic_speech)
from .stft import Spectrogram, StftConfig, stft_multichannel

SCENE_PREFIX = "scene_"
RECORD_PREFIX = "record_"
RECORD_VERSION = 1
SPLIT_NAMES = ("train", "val", "test")

# spreads per-run base seeds so different dataset seeds cannot share scenes
SEED_STRIDE = 1_000_003


@dataclass
class ExampleRecord:
    """One training example: dual beamformer outputs plus oracle targets.

    y_target / y_interf: the two MVDR output spectrograms (frames, bins).
    mask: oracle postfilter mask in [0, 1].
    reference: reference-channel target image for metric scoring.
    """

    y_target: Spectrogram
    y_interf: Spectrogram
    mask: Mask
    reference: AudioBuffer
    meta: dict

    @property
    def weight(self) -> np.ndarray:
        """Loss weighting magnitudes |Y_target|, (frames, bins)."""
        return np.abs(self.y_target.bins)


def scene_seed_for(base_seed: int, index: int) -> int:
    return int(base_seed) * SEED_STRIDE + int(index)


def scene_to_dict(scene: Scene) -> dict:
    return {
        "room": {
            "dimensions": scene.room.dimensions.tolist(),
            "absorption": scene.room.absorption,
            "max_reflection_order": scene.room.max_reflection_order,
            "speed_of_sound": scene.room.speed_of_sound,
        },
        "array": {
            "name": scene.array.name,
            "positions": scene.array.positions.tolist(),
        },
        "array_center": scene.array_center.tolist(),
        "array_yaw": scene.array_yaw,
        "target_pos": scene.target_pos.tolist(),
        "interf_pos": scene.interf_pos.tolist(),
        "interf_gain_db": scene.interf_gain_db,
        "rng_seed": scene.rng_seed,
    }


def scene_from_dict(meta: dict) -> Scene:
    try:
        room = RoomSpec(np.asarray(meta["room"]["dimensions"]),
                        absorption=meta["room"]["absorption"],
                        max_reflection_order=meta["room"]["max_reflection_order"],
                        speed_of_sound=meta["room"]["speed_of_sound"])
        array = ArrayGeometry(meta["array"]["name"],
                              np.asarray(meta["array"]["positions"]))
        return Scene(room=room, array=array,
                     array_center=np.asarray(meta["array_center"]),
                     array_yaw=meta["array_yaw"],
                     target_pos=np.asarray(meta["target_pos"]),
                     interf_pos=np.asarray(meta["interf_pos"]),
                     interf_gain_db=meta["interf_gain_db"],
                     rng_seed=meta["rng_seed"])
    except KeyError as exc:
        raise DataError(f"scene metadata is missing field {exc}") from exc


def write_scene_dir(path, scene: Scene, render: SceneRender,
                    extra_meta: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    write_wav(path / "mixture.wav", render.mixture)
    write_wav(path / "target_image.wav", render.target_image)
    write_wav(path / "interf_image.wav", render.interf_image)
    meta = scene_to_dict(scene)
    meta["sample_rate"] = render.mixture.sample_rate
    if extra_meta:
        meta.update(extra_meta)
    (path / "scene.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path


def read_scene_dir(path):
    """Load a scene directory back as (meta dict, SceneRender)."""
    path = Path(path)
    meta_path = path / "scene.json"
    if not meta_path.is_file():
        raise DataError(f"{path} is not a scene directory (no scene.json)")
    meta = json.loads(meta_path.read_text())
    rate = meta.get("sample_rate")
    render = SceneRender(
        mixture=read_wav(path / "mixture.wav", expected_rate=rate),
        target_image=read_wav(path / "target_image.wav", expected_rate=rate),
        interf_image=read_wav(path / "interf_image.wav", expected_rate=rate),
    )
    return meta, render


def list_scene_dirs(root) -> list:
    root = Path(root)
    dirs = sorted(p for p in root.iterdir()
                  if p.is_dir() and p.name.startswith(SCENE_PREFIX))
    if not dirs:
        raise DataError(f"no {SCENE_PREFIX}* directories under {root}")
    return dirs


def _corpus_files(corpus_dir) -> list:
    corpus_dir = Path(corpus_dir)
    if not corpus_dir.is_dir():
        raise DataError(f"corpus directory not found: {corpus_dir}")
    files = sorted(corpus_dir.glob("*.wav"))
    if not files:
        raise DataError(f"no WAV files in corpus directory {corpus_dir}")
    return files


def _corpus_utterance(files, rng, duration: float, sample_rate: int) -> AudioBuffer:
    """Random corpus clip, cropped or zero-padded to the requested length."""
    path = files[int(rng.integers(len(files)))]
    audio = read_wav_mono(path, expected_rate=sample_rate)
    n = int(round(duration * sample_rate))
    x = audio.samples
    if x.shape[0] > n:
        start = int(rng.integers(x.shape[0] - n + 1))
        x = x[start:start + n]
    elif x.shape[0] < n:
        x = np.concatenate([x, np.zeros(n - x.shape[0])])
    return AudioBuffer(x, sample_rate)


def build_scene_example(scene_seed: int, duration: float, sample_rate: int,
                        constraints: SceneConstraints = SceneConstraints(),
                        catalog=ARRAY_CATALOG, corpus_files=None):
    """Sample and render one scene, returning (scene, render).

    Speech comes from the synthetic generator unless corpus_files is given;
    either way both utterances are functions of scene_seed alone.
    """
    scene = sample_scene(scene_seed, catalog=catalog, constraints=constraints)
    if corpus_files is None:
        target = synthetic_speech(2 * scene_seed, duration, sample_rate)
        interf = synthetic_speech(2 * scene_seed + 1, duration, sample_rate)
    else:
        rng = np.random.default_rng([int(scene_seed), 0xC0])
        target = _corpus_utterance(corpus_files, rng, duration, sample_rate)
        interf = _corpus_utterance(corpus_files, rng, duration, sample_rate)
    return scene, render_scene(scene, target, interf)


def simulate_scenes(out_dir, count: int, seed: int, duration: float = 5.0,
                    sample_rate: int = 16000,
                    constraints: SceneConstraints = SceneConstraints(),
                    catalog=ARRAY_CATALOG, corpus_dir=None) -> list:
    """Write count scene directories under out_dir, fully seed-determined."""
    if count < 1:
        raise ConfigError(f"scene count must be positive, got {count}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus_files = _corpus_files(corpus_dir) if corpus_dir is not None else None
    paths = []
    for index in range(count):
        scene_seed = scene_seed_for(seed, index)
        scene, render = build_scene_example(
            scene_seed, duration, sample_rate, constraints, catalog, corpus_files)
        path = out_dir / f"{SCENE_PREFIX}{index:05d}"
        write_scene_dir(path, scene, render, {"index": index, "base_seed": int(seed)})
        paths.append(path)
    manifest = {"count": count, "seed": int(seed), "duration": duration,
                "sample_rate": sample_rate,
                "corpus": str(corpus_dir) if corpus_dir else None}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2,
                                                      sort_keys=True))
    return paths


def oracle_chain(render: SceneRender, stft_cfg: StftConfig,
                 ref_index: int = 0) -> dict:
    """Run the oracle beamforming chain and return every intermediate.

    The coarse mask comes from the pre-mixed images; both MVDR filters are
    estimated from the mixture; the reference path reuses the target weights
    on the interference-free image. Keys: coarse, w_target, w_interf,
    y_target, y_interf, y_ref, mask.
    """
    x = stft_multichannel(render.mixture, stft_cfg)
    s = stft_multichannel(render.target_image, stft_cfg)
    b = stft_multichannel(render.interf_image, stft_cfg)
    coarse = oracle_mask_from_premix(s, b, ref_index=ref_index)
    scms = scm_from_mask(x, coarse)
    w_target = mvdr_weights(scms, ref_index=ref_index, role=ROLE_TARGET)
    w_interf = mvdr_weights(scms, ref_index=ref_index, role=ROLE_INTERFERENCE)
    y_target = apply_weights(w_target, x)
    y_interf = apply_weights(w_interf, x)
    y_ref = apply_weights(w_target, s)
    mask = oracle_postfilter_mask(y_target, y_ref)
    return {"coarse": coarse, "w_target": w_target, "w_interf": w_interf,
            "y_target": y_target, "y_interf": y_interf, "y_ref": y_ref,
            "mask": mask}


def prepare_record(render: SceneRender, stft_cfg: StftConfig,
                   ref_index: int = 0, meta: dict | None = None) -> ExampleRecord:
    """Package the oracle chain outputs for one scene as a training record."""
    chain = oracle_chain(render, stft_cfg, ref_index=ref_index)
    record_meta = dict(meta or {})
    record_meta["ref_index"] = ref_index
    record_meta["fallback_bins"] = {
        "target": chain["w_target"].diagnostics.get("fallback_bins", 0),
        "interference": chain["w_interf"].diagnostics.get("fallback_bins", 0),
    }
    return ExampleRecord(y_target=chain["y_target"], y_interf=chain["y_interf"],
                         mask=chain["mask"],
                         reference=render.target_image.channel(ref_index),
                         meta=record_meta)


def quantize_record(record: ExampleRecord) -> ExampleRecord:
    """Apply the storage precision (complex64 spectra, float32 mask/audio).

    save_record followed by load_record yields exactly this record, so
    in-memory pipelines can reproduce disk-backed results bit for bit.
    """

    def as_stored(spec):
        return Spectrogram(spec.bins.astype(np.complex64), spec.config,
                           spec.sample_rate, spec.num_samples)

    return ExampleRecord(
        y_target=as_stored(record.y_target),
        y_interf=as_stored(record.y_interf),
        mask=Mask(record.mask.values.astype(np.float32).astype(np.float64)),
        reference=AudioBuffer(
            record.reference.samples.astype(np.float32).astype(np.float64),
            record.reference.sample_rate),
        meta=dict(record.meta))


def save_record(path, record: ExampleRecord) -> None:
    spec = record.y_target
    header = {
        "version": RECORD_VERSION,
        "frame_size": spec.config.frame_size,
        "hop": spec.config.hop,
        "window": spec.config.window,
        "sample_rate": spec.sample_rate,
        "num_samples": spec.num_samples,
        "meta": record.meta,
    }
    np.savez_compressed(
        path,
        header=np.frombuffer(json.dumps(header, sort_keys=True).encode(),
                             dtype=np.uint8),
        y_target=record.y_target.bins.astype(np.complex64),
        y_interf=record.y_interf.bins.astype(np.complex64),
        mask=record.mask.values.astype(np.float32),
        reference=record.reference.samples.astype(np.float32),
    )


def load_record(path) -> ExampleRecord:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"record not found: {path}")
    try:
        handle = np.load(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read record {path}: {exc}") from exc
    with handle as data:
        needed = {"header", "y_target", "y_interf", "mask", "reference"}
        if not needed <= set(data.files):
            raise DataError(f"{path} is not a dataset record")
        header = json.loads(bytes(data["header"]).decode())
        if header.get("version") != RECORD_VERSION:
            raise DataError(f"unsupported record version {header.get('version')}")
        cfg = StftConfig(frame_size=header["frame_size"], hop=header["hop"],
                         window=header["window"])
        rate, num_samples = header["sample_rate"], header["num_samples"]
        y_target = Spectrogram(data["y_target"], cfg, rate, num_samples)
        y_interf = Spectrogram(data["y_interf"], cfg, rate, num_samples)
        mask = Mask(data["mask"].astype(np.float64))
        reference = AudioBuffer(data["reference"].astype(np.float64), rate)
    return ExampleRecord(y_target=y_target, y_interf=y_interf, mask=mask,
                         reference=reference, meta=header["meta"])


def split_counts_ok(num_scenes: int, counts) -> None:
    total = sum(counts)
    if any(c < 1 for c in counts):
        raise ConfigError(f"split counts must be positive, got {tuple(counts)}")
    if num_scenes < total:
        raise DataError(
            f"need {total} scenes for splits {tuple(counts)}, found {num_scenes}")


def prepare_dataset(scenes_root, out_dir, stft_cfg: StftConfig,
                    counts=(200, 50, 50), ref_index: int = 0) -> dict:
    """Beamform every scene into a record, partitioned train/val/test.

    Scenes are consumed in sorted directory order; the first counts[0] become
    the train split, then val, then test. Record indices match scene indices.
    """
    scene_dirs = list_scene_dirs(scenes_root)
    split_counts_ok(len(scene_dirs), counts)
    out_dir = Path(out_dir)
    manifest = {"version": RECORD_VERSION, "ref_index": ref_index,
                "frame_size": stft_cfg.frame_size, "hop": stft_cfg.hop,
                "window": stft_cfg.window, "splits": {}}
    start = 0
    for split, count in zip(SPLIT_NAMES, counts):
        split_dir = out_dir / split
        split_dir.mkdir(parents=True, exist_ok=True)
        names = []
        for scene_dir in scene_dirs[start:start + count]:
            meta, render = read_scene_dir(scene_dir)
            record = prepare_record(render, stft_cfg, ref_index=ref_index,
                                    meta={"scene": scene_dir.name,
                                          "split": split,
                                          "rng_seed": meta.get("rng_seed")})
            name = f"{RECORD_PREFIX}{scene_dir.name[len(SCENE_PREFIX):]}.npz"
            save_record(split_dir / name, record)
            names.append(name)
        manifest["splits"][split] = names
        start += count
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2,
                                                      sort_keys=True))
    return manifest


def load_split(records_root, split: str) -> list:
    """All records of one split, in manifest order."""
    records_root = Path(records_root)
    manifest_path = records_root / "manifest.json"
    if not manifest_path.is_file():
        raise DataError(f"no manifest.json under {records_root}")
    manifest = json.loads(manifest_path.read_text())
    if split not in manifest.get("splits", {}):
        raise DataError(f"split {split!r} not present in {manifest_path}")
    return [load_record(records_root / split / name)
            for name in manifest["splits"][split]]


def training_arrays(record: ExampleRecord, input_mode: str,
                    beta: float = 0.25):
    """Float32 (features, target mask, loss weights |Y|^beta) for training.

    Features are always built in the concatenated layout; target-only models
    receive the first feature_bins columns.
    """
    feats = build_features(record.y_target, record.y_interf).astype(np.float32)
    if input_mode == MODE_TARGET_ONLY:
        feats = np.ascontiguousarray(feats[:, :record.y_target.num_bins])
    target = record.mask.values.astype(np.float32)
    weight_pow = (record.weight ** beta).astype(np.float32)
    return feats, target, weight_pow


def build_training_set(records, input_mode: str, beta: float = 0.25) -> list:
    return [training_arrays(r, input_mode, beta) for r in records]
