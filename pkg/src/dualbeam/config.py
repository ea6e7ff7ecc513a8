"""Whole-experiment configuration: one JSON document, strictly validated.

Every section is checked against the owning module's own validators at load
time, and unknown keys anywhere are rejected, so a typo fails fast instead
of silently running defaults. Serialization always emits the complete
document; parse -> serialize -> parse is the identity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .rnn import LossConfig, PostfilterConfig
from .scene import (ARRAY_CATALOG, ArrayGeometry, SceneConstraints,
                    resolve_array)
from .stft import StftConfig
from .training import METRIC_FUNCS, TrainConfig

DEFAULT_PATHS = {"scenes": "scenes", "records": "records",
                 "models": "models", "reports": "reports"}


def _merge_section(name: str, section: dict, defaults: dict) -> dict:
    if not isinstance(section, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    unknown = sorted(set(section) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown key(s) in config section {name!r}: "
                          f"{', '.join(unknown)}")
    return {**defaults, **section}


def _array_from_entry(entry):
    """Config arrays accept builtin names or {name, positions} objects."""
    if isinstance(entry, str):
        return entry
    if isinstance(entry, dict):
        unknown = sorted(set(entry) - {"name", "positions"})
        if unknown:
            raise ConfigError(f"unknown key(s) in custom array entry: "
                              f"{', '.join(unknown)}")
        if "name" not in entry or "positions" not in entry:
            raise ConfigError("custom array entry needs 'name' and 'positions'")
        return ArrayGeometry(entry["name"], np.asarray(entry["positions"],
                                                       dtype=float))
    raise ConfigError(f"array entry must be a name or an object, "
                      f"got {type(entry).__name__}")


def _array_to_entry(entry):
    if isinstance(entry, str):
        return entry
    return {"name": entry.name, "positions": entry.positions.tolist()}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    ref_mic: int = 0
    stft: StftConfig = StftConfig()
    scene: SceneConstraints = SceneConstraints()
    utterance_seconds: float = 5.0
    sample_rate: int = 16000
    arrays: tuple = ARRAY_CATALOG
    cell: str = "gru"
    layers: int = 1
    hidden: int = 128
    dropout_p: float = 0.2
    train: TrainConfig = TrainConfig()
    loss: LossConfig = LossConfig()
    metrics: tuple = ("sdr", "stoi")
    paths: dict = None

    def __post_init__(self):
        if self.paths is None:
            object.__setattr__(self, "paths", dict(DEFAULT_PATHS))
        if self.utterance_seconds <= 0:
            raise ConfigError("utterance_seconds must be positive")
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        if self.ref_mic < 0:
            raise ConfigError("ref_mic must be non-negative")
        if not self.arrays:
            raise ConfigError("arrays must name at least one geometry")
        for entry in self.arrays:
            resolve_array(entry)
        for name in self.metrics:
            if name not in METRIC_FUNCS:
                raise ConfigError(f"unknown metric {name!r}, expected one of "
                                  f"{sorted(METRIC_FUNCS)}")
        # both postfilter variants must be constructible
        for mode in ("target_only", "target_plus_interference"):
            self.postfilter_config(mode)

    def postfilter_config(self, input_mode: str) -> PostfilterConfig:
        return PostfilterConfig(cell=self.cell, layers=self.layers,
                                hidden=self.hidden, input_mode=input_mode,
                                dropout_p=self.dropout_p,
                                feature_bins=self.stft.num_bins)

    def train_config(self) -> TrainConfig:
        # the experiment seed is the single source of truth
        return replace(self.train, seed=self.seed)


def config_from_dict(doc: dict) -> ExperimentConfig:
    top_defaults = {"seed": 0, "ref_mic": 0, "stft": {}, "scene": {},
                    "model": {}, "train": {}, "loss": {}, "metrics": ["sdr", "stoi"],
                    "paths": {}}
    doc = _merge_section("top level", doc, top_defaults)

    stft_kw = _merge_section("stft", doc["stft"],
                             {"frame_size": 512, "hop": 128, "window": "sqrt_hann"})
    scene_kw = _merge_section("scene", doc["scene"], {
        "room_min": list(SceneConstraints().room_min),
        "room_max": list(SceneConstraints().room_max),
        "absorption": 0.7, "max_reflection_order": 6, "wall_margin": 0.3,
        "min_source_distance": 0.5, "max_source_distance": 3.0,
        "gain_range_db": [-20.0, 0.0], "max_retries": 1000,
        "utterance_seconds": 5.0, "sample_rate": 16000,
        "arrays": list(ARRAY_CATALOG)})
    model_kw = _merge_section("model", doc["model"],
                              {"cell": "gru", "layers": 1, "hidden": 128,
                               "dropout_p": 0.2})
    train_kw = _merge_section("train", doc["train"], {
        "epochs": 50, "learning_rate": 1e-3, "beta1": 0.9, "beta2": 0.999,
        "adam_eps": 1e-8, "batch_size": 8, "train_count": 200,
        "val_count": 50, "test_count": 50})
    loss_kw = _merge_section("loss", doc["loss"], {"beta": 0.25})
    paths = _merge_section("paths", doc["paths"], DEFAULT_PATHS)

    constraints = SceneConstraints(
        room_min=tuple(scene_kw["room_min"]),
        room_max=tuple(scene_kw["room_max"]),
        absorption=scene_kw["absorption"],
        max_reflection_order=scene_kw["max_reflection_order"],
        wall_margin=scene_kw["wall_margin"],
        min_source_distance=scene_kw["min_source_distance"],
        max_source_distance=scene_kw["max_source_distance"],
        gain_range_db=tuple(scene_kw["gain_range_db"]),
        max_retries=scene_kw["max_retries"])
    return ExperimentConfig(
        seed=int(doc["seed"]), ref_mic=int(doc["ref_mic"]),
        stft=StftConfig(**stft_kw), scene=constraints,
        utterance_seconds=scene_kw["utterance_seconds"],
        sample_rate=scene_kw["sample_rate"],
        arrays=tuple(_array_from_entry(e) for e in scene_kw["arrays"]),
        cell=model_kw["cell"], layers=model_kw["layers"],
        hidden=model_kw["hidden"], dropout_p=model_kw["dropout_p"],
        train=TrainConfig(seed=int(doc["seed"]), **train_kw),
        loss=LossConfig(**loss_kw),
        metrics=tuple(doc["metrics"]), paths=dict(paths))


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return {
        "seed": cfg.seed,
        "ref_mic": cfg.ref_mic,
        "stft": {"frame_size": cfg.stft.frame_size, "hop": cfg.stft.hop,
                 "window": cfg.stft.window},
        "scene": {"room_min": list(cfg.scene.room_min),
                  "room_max": list(cfg.scene.room_max),
                  "absorption": cfg.scene.absorption,
                  "max_reflection_order": cfg.scene.max_reflection_order,
                  "wall_margin": cfg.scene.wall_margin,
                  "min_source_distance": cfg.scene.min_source_distance,
                  "max_source_distance": cfg.scene.max_source_distance,
                  "gain_range_db": list(cfg.scene.gain_range_db),
                  "max_retries": cfg.scene.max_retries,
                  "utterance_seconds": cfg.utterance_seconds,
                  "sample_rate": cfg.sample_rate,
                  "arrays": [_array_to_entry(e) for e in cfg.arrays]},
        "model": {"cell": cfg.cell, "layers": cfg.layers, "hidden": cfg.hidden,
                  "dropout_p": cfg.dropout_p},
        "train": {"epochs": cfg.train.epochs,
                  "learning_rate": cfg.train.learning_rate,
                  "beta1": cfg.train.beta1, "beta2": cfg.train.beta2,
                  "adam_eps": cfg.train.adam_eps,
                  "batch_size": cfg.train.batch_size,
                  "train_count": cfg.train.train_count,
                  "val_count": cfg.train.val_count,
                  "test_count": cfg.train.test_count},
        "loss": {"beta": cfg.loss.beta},
        "metrics": list(cfg.metrics),
        "paths": dict(cfg.paths),
    }


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return config_from_dict(doc)


def save_config(path, cfg: ExperimentConfig) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2,
                                     sort_keys=True) + "\n")
