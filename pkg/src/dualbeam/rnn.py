"""Recurrent mask estimator: GRU/LSTM core, sigmoid FC head, exact BPTT.

The network maps log-magnitude features to a per-bin mask in (0, 1). All
gradients are hand-derived and validated against finite differences; no
autodiff framework is involved. Heavy matmuls (input projections, weight
gradient reductions) run as single BLAS calls outside the time loop, which
lives in dualbeam.kernels under the selected backend.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .backend import get_kernels
from .beamform import EPS, Mask
from .errors import ConfigError, DataError, InvalidInputError
from .stft import Spectrogram

CELL_GRU = "gru"
CELL_LSTM = "lstm"
MODE_TARGET_ONLY = "target_only"
MODE_TARGET_PLUS_INTERFERENCE = "target_plus_interference"

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PostfilterConfig:
    cell: str = CELL_GRU
    layers: int = 1
    hidden: int = 128
    input_mode: str = MODE_TARGET_PLUS_INTERFERENCE
    dropout_p: float = 0.2
    feature_bins: int = 257

    def __post_init__(self):
        if self.cell not in (CELL_GRU, CELL_LSTM):
            raise ConfigError(f"cell must be gru or lstm, got {self.cell!r}")
        if self.layers not in (1, 2):
            raise ConfigError(f"layers must be 1 or 2, got {self.layers}")
        if self.hidden < 1:
            raise ConfigError(f"hidden must be positive, got {self.hidden}")
        if self.input_mode not in (MODE_TARGET_ONLY, MODE_TARGET_PLUS_INTERFERENCE):
            raise ConfigError(f"unknown input_mode {self.input_mode!r}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.feature_bins < 1:
            raise ConfigError("feature_bins must be positive")

    @property
    def input_width(self) -> int:
        factor = 2 if self.input_mode == MODE_TARGET_PLUS_INTERFERENCE else 1
        return factor * self.feature_bins

    @property
    def gate_count(self) -> int:
        return 3 if self.cell == CELL_GRU else 4


@dataclass(frozen=True)
class LossConfig:
    """Magnitude-weighted mask MSE: mean of [(M - M_hat) * |Y|^beta]^2."""

    beta: float = 0.25

    def __post_init__(self):
        if self.beta <= 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")


def expected_parameter_shapes(cfg: PostfilterConfig) -> dict:
    g, h = cfg.gate_count, cfg.hidden
    shapes = {}
    width = cfg.input_width
    for i in range(cfg.layers):
        shapes[f"layer{i}.w_ih"] = (g * h, width)
        shapes[f"layer{i}.w_hh"] = (g * h, h)
        shapes[f"layer{i}.b_ih"] = (g * h,)
        shapes[f"layer{i}.b_hh"] = (g * h,)
        width = h
    shapes["fc.w"] = (cfg.feature_bins, h)
    shapes["fc.b"] = (cfg.feature_bins,)
    return shapes


def parameter_count_formula(cfg: PostfilterConfig) -> int:
    """Closed-form size: G*(F*H + H*H + 2H) per layer plus H*K + K."""
    g, h, k = cfg.gate_count, cfg.hidden, cfg.feature_bins
    total = 0
    width = cfg.input_width
    for _ in range(cfg.layers):
        total += g * (width * h + h * h + 2 * h)
        width = h
    return total + h * k + k


@dataclass
class PostfilterModel:
    config: PostfilterConfig
    params: dict

    def __post_init__(self):
        shapes = expected_parameter_shapes(self.config)
        if set(self.params) != set(shapes):
            raise InvalidInputError("parameter names do not match config")
        for name, shape in shapes.items():
            if self.params[name].shape != shape:
                raise InvalidInputError(
                    f"{name} has shape {self.params[name].shape}, expected {shape}")
            if not np.all(np.isfinite(self.params[name])):
                raise InvalidInputError(f"{name} contains non-finite values")

    @property
    def dtype(self):
        return self.params["fc.w"].dtype

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "PostfilterModel":
        return PostfilterModel(self.config,
                               {k: v.copy() for k, v in self.params.items()})


def init_model(cfg: PostfilterConfig, seed: int,
               dtype=np.float32) -> PostfilterModel:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) weights, zero biases; the LSTM forget
    gate input bias starts at 1."""
    rng = np.random.default_rng([int(seed), 0x91])
    scale = 1.0 / np.sqrt(cfg.hidden)
    params = {}
    for name, shape in expected_parameter_shapes(cfg).items():
        if name.endswith(".w_ih") or name.endswith(".w_hh") or name == "fc.w":
            params[name] = rng.uniform(-scale, scale, size=shape).astype(dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    if cfg.cell == CELL_LSTM:
        h = cfg.hidden
        for i in range(cfg.layers):
            params[f"layer{i}.b_ih"][h:2 * h] = 1.0
    return PostfilterModel(cfg, params)


def build_features(y_target: Spectrogram, y_interf: Spectrogram | None = None,
                   mode: str = MODE_TARGET_PLUS_INTERFERENCE) -> np.ndarray:
    """Log-magnitude features, (frames, bins) or (frames, 2*bins).

    Concatenation order: target bins first, interference bins second.
    """
    target_feats = np.log(np.abs(y_target.bins) + EPS)
    if mode == MODE_TARGET_ONLY:
        return target_feats
    if mode != MODE_TARGET_PLUS_INTERFERENCE:
        raise InvalidInputError(f"unknown input_mode {mode!r}")
    if y_interf is None:
        raise InvalidInputError("target_plus_interference mode needs both inputs")
    if y_interf.bins.shape != y_target.bins.shape:
        raise InvalidInputError("target and interference shapes differ")
    return np.concatenate([target_feats, np.log(np.abs(y_interf.bins) + EPS)], axis=1)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _dropout_mask(rng, shape, p, dtype):
    # inverted dropout: surviving elements carry 1/(1-p)
    return (rng.random(shape) >= p).astype(dtype) / (1.0 - p)


def _forward_batch(model: PostfilterModel, feats: np.ndarray,
                   training: bool, rng):
    """Run the full network on time-major features (L, B, F).

    Returns (mask values (L, B, K), cache) where cache holds everything the
    backward pass needs.
    """
    cfg = model.config
    kernels = get_kernels()
    steps, batch, width = feats.shape
    if width != cfg.input_width:
        raise InvalidInputError(
            f"feature width {width} does not match config ({cfg.input_width})")
    if training and cfg.dropout_p > 0.0 and rng is None:
        raise InvalidInputError("training forward pass needs an rng for dropout")
    dtype = model.dtype
    x = np.ascontiguousarray(feats, dtype=dtype)
    layer_caches = []
    for i in range(cfg.layers):
        w_ih = model.params[f"layer{i}.w_ih"]
        w_hh = model.params[f"layer{i}.w_hh"]
        b_ih = model.params[f"layer{i}.b_ih"]
        b_hh = model.params[f"layer{i}.b_hh"]
        xproj = np.ascontiguousarray(
            (x.reshape(steps * batch, -1) @ w_ih.T + b_ih)
            .reshape(steps, batch, -1))
        w_hh_t = np.ascontiguousarray(w_hh.T)
        h0 = np.zeros((batch, cfg.hidden), dtype)
        if cfg.cell == CELL_GRU:
            h_all, gate_cache = kernels.gru_forward(xproj, w_hh_t, b_hh, h0)
            c_all = None
        else:
            c0 = np.zeros((batch, cfg.hidden), dtype)
            h_all, c_all, gate_cache = kernels.lstm_forward(xproj, w_hh_t, b_hh, h0, c0)
        out = np.ascontiguousarray(h_all[1:])
        drop = None
        if training and cfg.dropout_p > 0.0:
            drop = _dropout_mask(rng, out.shape, cfg.dropout_p, out.dtype)
            out = out * drop
        layer_caches.append({"input": x, "h_all": h_all, "c_all": c_all,
                             "gates": gate_cache, "dropout": drop, "output": out})
        x = out
    logits = (x.reshape(steps * batch, -1) @ model.params["fc.w"].T
              + model.params["fc.b"]).reshape(steps, batch, -1)
    mask_hat = _sigmoid(logits)
    cache = {"layers": layer_caches, "fc_input": x, "mask_hat": mask_hat}
    return mask_hat, cache


def forward(model: PostfilterModel, feats: np.ndarray, training: bool = False,
            rng=None) -> Mask:
    """Single-utterance mask estimate from (frames, width) features."""
    feats = np.asarray(feats)
    if feats.ndim != 2:
        raise InvalidInputError(f"features must be 2-D, got {feats.shape}")
    mask_hat, _ = _forward_batch(model, feats[:, None, :], training, rng)
    return Mask(mask_hat[:, 0, :].astype(float))


def loss(mask_target: np.ndarray, mask_hat: np.ndarray,
         target_magnitude: np.ndarray, cfg: LossConfig = LossConfig()) -> float:
    """Mean over (frame, bin) of the magnitude-weighted squared residual."""
    if mask_target.shape != mask_hat.shape or mask_target.shape != target_magnitude.shape:
        raise InvalidInputError("loss inputs must share a shape")
    w = target_magnitude ** cfg.beta
    residual = (mask_target - mask_hat) * w
    return float(np.mean(residual * residual))


def _loss_grad(mask_target, mask_hat, weight_pow):
    """d(mean weighted squared residual)/d(mask_hat) for one utterance."""
    count = mask_target.size
    return (-2.0 / count) * (mask_target - mask_hat) * weight_pow * weight_pow


def _backward_batch(model: PostfilterModel, cache: dict, dmask: np.ndarray):
    """BPTT through the cached forward pass; dmask is dLoss/dmask_hat."""
    cfg = model.config
    kernels = get_kernels()
    mask_hat = cache["mask_hat"]
    steps, batch, _ = mask_hat.shape
    grads = {}
    dlogits = (dmask * mask_hat * (1.0 - mask_hat)).astype(model.dtype)
    fc_input = cache["fc_input"]
    grads["fc.w"] = (dlogits.reshape(steps * batch, -1).T
                     @ fc_input.reshape(steps * batch, -1))
    grads["fc.b"] = dlogits.sum(axis=(0, 1))
    dx = (dlogits.reshape(steps * batch, -1)
          @ model.params["fc.w"]).reshape(steps, batch, -1)
    for i in range(cfg.layers - 1, -1, -1):
        layer = cache["layers"][i]
        if layer["dropout"] is not None:
            dx = dx * layer["dropout"]
        dx = np.ascontiguousarray(dx)
        w_hh = model.params[f"layer{i}.w_hh"]
        if cfg.cell == CELL_GRU:
            dxproj, dhproj, _ = kernels.gru_backward(
                dx, layer["h_all"], layer["gates"], w_hh)
        else:
            dproj, _, _ = kernels.lstm_backward(
                dx, layer["c_all"], layer["gates"], w_hh)
            dxproj = dhproj = dproj
        flat_x = layer["input"].reshape(steps * batch, -1)
        flat_dx = dxproj.reshape(steps * batch, -1)
        flat_dh = dhproj.reshape(steps * batch, -1)
        flat_h = layer["h_all"][:-1].reshape(steps * batch, -1)
        grads[f"layer{i}.w_ih"] = flat_dx.T @ flat_x
        grads[f"layer{i}.b_ih"] = dxproj.sum(axis=(0, 1))
        grads[f"layer{i}.w_hh"] = flat_dh.T @ flat_h
        grads[f"layer{i}.b_hh"] = dhproj.sum(axis=(0, 1))
        dx = (flat_dx @ model.params[f"layer{i}.w_ih"]).reshape(steps, batch, -1)
    return grads


def gradients_batch_pow(model: PostfilterModel, feats_list, targets_list,
                        weight_pow_list, rng=None, training: bool = True):
    """Mean loss and summed-gradient set over a batch of utterances.

    Takes precomputed loss weights |Y|^beta. Utterances of different lengths
    are grouped by length and averaged with per-utterance normalization, so
    the result matches looping one by one.
    """
    count = len(feats_list)
    if count == 0:
        raise InvalidInputError("empty batch")
    if not (len(targets_list) == len(weight_pow_list) == count):
        raise InvalidInputError("batch lists must have equal length")
    total_loss = 0.0
    total_grads = None
    by_length = {}
    for idx, feats in enumerate(feats_list):
        by_length.setdefault(feats.shape[0], []).append(idx)
    for length in sorted(by_length):
        idxs = by_length[length]
        feats = np.stack([feats_list[i] for i in idxs], axis=1)
        targets = np.stack([targets_list[i] for i in idxs], axis=1)
        weight_pow = np.stack([weight_pow_list[i] for i in idxs], axis=1)
        mask_hat, cache = _forward_batch(model, feats, training, rng)
        residual = (targets - mask_hat) * weight_pow
        per_utt = residual.reshape(residual.shape[0], len(idxs), -1)
        total_loss += float(np.sum(np.mean(per_utt ** 2, axis=(0, 2))))
        dmask = (-2.0 / (targets.shape[0] * targets.shape[2])) \
            * (targets - mask_hat) * weight_pow * weight_pow
        grads = _backward_batch(model, cache, dmask)
        if total_grads is None:
            total_grads = grads
        else:
            for name in total_grads:
                total_grads[name] += grads[name]
    for name in total_grads:
        total_grads[name] = total_grads[name] / count
    if not np.isfinite(total_loss):
        raise DataError("non-finite training loss")
    return total_loss / count, total_grads


def gradients_batch(model: PostfilterModel, feats_list, targets_list,
                    magnitudes_list, cfg: LossConfig = LossConfig(),
                    rng=None, training: bool = True):
    """gradients_batch_pow with the |Y|^beta weighting applied here."""
    if len(magnitudes_list) != len(feats_list):
        raise InvalidInputError("batch lists must have equal length")
    weight_pow = [np.asarray(m) ** cfg.beta for m in magnitudes_list]
    return gradients_batch_pow(model, feats_list, targets_list, weight_pow,
                               rng, training)


def backward(model: PostfilterModel, feats: np.ndarray, mask_target: np.ndarray,
             target_magnitude: np.ndarray, cfg: LossConfig = LossConfig(),
             rng=None, training: bool = False):
    """Loss and exact parameter gradients for a single utterance."""
    return gradients_batch(model, [np.asarray(feats)], [np.asarray(mask_target)],
                           [np.asarray(target_magnitude)], cfg, rng, training)


def save_model(path, model: PostfilterModel) -> None:
    """Checkpoint: config as JSON plus named parameter arrays."""
    cfg = model.config
    meta = {"version": CHECKPOINT_VERSION, "cell": cfg.cell,
            "layers": cfg.layers, "hidden": cfg.hidden,
            "input_mode": cfg.input_mode, "dropout_p": cfg.dropout_p,
            "feature_bins": cfg.feature_bins}
    arrays = {f"param:{k}": v for k, v in model.params.items()}
    np.savez(path, config=np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)


def load_model(path) -> PostfilterModel:
    try:
        handle = np.load(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read model checkpoint {path}: {exc}") from exc
    with handle as data:
        if "config" not in data:
            raise DataError(f"{path} is not a model checkpoint")
        meta = json.loads(bytes(data["config"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {meta.get('version')}")
        cfg = PostfilterConfig(cell=meta["cell"], layers=meta["layers"],
                               hidden=meta["hidden"], input_mode=meta["input_mode"],
                               dropout_p=meta["dropout_p"],
                               feature_bins=meta["feature_bins"])
        params = {k[len("param:"):]: data[k] for k in data.files
                  if k.startswith("param:")}
    return PostfilterModel(cfg, params)
