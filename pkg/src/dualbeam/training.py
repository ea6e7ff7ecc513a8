"""Adam training loop and test-set evaluation for the mask postfilter.

Training consumes (features, target mask, loss weights) float32 tuples, one
per utterance. Batches are shuffled per epoch from a seeded stream, cropped
to the shortest utterance in the batch, and pushed through the exact BPTT
gradients; validation runs full-length after every epoch. Evaluation scores
the no-postfilter, baseline and proposed conditions with SDR/STOI against
the reference-channel target image.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .beamform import apply_mask
from .dataset import training_arrays
from .errors import ConfigError, DataError, InvalidInputError, NumericError
from .metrics import sdr, stoi
from .rnn import (MODE_TARGET_PLUS_INTERFERENCE, LossConfig, PostfilterConfig,
                  PostfilterModel, _forward_batch, forward,
                  gradients_batch_pow)
from .stft import istft

log = logging.getLogger(__name__)

CONDITION_NO_POSTFILTER = "N"
REPORT_VERSION = 1

METRIC_FUNCS = {"sdr": sdr, "stoi": stoi}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    seed: int = 0
    train_count: int = 200
    val_count: int = 50
    test_count: int = 50

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be positive, got {self.epochs}")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ConfigError("adam_eps must be positive")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if min(self.train_count, self.val_count, self.test_count) < 1:
            raise ConfigError("split counts must be positive")

    @property
    def split_counts(self):
        return (self.train_count, self.val_count, self.test_count)


class Adam:
    """Bias-corrected Adam on a named parameter dict, updating in place."""

    def __init__(self, params: dict, learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    @classmethod
    def from_config(cls, params: dict, cfg: TrainConfig) -> "Adam":
        return cls(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)

    def step(self, params: dict, grads: dict) -> None:
        if set(params) != set(grads):
            raise InvalidInputError("gradient names do not match parameters")
        self.step_count += 1
        t = self.step_count
        for name, p in params.items():
            g = grads[name].astype(p.dtype, copy=False)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            p -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainResult:
    model: PostfilterModel
    best_model: PostfilterModel
    best_epoch: int
    curves: list
    seconds: float


def curves_to_csv(curves) -> str:
    lines = ["epoch,train_loss,val_loss"]
    for epoch, train_loss, val_loss in curves:
        lines.append(f"{epoch},{train_loss:.10g},{val_loss:.10g}")
    return "\n".join(lines) + "\n"


def parse_curves_csv(text: str) -> list:
    lines = [l for l in text.strip().splitlines() if l]
    if not lines or lines[0] != "epoch,train_loss,val_loss":
        raise DataError("not a loss-curve CSV")
    out = []
    for line in lines[1:]:
        epoch, train_loss, val_loss = line.split(",")
        out.append((int(epoch), float(train_loss), float(val_loss)))
    return out


def _utterance_losses(model: PostfilterModel, dataset) -> np.ndarray:
    """Per-utterance full-length losses, inference mode, batched by length."""
    losses = np.zeros(len(dataset))
    by_length = {}
    for idx, (feats, _, _) in enumerate(dataset):
        by_length.setdefault(feats.shape[0], []).append(idx)
    for length in sorted(by_length):
        idxs = by_length[length]
        feats = np.stack([dataset[i][0] for i in idxs], axis=1)
        targets = np.stack([dataset[i][1] for i in idxs], axis=1)
        weight_pow = np.stack([dataset[i][2] for i in idxs], axis=1)
        mask_hat, _ = _forward_batch(model, feats, training=False, rng=None)
        residual = (targets - mask_hat) * weight_pow
        per_utt = np.mean(residual.reshape(length, len(idxs), -1) ** 2,
                          axis=(0, 2))
        losses[idxs] = per_utt
    return losses


def evaluate_loss(model: PostfilterModel, dataset) -> float:
    """Mean per-utterance loss over a (features, target, weights) dataset."""
    if len(dataset) == 0:
        raise InvalidInputError("empty dataset")
    return float(np.mean(_utterance_losses(model, dataset)))


def train(model: PostfilterModel, train_set, val_set,
          cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Optimize the model in place; returns curves plus a best-val snapshot.

    A non-finite train or validation loss aborts with NumericError carrying
    the last fully trained epoch's parameters in exc.last_good.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise InvalidInputError("train and validation sets must be non-empty")
    start = time.monotonic()
    optimizer = Adam.from_config(model.params, cfg)
    n = len(train_set)
    curves = []
    last_good = model.copy()
    best_model = model.copy()
    best_val = np.inf
    best_epoch = 0
    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng([cfg.seed, epoch, 0]).permutation(n)
        dropout_rng = np.random.default_rng([cfg.seed, epoch, 1])
        loss_sum = 0.0
        try:
            for pos in range(0, n, cfg.batch_size):
                chunk = order[pos:pos + cfg.batch_size]
                items = [train_set[int(i)] for i in chunk]
                shortest = min(f.shape[0] for f, _, _ in items)
                batch_loss, grads = gradients_batch_pow(
                    model,
                    [f[:shortest] for f, _, _ in items],
                    [t[:shortest] for _, t, _ in items],
                    [w[:shortest] for _, _, w in items],
                    rng=dropout_rng, training=True)
                optimizer.step(model.params, grads)
                loss_sum += batch_loss * len(chunk)
            train_loss = loss_sum / n
            val_loss = evaluate_loss(model, val_set)
        except DataError as exc:
            err = NumericError(
                f"non-finite loss at epoch {epoch}; last good epoch {epoch - 1}")
            err.last_good = last_good
            err.failed_epoch = epoch
            raise err from exc
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            err = NumericError(
                f"non-finite loss at epoch {epoch}; last good epoch {epoch - 1}")
            err.last_good = last_good
            err.failed_epoch = epoch
            raise err
        curves.append((epoch, float(train_loss), float(val_loss)))
        last_good = model.copy()
        if val_loss < best_val:
            best_val = val_loss
            best_model = model.copy()
            best_epoch = epoch
        log.info("epoch %d/%d train %.6g val %.6g", epoch, cfg.epochs,
                 train_loss, val_loss)
    return TrainResult(model=model, best_model=best_model,
                       best_epoch=best_epoch, curves=curves,
                       seconds=time.monotonic() - start)


def model_label(cfg: PostfilterConfig) -> str:
    ch = "2ch" if cfg.input_mode == MODE_TARGET_PLUS_INTERFERENCE else "1ch"
    return f"{cfg.cell}_{cfg.layers}-{cfg.hidden}_{ch}"


def _metric_value(name: str, estimate, reference) -> float:
    try:
        func = METRIC_FUNCS[name]
    except KeyError:
        raise ConfigError(f"unknown metric {name!r}, expected one of "
                          f"{sorted(METRIC_FUNCS)}") from None
    return func(estimate, reference)


def evaluate_conditions(records, models: dict | None = None,
                        metric_names=("sdr", "stoi"),
                        loss_cfg: LossConfig = LossConfig()) -> dict:
    """Score condition N plus every supplied model on a record list.

    Returns a report dict: per condition, per metric, the per-utterance
    values and their mean. Models also get the mask loss on the oracle
    targets. Fully deterministic ordering.
    """
    if len(records) == 0:
        raise InvalidInputError("no records to evaluate")
    for name in metric_names:
        if name not in METRIC_FUNCS:
            raise ConfigError(f"unknown metric {name!r}, expected one of "
                              f"{sorted(METRIC_FUNCS)}")
    models = dict(models or {})
    ids = [r.meta.get("scene", f"utterance_{i:05d}")
           for i, r in enumerate(records)]
    report = {"version": REPORT_VERSION, "metrics": list(metric_names),
              "utterances": ids, "conditions": {}}

    def scored(estimates):
        entry = {}
        for name in metric_names:
            values = [_metric_value(name, est, rec.reference)
                      for est, rec in zip(estimates, records)]
            entry[name] = {"mean": float(np.mean(values)), "values": values}
        return entry

    mvdr_out = [istft(r.y_target) for r in records]
    report["conditions"][CONDITION_NO_POSTFILTER] = scored(mvdr_out)

    for label in sorted(models):
        model = models[label]
        estimates = []
        losses = []
        for record in records:
            feats, target, weight_pow = training_arrays(
                record, model.config.input_mode, loss_cfg.beta)
            mask_hat = forward(model, feats)
            residual = (target - mask_hat.values) * weight_pow
            losses.append(float(np.mean(residual * residual)))
            estimates.append(istft(apply_mask(mask_hat, record.y_target)))
        entry = scored(estimates)
        entry["loss"] = {"mean": float(np.mean(losses)), "values": losses}
        report["conditions"][label] = entry
    return report


def render_report_table(report: dict) -> str:
    """Plain-text N/B/P metric table with deterministic ordering."""
    metric_names = list(report.get("metrics", []))
    columns = ["condition"] + [f"{m}" for m in metric_names] + ["loss"]
    conditions = report.get("conditions", {})
    order = ([CONDITION_NO_POSTFILTER] if CONDITION_NO_POSTFILTER in conditions
             else [])
    order += sorted(c for c in conditions if c != CONDITION_NO_POSTFILTER)
    rows = []
    for label in order:
        entry = conditions[label]
        row = [label]
        for name in metric_names:
            row.append(f"{entry[name]['mean']:.4f}")
        row.append(f"{entry['loss']['mean']:.6g}" if "loss" in entry else "-")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows + [columns])
              for i in range(len(columns))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths)).rstrip()]
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"
