import numpy as np
import pytest

import dualbeam.training as training
from dualbeam.beamform import Mask
from dualbeam.errors import ConfigError, InvalidInputError, NumericError
from dualbeam.rnn import (CELL_GRU, MODE_TARGET_ONLY,
                          MODE_TARGET_PLUS_INTERFERENCE, PostfilterConfig,
                          init_model, loss)
from dualbeam.stft import Spectrogram, StftConfig, istft
from dualbeam.audio import AudioBuffer
from dualbeam.dataset import ExampleRecord
from dualbeam.training import (Adam, TrainConfig, curves_to_csv,
                               evaluate_conditions, evaluate_loss,
                               model_label, parse_curves_csv,
                               render_report_table, train)

BINS = 16


def _toy_config(hidden=12, dropout=0.0):
    return PostfilterConfig(cell=CELL_GRU, layers=1, hidden=hidden,
                            input_mode=MODE_TARGET_ONLY, dropout_p=dropout,
                            feature_bins=BINS)


def _toy_set(seed, count, frames=24):
    rng = np.random.default_rng(seed)
    items = []
    for i in range(count):
        n = frames + (i % 3)  # mixed lengths exercise batch cropping
        feats = rng.standard_normal((n, BINS)).astype(np.float32)
        target = rng.uniform(0, 1, (n, BINS)).astype(np.float32)
        weight = rng.uniform(0.3, 2.0, (n, BINS)).astype(np.float32)
        items.append((feats, target, weight))
    return items


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=-1.0)
    with pytest.raises(ConfigError):
        TrainConfig(beta1=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(test_count=0)
    assert TrainConfig().split_counts == (200, 50, 50)


def test_adam_zero_gradient_is_noop():
    params = {"w": np.array([1.0, -2.0, 3.0], dtype=np.float32)}
    before = params["w"].copy()
    opt = Adam(params, learning_rate=0.1)
    for _ in range(5):
        opt.step(params, {"w": np.zeros(3, dtype=np.float32)})
    np.testing.assert_array_equal(params["w"], before)


def test_adam_first_step_is_signed_learning_rate():
    # bias correction makes the first update lr * g / (|g| + eps)
    params = {"w": np.array([0.0, 0.0], dtype=np.float64)}
    opt = Adam(params, learning_rate=1e-3)
    opt.step(params, {"w": np.array([2.5, -0.3])})
    np.testing.assert_allclose(params["w"], [-1e-3, 1e-3], rtol=1e-5)


def test_adam_name_mismatch():
    params = {"w": np.zeros(2)}
    opt = Adam(params)
    with pytest.raises(InvalidInputError):
        opt.step(params, {"b": np.zeros(2)})


def test_zero_learning_rate_leaves_parameters_unchanged():
    model = init_model(_toy_config(dropout=0.2), 3)
    before = {k: v.copy() for k, v in model.params.items()}
    cfg = TrainConfig(epochs=2, learning_rate=0.0, batch_size=2, seed=1,
                      train_count=1, val_count=1, test_count=1)
    train(model, _toy_set(10, 5), _toy_set(11, 2), cfg)
    for name in before:
        np.testing.assert_array_equal(model.params[name], before[name])


def test_training_is_deterministic():
    cfg = TrainConfig(epochs=3, batch_size=2, seed=7,
                      train_count=1, val_count=1, test_count=1)
    results = []
    for _ in range(2):
        model = init_model(_toy_config(dropout=0.2), 5)
        results.append(train(model, _toy_set(20, 6), _toy_set(21, 3), cfg))
    assert results[0].curves == results[1].curves
    for name in results[0].model.params:
        np.testing.assert_array_equal(results[0].model.params[name],
                                      results[1].model.params[name])


def test_training_reduces_loss_and_tracks_best():
    cfg = TrainConfig(epochs=8, batch_size=3, seed=2,
                      train_count=1, val_count=1, test_count=1)
    model = init_model(_toy_config(), 9)
    result = train(model, _toy_set(30, 9), _toy_set(31, 3), cfg)
    assert len(result.curves) == 8
    assert result.curves[-1][1] < result.curves[0][1]
    vals = [v for _, _, v in result.curves]
    assert result.best_epoch == int(np.argmin(vals)) + 1
    best_val = evaluate_loss(result.best_model, _toy_set(31, 3))
    assert best_val == pytest.approx(min(vals), rel=1e-6)


def test_single_example_overfit():
    # one utterance with a learnable target: loss collapses below 10% of start
    cfg = TrainConfig(epochs=200, learning_rate=1e-2, batch_size=1, seed=0,
                      train_count=1, val_count=1, test_count=1)
    model = init_model(_toy_config(hidden=16), 1)
    rng = np.random.default_rng(40)
    feats = rng.standard_normal((24, BINS)).astype(np.float32)
    target = (0.5 + 0.4 * np.tanh(feats)).astype(np.float32)
    weight = np.ones((24, BINS), dtype=np.float32)
    data = [(feats, target, weight)]
    result = train(model, data, data, cfg)
    assert result.curves[-1][1] < 0.1 * result.curves[0][1]


def test_evaluate_loss_matches_loss_function():
    model = init_model(_toy_config(), 4, dtype=np.float64)
    items = _toy_set(50, 3)
    expected = []
    for feats, target, weight in items:
        from dualbeam.rnn import forward
        mask_hat = forward(model, feats)
        residual = (target - mask_hat.values) * weight
        expected.append(np.mean(residual * residual))
    assert evaluate_loss(model, items) == pytest.approx(np.mean(expected),
                                                        rel=1e-6)


def test_nan_loss_aborts_with_last_good(monkeypatch):
    cfg = TrainConfig(epochs=4, batch_size=3, seed=3,
                      train_count=1, val_count=1, test_count=1)
    train_data = _toy_set(60, 6)
    val_data = _toy_set(61, 2)

    reference = init_model(_toy_config(), 8)
    ref_result = train(reference, train_data, val_data,
                       TrainConfig(epochs=1, batch_size=3, seed=3,
                                   train_count=1, val_count=1, test_count=1))

    real = training.gradients_batch_pow
    calls = {"n": 0}

    def poisoned(*args, **kwargs):
        calls["n"] += 1
        value, grads = real(*args, **kwargs)
        if calls["n"] > 2:  # two batches per epoch -> fails in epoch 2
            return float("nan"), grads
        return value, grads

    monkeypatch.setattr(training, "gradients_batch_pow", poisoned)
    model = init_model(_toy_config(), 8)
    with pytest.raises(NumericError) as info:
        train(model, train_data, val_data, cfg)
    err = info.value
    assert err.failed_epoch == 2
    for name in err.last_good.params:
        np.testing.assert_array_equal(err.last_good.params[name],
                                      ref_result.model.params[name])


def test_curves_csv_round_trip():
    curves = [(1, 0.125, 0.5), (2, 0.0624999, 0.25)]
    text = curves_to_csv(curves)
    assert text.startswith("epoch,train_loss,val_loss\n")
    back = parse_curves_csv(text)
    assert back == curves
    with pytest.raises(Exception):
        parse_curves_csv("epoch,loss\n1,0.5\n")


def test_model_label():
    assert model_label(PostfilterConfig()) == "gru_1-128_2ch"
    assert model_label(PostfilterConfig(cell="lstm", layers=2, hidden=256,
                                        input_mode=MODE_TARGET_ONLY)) \
        == "lstm_2-256_1ch"


def _fake_record(seed, frames=160):
    rng = np.random.default_rng(seed)
    cfg = StftConfig()
    shape = (frames, cfg.num_bins)
    y_t = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) \
        .astype(np.complex64)
    y_i = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) \
        .astype(np.complex64)
    num_samples = (frames - 1) * cfg.hop
    spec_t = Spectrogram(y_t, cfg, 16000, num_samples)
    spec_i = Spectrogram(y_i, cfg, 16000, num_samples)
    mask = Mask(rng.uniform(0, 1, shape))
    reference = AudioBuffer(istft(spec_t).samples + 0.01 * rng.standard_normal(num_samples), 16000)
    return ExampleRecord(y_target=spec_t, y_interf=spec_i, mask=mask,
                         reference=reference, meta={"scene": f"scene_{seed}"})


def test_evaluate_conditions_report_shape():
    records = [_fake_record(1), _fake_record(2)]
    pf1 = PostfilterConfig(hidden=8, input_mode=MODE_TARGET_ONLY)
    pf2 = PostfilterConfig(hidden=8, input_mode=MODE_TARGET_PLUS_INTERFERENCE)
    models = {model_label(pf1): init_model(pf1, 0),
              model_label(pf2): init_model(pf2, 0)}
    report = evaluate_conditions(records, models)
    assert report["metrics"] == ["sdr", "stoi"]
    assert report["utterances"] == ["scene_1", "scene_2"]
    assert set(report["conditions"]) == {"N", "gru_1-8_1ch", "gru_1-8_2ch"}
    n_entry = report["conditions"]["N"]
    assert len(n_entry["sdr"]["values"]) == 2
    assert n_entry["sdr"]["mean"] == pytest.approx(
        np.mean(n_entry["sdr"]["values"]))
    assert "loss" not in n_entry
    assert "loss" in report["conditions"]["gru_1-8_1ch"]
    # identical evaluation twice -> identical report
    assert evaluate_conditions(records, models) == report


def test_evaluate_conditions_rejects_unknown_metric():
    with pytest.raises(ConfigError):
        evaluate_conditions([_fake_record(3)], {}, metric_names=("pesq",))


def test_render_report_table():
    records = [_fake_record(4)]
    pf = PostfilterConfig(hidden=8, input_mode=MODE_TARGET_ONLY)
    report = evaluate_conditions(records, {model_label(pf): init_model(pf, 1)})
    table = render_report_table(report)
    lines = table.strip().splitlines()
    assert lines[0].split() == ["condition", "sdr", "stoi", "loss"]
    assert lines[1].startswith("N")
    assert lines[2].startswith("gru_1-8_1ch")
    # empty report renders the header only
    empty = render_report_table({"metrics": ["sdr", "stoi"], "conditions": {}})
    assert empty.strip().splitlines() == ["condition  sdr  stoi  loss"]


def test_train_rejects_empty_sets():
    model = init_model(_toy_config(), 0)
    with pytest.raises(InvalidInputError):
        train(model, [], _toy_set(1, 1), TrainConfig(epochs=1))
