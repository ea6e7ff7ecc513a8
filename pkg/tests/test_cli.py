import json
from pathlib import Path

import numpy as np
import pytest

from dualbeam.audio import AudioBuffer, read_wav, write_wav
from dualbeam.cli import main
from dualbeam.config import (ExperimentConfig, config_from_dict,
                             config_to_dict, load_config, save_config)
from dualbeam.errors import ConfigError, NumericError
from dualbeam.rnn import PostfilterConfig, init_model

EPOCHS = 2
SPLITS = (6, 2, 2)


def _small_config_doc(seed=0):
    return {
        "seed": seed,
        "scene": {"utterance_seconds": 2.0, "arrays": ["linear-4"]},
        "model": {"hidden": 12},
        "train": {"epochs": EPOCHS, "batch_size": 4, "train_count": SPLITS[0],
                  "val_count": SPLITS[1], "test_count": SPLITS[2]},
    }


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Full CLI chain at tiny scale: simulate -> prepare -> train -> evaluate."""
    root = tmp_path_factory.mktemp("cli")
    config = root / "config.json"
    config.write_text(json.dumps(_small_config_doc()))
    base = ["--config", str(config)]

    scenes = root / "scenes"
    assert main(["simulate", *base, "--out", str(scenes), "--synthetic"]) == 0
    records = root / "records"
    assert main(["prepare", *base, "--scenes", str(scenes),
                 "--out", str(records)]) == 0
    models = root / "models"
    assert main(["train", *base, "--data", str(records),
                 "--out", str(models)]) == 0
    report = root / "report.json"
    assert main(["evaluate", *base, "--models", str(models),
                 "--data", str(records), "--report", str(report)]) == 0
    return {"root": root, "config": config, "scenes": scenes,
            "records": records, "models": models, "report": report}


def test_config_file_round_trip(tmp_path):
    cfg = config_from_dict(_small_config_doc(seed=3))
    path = tmp_path / "c.json"
    save_config(path, cfg)
    again = load_config(path)
    assert config_to_dict(again) == config_to_dict(cfg)


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        config_from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        config_from_dict({"stft": {"hop_size": 128}})
    with pytest.raises(ConfigError):
        config_from_dict({"metrics": ["pesq"]})


def test_config_custom_array_entries():
    doc = {"scene": {"arrays": [
        "circular-4",
        {"name": "pair", "positions": [[-0.03, 0, 0], [0.03, 0, 0]]}]}}
    cfg = config_from_dict(doc)
    out = config_to_dict(cfg)
    assert out["scene"]["arrays"][1]["name"] == "pair"
    assert config_to_dict(config_from_dict(out)) == out
    with pytest.raises(ConfigError):
        config_from_dict({"scene": {"arrays": [{"name": "x"}]}})
    with pytest.raises(ConfigError):
        config_from_dict({"scene": {"arrays": [7]}})


def test_simulate_writes_scene_dirs(workspace):
    dirs = sorted(p.name for p in workspace["scenes"].iterdir() if p.is_dir())
    assert len(dirs) == sum(SPLITS)
    assert dirs[0] == "scene_00000"
    first = workspace["scenes"] / dirs[0]
    for name in ("mixture.wav", "target_image.wav", "interf_image.wav",
                 "scene.json"):
        assert (first / name).is_file()
    meta = json.loads((first / "scene.json").read_text())
    assert meta["array"]["name"] == "linear-4"
    assert -20.0 <= meta["interf_gain_db"] <= 0.0


def test_simulate_rerun_is_byte_identical(workspace, tmp_path):
    out2 = tmp_path / "again"
    assert main(["simulate", "--config", str(workspace["config"]),
                 "--out", str(out2), "--synthetic", "--count", "1"]) == 0
    a = (workspace["scenes"] / "scene_00000" / "mixture.wav").read_bytes()
    b = (out2 / "scene_00000" / "mixture.wav").read_bytes()
    assert a == b


def test_simulate_requires_a_source(workspace, tmp_path):
    assert main(["simulate", "--config", str(workspace["config"]),
                 "--out", str(tmp_path / "x")]) == 1


def test_simulate_seed_override(workspace, tmp_path):
    out = tmp_path / "seeded"
    assert main(["simulate", "--config", str(workspace["config"]),
                 "--seed", "9", "--out", str(out), "--synthetic",
                 "--count", "1"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 9
    a = (workspace["scenes"] / "scene_00000" / "mixture.wav").read_bytes()
    b = (out / "scene_00000" / "mixture.wav").read_bytes()
    assert a != b


def test_prepare_split_layout(workspace):
    manifest = json.loads((workspace["records"] / "manifest.json").read_text())
    sizes = {k: len(v) for k, v in manifest["splits"].items()}
    assert sizes == {"train": SPLITS[0], "val": SPLITS[1], "test": SPLITS[2]}
    names = [n for split in manifest["splits"].values() for n in split]
    assert len(set(names)) == len(names)  # splits are disjoint
    for split in ("train", "val", "test"):
        for name in manifest["splits"][split]:
            assert (workspace["records"] / split / name).is_file()


def test_train_outputs(workspace):
    for label in ("gru_1-12_1ch", "gru_1-12_2ch"):
        assert (workspace["models"] / f"{label}_final.npz").is_file()
        assert (workspace["models"] / f"{label}_best.npz").is_file()
        csv = (workspace["models"] / f"{label}_loss.csv").read_text()
        lines = csv.strip().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss"
        assert len(lines) == 1 + EPOCHS


def test_evaluate_report(workspace):
    report = json.loads(workspace["report"].read_text())
    assert set(report["conditions"]) == {"N", "gru_1-12_1ch", "gru_1-12_2ch"}
    assert len(report["utterances"]) == SPLITS[2]
    for entry in report["conditions"].values():
        assert len(entry["sdr"]["values"]) == SPLITS[2]


def test_report_renders_table(workspace, capsys):
    assert main(["report", "--results", str(workspace["report"])]) == 0
    out = capsys.readouterr().out
    lines = out.strip().splitlines()
    assert lines[0].split()[0] == "condition"
    assert lines[1].startswith("N")
    assert len(lines) == 4


def test_report_missing_file(tmp_path):
    assert main(["report", "--results", str(tmp_path / "nope.json")]) == 2


def test_enhance_matches_evaluate(workspace, tmp_path, capsys):
    # same scene, same checkpoint -> identical per-utterance SDR [same path]
    report = json.loads(workspace["report"].read_text())
    utt = report["utterances"][0]
    scene_dir = workspace["scenes"] / utt
    out = tmp_path / "enh"
    assert main(["enhance", "--config", str(workspace["config"]),
                 "--model", str(workspace["models"] / "gru_1-12_2ch_final.npz"),
                 "--scene", str(scene_dir), "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    value = float(printed.split("sdr ")[1].split(" dB")[0])
    expected = report["conditions"]["gru_1-12_2ch"]["sdr"]["values"][0]
    assert value == pytest.approx(expected, abs=5e-5)
    for name in ("enhanced.wav", "mvdr_target.wav", "mvdr_interf.wav"):
        assert (out / name).is_file()
    rate = read_wav(out / "enhanced.wav").sample_rate
    assert rate == read_wav(scene_dir / "mixture.wav").sample_rate


def test_enhance_mask_one_equals_mvdr(workspace, tmp_path):
    scene_dir = workspace["scenes"] / "scene_00009"
    out = tmp_path / "ones"
    assert main(["enhance", "--config", str(workspace["config"]),
                 "--model", str(workspace["models"] / "gru_1-12_2ch_final.npz"),
                 "--scene", str(scene_dir), "--out", str(out),
                 "--mask-one"]) == 0
    enhanced = (out / "enhanced.wav").read_bytes()
    mvdr = (out / "mvdr_target.wav").read_bytes()
    assert enhanced == mvdr


def test_enhance_mask_net_unimplemented(workspace, tmp_path):
    assert main(["enhance", "--config", str(workspace["config"]),
                 "--model", str(workspace["models"] / "gru_1-12_2ch_final.npz"),
                 "--scene", str(workspace["scenes"] / "scene_00000"),
                 "--out", str(tmp_path / "x"), "--mask-net"]) == 2


def test_enhance_bin_count_mismatch(workspace, tmp_path):
    doc = _small_config_doc()
    doc["stft"] = {"frame_size": 256, "hop": 64}
    other = tmp_path / "other.json"
    other.write_text(json.dumps(doc))
    assert main(["enhance", "--config", str(other),
                 "--model", str(workspace["models"] / "gru_1-12_2ch_final.npz"),
                 "--scene", str(workspace["scenes"] / "scene_00000"),
                 "--out", str(tmp_path / "x")]) == 2


def test_enhance_missing_model(workspace, tmp_path):
    assert main(["enhance", "--config", str(workspace["config"]),
                 "--model", str(tmp_path / "missing.npz"),
                 "--scene", str(workspace["scenes"] / "scene_00000"),
                 "--out", str(tmp_path / "x")]) == 2


def test_metric_single_pair(tmp_path, capsys):
    rng = np.random.default_rng(0)
    ref = AudioBuffer(rng.standard_normal(16000), 16000)
    write_wav(tmp_path / "ref.wav", ref)
    assert main(["metric", "--name", "sdr", "--est", str(tmp_path / "ref.wav"),
                 "--ref", str(tmp_path / "ref.wav")]) == 0
    out = capsys.readouterr().out
    assert out.strip() == "sdr 60.000000"


def test_metric_batch_mode(tmp_path, capsys):
    rng = np.random.default_rng(1)
    for name in ("utt_a", "utt_b"):
        sub = tmp_path / name
        sub.mkdir()
        ref = rng.standard_normal(16000)
        write_wav(sub / "ref.wav", AudioBuffer(ref, 16000))
        write_wav(sub / "est.wav", AudioBuffer(ref + 0.1 * rng.standard_normal(16000), 16000))
    csv_path = tmp_path / "scores.csv"
    assert main(["metric", "--name", "sdr", "--batch-dir", str(tmp_path),
                 "--est-name", "est.wav", "--ref-name", "ref.wav",
                 "--out", str(csv_path)]) == 0
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "utterance,sdr"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["utt_a", "utt_b"]
    for ln in lines[1:]:
        assert 10.0 < float(ln.split(",")[1]) < 40.0


def test_metric_argument_validation(tmp_path):
    assert main(["metric", "--name", "sdr", "--est", "x.wav"]) == 1
    assert main(["metric", "--name", "sdr"]) == 1
    assert main(["metric", "--name", "sdr", "--batch-dir", str(tmp_path),
                 "--est-name", "e.wav"]) == 1
    assert main(["metric", "--name", "sdr",
                 "--batch-dir", str(tmp_path / "missing"),
                 "--est-name", "e.wav", "--ref-name", "r.wav"]) == 2


def test_export_spectrogram(workspace, tmp_path):
    wav = workspace["scenes"] / "scene_00000" / "mixture.wav"
    csv_path = tmp_path / "spec.csv"
    img_path = tmp_path / "spec.pgm"
    assert main(["export-spectrogram", "--config", str(workspace["config"]),
                 "--wav", str(wav), "--csv", str(csv_path),
                 "--image", str(img_path)]) == 0
    assert csv_path.is_file() and img_path.is_file()
    assert img_path.read_bytes().startswith(b"P5")
    # out-of-range channel and missing output selection
    assert main(["export-spectrogram", "--config", str(workspace["config"]),
                 "--wav", str(wav), "--channel", "99",
                 "--csv", str(csv_path)]) == 2
    assert main(["export-spectrogram", "--config", str(workspace["config"]),
                 "--wav", str(wav)]) == 1


def test_usage_errors():
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["train", "--data"]) == 1


def test_missing_config_file():
    assert main(["simulate", "--config", "/nonexistent/config.json",
                 "--out", "/tmp/x", "--synthetic"]) == 1


def test_train_numeric_failure_exit_code(workspace, tmp_path, monkeypatch):
    import dualbeam.cli as cli_mod

    def explode(model, train_set, val_set, cfg):
        err = NumericError("training diverged")
        err.last_good = init_model(PostfilterConfig(hidden=12,
                                                    input_mode=model.config.input_mode),
                                   0)
        err.failed_epoch = 1
        raise err

    monkeypatch.setattr(cli_mod, "train", explode)
    out = tmp_path / "models"
    assert main(["train", "--config", str(workspace["config"]),
                 "--data", str(workspace["records"]),
                 "--out", str(out)]) == 3
    assert (out / "gru_1-12_1ch_lastgood.npz").is_file()
