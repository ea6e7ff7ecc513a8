"""Command line front end: simulate -> prepare -> train -> evaluate,
plus single-file enhancement, metrics, report rendering and spectrogram
export.

Exit codes: 0 success, 1 usage or configuration problem, 2 data problem,
3 numeric failure during training.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .audio import read_wav_mono
from .beamform import Mask, apply_mask
from .config import (ExperimentConfig, config_from_dict, config_to_dict,
                     load_config)
from .dataset import (build_training_set, list_scene_dirs, load_split,
                      prepare_dataset, prepare_record, quantize_record,
                      read_scene_dir, simulate_scenes)
from .errors import (ConfigError, DataError, InvalidInputError,
                     MaskNetworkUnavailableError, NumericError)
from .metrics import export_spectrogram_csv, export_spectrogram_image, sdr, stoi
from .rnn import (MODE_TARGET_ONLY, MODE_TARGET_PLUS_INTERFERENCE, forward,
                  init_model, load_model, save_model)
from .stft import istft, stft
from .training import (curves_to_csv, evaluate_conditions, model_label,
                       render_report_table, train)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE",
                        help="experiment config JSON (defaults used if absent)")
    common.add_argument("--seed", type=int, help="override the experiment seed")
    common.add_argument("--jobs", type=int, default=1,
                        help="worker count (accepted; execution is sequential)")
    common.add_argument("--verbose", action="store_true",
                        help="debug-level logging")

    parser = _Parser(prog="dualbeam",
                     description="Dual-MVDR beamforming with a recurrent "
                                 "mask postfilter.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("simulate", parents=[common],
                       help="render random room scenes to WAV directories")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--count", type=int,
                   help="scene count (default: sum of the split sizes)")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--synthetic", action="store_true",
                        help="use the built-in deterministic speech generator")
    source.add_argument("--corpus", metavar="DIR",
                        help="directory of mono WAV utterances")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("prepare", parents=[common],
                       help="beamform scenes into training records")
    p.add_argument("--scenes", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", parents=[common],
                       help="train postfilters on prepared records")
    p.add_argument("--data", required=True, metavar="DIR",
                   help="records directory (output of prepare)")
    p.add_argument("--out", required=True, metavar="DIR",
                   help="checkpoint/loss-curve output directory")
    p.add_argument("--mode", default="both",
                   choices=["both", MODE_TARGET_ONLY, MODE_TARGET_PLUS_INTERFERENCE])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common],
                       help="score trained models on the test split")
    p.add_argument("--models", required=True, metavar="DIR")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--report", required=True, metavar="FILE",
                   help="JSON report output path")
    p.add_argument("--checkpoint", default="final", choices=["final", "best"])
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("enhance", parents=[common],
                       help="run the full pipeline on one scene directory")
    p.add_argument("--model", required=True, metavar="FILE")
    p.add_argument("--scene", required=True, metavar="DIR",
                   help="scene directory with mixture and premix images")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--mask-one", action="store_true",
                   help="debug: skip the postfilter (mask of ones)")
    p.add_argument("--mask-net", action="store_true",
                   help="use an estimated coarse mask instead of oracle SCMs")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("metric", parents=[common],
                       help="compute SDR or STOI for WAV pairs")
    p.add_argument("--name", required=True, choices=["sdr", "stoi"])
    p.add_argument("--est", metavar="FILE")
    p.add_argument("--ref", metavar="FILE")
    p.add_argument("--batch-dir", metavar="DIR",
                   help="score every subdirectory containing the named files")
    p.add_argument("--est-name", metavar="NAME",
                   help="estimate file name inside each subdirectory")
    p.add_argument("--ref-name", metavar="NAME",
                   help="reference file name inside each subdirectory")
    p.add_argument("--out", metavar="FILE", help="CSV output (default stdout)")
    p.set_defaults(func=cmd_metric)

    p = sub.add_parser("report", parents=[common],
                       help="render an evaluation report as a table")
    p.add_argument("--results", required=True, metavar="FILE")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("export-spectrogram", parents=[common],
                       help="write log-magnitude CSV and/or PGM image")
    p.add_argument("--wav", required=True, metavar="FILE")
    p.add_argument("--channel", type=int, default=0)
    p.add_argument("--csv", metavar="FILE")
    p.add_argument("--image", metavar="FILE")
    p.set_defaults(func=cmd_export_spectrogram)

    return parser


def _experiment_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        doc = config_to_dict(cfg)
        doc["seed"] = int(args.seed)
        cfg = config_from_dict(doc)
    return cfg


def cmd_simulate(args, cfg: ExperimentConfig) -> int:
    count = args.count if args.count is not None \
        else sum(cfg.train_config().split_counts)
    simulate_scenes(args.out, count, cfg.seed,
                    duration=cfg.utterance_seconds,
                    sample_rate=cfg.sample_rate,
                    constraints=cfg.scene, catalog=cfg.arrays,
                    corpus_dir=args.corpus)
    print(f"simulated {count} scenes (seed {cfg.seed}) -> {args.out}")
    return EXIT_OK


def cmd_prepare(args, cfg: ExperimentConfig) -> int:
    counts = cfg.train_config().split_counts
    manifest = prepare_dataset(args.scenes, args.out, cfg.stft,
                               counts=counts, ref_index=cfg.ref_mic)
    sizes = {split: len(names) for split, names in manifest["splits"].items()}
    print(f"prepared records {sizes} -> {args.out}")
    return EXIT_OK


def cmd_train(args, cfg: ExperimentConfig) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_records = load_split(args.data, "train")
    val_records = load_split(args.data, "val")
    modes = [MODE_TARGET_ONLY, MODE_TARGET_PLUS_INTERFERENCE] \
        if args.mode == "both" else [args.mode]
    for mode in modes:
        pf_cfg = cfg.postfilter_config(mode)
        label = model_label(pf_cfg)
        train_set = build_training_set(train_records, mode, cfg.loss.beta)
        val_set = build_training_set(val_records, mode, cfg.loss.beta)
        model = init_model(pf_cfg, cfg.seed)
        try:
            result = train(model, train_set, val_set, cfg.train_config())
        except NumericError as exc:
            rescue = out_dir / f"{label}_lastgood.npz"
            save_model(rescue, exc.last_good)
            log.error("%s: %s (rescue checkpoint at %s)", label, exc, rescue)
            raise
        save_model(out_dir / f"{label}_final.npz", result.model)
        save_model(out_dir / f"{label}_best.npz", result.best_model)
        (out_dir / f"{label}_loss.csv").write_text(curves_to_csv(result.curves))
        final_val = result.curves[-1][2]
        print(f"trained {label}: {len(result.curves)} epochs, "
              f"final val loss {final_val:.6g}, best epoch {result.best_epoch} "
              f"({result.seconds:.1f} s)")
    return EXIT_OK


def cmd_evaluate(args, cfg: ExperimentConfig) -> int:
    models_dir = Path(args.models)
    suffix = f"_{args.checkpoint}.npz"
    paths = sorted(models_dir.glob(f"*{suffix}"))
    if not paths:
        raise DataError(f"no *{suffix} checkpoints under {models_dir}")
    models = {p.name[:-len(suffix)]: load_model(p) for p in paths}
    records = load_split(args.data, "test")
    report = evaluate_conditions(records, models, cfg.metrics, cfg.loss)
    report_path = Path(args.report)
    if report_path.parent != Path(""):
        report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(render_report_table(report), end="")
    print(f"report -> {report_path}")
    return EXIT_OK


def cmd_enhance(args, cfg: ExperimentConfig) -> int:
    if args.mask_net:
        raise MaskNetworkUnavailableError(
            "coarse-mask estimation from the mixture alone is not implemented; "
            "provide premix images for oracle covariance estimates")
    model = load_model(args.model)
    if model.config.feature_bins != cfg.stft.num_bins:
        raise InvalidInputError(
            f"checkpoint expects {model.config.feature_bins} bins but the "
            f"configured STFT produces {cfg.stft.num_bins}")
    _, render = read_scene_dir(args.scene)
    record = quantize_record(prepare_record(render, cfg.stft,
                                            ref_index=cfg.ref_mic))
    feats = build_training_set([record], model.config.input_mode,
                               cfg.loss.beta)[0][0]
    if args.mask_one:
        mask = Mask(np.ones(record.mask.values.shape))
    else:
        mask = forward(model, feats)
    enhanced = istft(apply_mask(mask, record.y_target))
    mvdr_target = istft(record.y_target)
    mvdr_interf = istft(record.y_interf)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    from .audio import write_wav
    write_wav(out_dir / "enhanced.wav", enhanced)
    write_wav(out_dir / "mvdr_target.wav", mvdr_target)
    write_wav(out_dir / "mvdr_interf.wav", mvdr_interf)
    value = sdr(enhanced, record.reference)
    print(f"enhanced {args.scene} -> {out_dir / 'enhanced.wav'} "
          f"(sdr {value:.4f} dB)")
    return EXIT_OK


def cmd_metric(args, cfg: ExperimentConfig) -> int:
    func = {"sdr": sdr, "stoi": stoi}[args.name]
    single = args.est is not None or args.ref is not None
    batch = args.batch_dir is not None
    if single and batch:
        raise UsageError("give either --est/--ref or --batch-dir, not both")
    if single:
        if args.est is None or args.ref is None:
            raise UsageError("--est and --ref must be given together")
        value = func(read_wav_mono(args.est), read_wav_mono(args.ref))
        print(f"{args.name} {value:.6f}")
        return EXIT_OK
    if not batch:
        raise UsageError("give --est/--ref files or --batch-dir")
    if args.est_name is None or args.ref_name is None:
        raise UsageError("--batch-dir needs --est-name and --ref-name")
    root = Path(args.batch_dir)
    if not root.is_dir():
        raise DataError(f"batch directory not found: {root}")
    rows = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        est_path = sub / args.est_name
        ref_path = sub / args.ref_name
        if est_path.is_file() and ref_path.is_file():
            value = func(read_wav_mono(est_path), read_wav_mono(ref_path))
            rows.append((sub.name, value))
    if not rows:
        raise DataError(f"no subdirectories of {root} contain both "
                        f"{args.est_name} and {args.ref_name}")
    lines = [f"utterance,{args.name}"]
    lines += [f"{name},{value:.6f}" for name, value in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {len(rows)} rows -> {args.out}")
    else:
        print(text, end="")
    return EXIT_OK


def cmd_report(args, cfg: ExperimentConfig) -> int:
    path = Path(args.results)
    if not path.is_file():
        raise DataError(f"results file not found: {path}")
    try:
        report = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from exc
    print(render_report_table(report), end="")
    return EXIT_OK


def cmd_export_spectrogram(args, cfg: ExperimentConfig) -> int:
    if args.csv is None and args.image is None:
        raise UsageError("give --csv and/or --image output paths")
    from .audio import read_wav
    audio = read_wav(args.wav)
    if not 0 <= args.channel < audio.num_channels:
        raise InvalidInputError(
            f"channel {args.channel} out of range for {audio.num_channels} "
            "channel(s)")
    spec = stft(audio.channel(args.channel), cfg.stft)
    if args.csv:
        export_spectrogram_csv(spec, args.csv)
        print(f"csv -> {args.csv}")
    if args.image:
        export_spectrogram_image(spec, args.image)
        print(f"image -> {args.image}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if getattr(args, "func", None) is None:
        parser.print_help()
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _experiment_config(args)
        return args.func(args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, InvalidInputError, MaskNetworkUnavailableError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
