"""Command-line interface.

Subcommands: ingest (scan or synthesize a corpus into a manifest),
features (build a feature cache), train, eval, and experiment (run a
named preset end to end).

Exit codes: 0 success, 2 usage or configuration problem, 3 data or
shape problem, 4 numeric failure (non-finite loss).

Values given in a ``--config`` JSON file override command-line flags.
The data root may also come from the VOXPROFILE_DATA_ROOT environment
variable when ``--root`` is omitted.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .dataset import (parse_manifest, scan_timit_layout, split_for_speaker_id,
                      write_manifest)
from .dsp import FeatureConfig, parse_feature_kinds
from .errors import (ConfigError, DataError, DecodeError, NumericError,
                     ParseError, ShapeError, ValidationError)
from .experiments import preset_help_lines, prepare_bundle, run_experiment
from .feature_cache import build_cache, read_cache
from .models import (LossWeights, ModelSpec, build_model, load_checkpoint,
                     save_checkpoint)
from .reports import summary_table, write_history, write_summary_csv
from .synth import generate_corpus
from .training import TrainConfig, evaluate_tasks, fit_age_scale, train

logger = logging.getLogger(__name__)

ENV_DATA_ROOT = "VOXPROFILE_DATA_ROOT"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _data_root(args) -> Path:
    root = args.root or os.environ.get(ENV_DATA_ROOT)
    if not root:
        raise ConfigError(
            f"no data root: pass --root or set {ENV_DATA_ROOT}"
        )
    return Path(root)


def _feature_config(args) -> FeatureConfig:
    return FeatureConfig(
        sample_rate=args.sr,
        n_fft=args.n_fft,
        hop_length=args.hop,
        win_length=args.win,
    )


def _parse_loss_weights(text):
    if text is None:
        return None
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ConfigError(
            f"--loss-weights expects 'accent,gender,age', got {text!r}"
        )
    try:
        return LossWeights(*(float(p) for p in parts))
    except ValueError:
        raise ConfigError(f"non-numeric loss weight in {text!r}") from None


# ---------------------------------------------------------------------------
# subcommand handlers

def cmd_ingest(args) -> int:
    root = _data_root(args)
    if args.synthetic:
        meta = generate_corpus(root, n_speakers=args.synthetic, seed=args.seed)
        print(f"generated synthetic corpus: {args.synthetic} speakers under {root}")
        args.meta = str(meta)
    if not args.meta:
        raise ConfigError("--meta is required (speaker_id,age CSV) unless --synthetic")
    result = scan_timit_layout(root, args.meta)
    write_manifest(result.manifest, args.out)
    print(f"manifest: {len(result.manifest)} records -> {args.out}")
    if result.skipped:
        print(f"skipped {len(result.skipped)} file(s):")
        for entry in result.skipped[:20]:
            print(f"  {entry.path}: {entry.reason}")
        if len(result.skipped) > 20:
            print(f"  ... and {len(result.skipped) - 20} more")
    return EXIT_OK


def cmd_features(args) -> int:
    manifest = parse_manifest(args.manifest)
    kinds = parse_feature_kinds(args.kinds)
    cfg = _feature_config(args)
    paths = sorted({r.path for r in manifest})
    hit = build_cache(args.out, paths, kinds, cfg, averaged=args.averaged,
                      jobs=args.jobs, reuse=not args.no_cache)
    state = "cache hit" if hit else "extracted"
    print(f"{state}: {len(paths)} utterance(s), kinds {args.kinds} -> {args.out}")
    return EXIT_OK


def _bundle_from_cache(manifest, cache, tasks, model_kind, oversample,
                       normalization, seed):
    sequential_model = model_kind not in ("mlp", "multitask_mlp")
    return prepare_bundle(manifest, tasks, cache, cache.averaged,
                          sequential_model, oversample, normalization, seed)


def cmd_train(args) -> int:
    manifest = parse_manifest(args.manifest)
    cache = read_cache(args.cache)
    tasks = tuple(t.strip() for t in args.task.split(",") if t.strip())
    if "speaker" in tasks:
        manifest = split_for_speaker_id(manifest, seed=args.seed)

    cfg = TrainConfig(
        epochs=args.epochs, batch_size=args.batch, learning_rate=args.lr,
        seed=args.seed, patience=args.patience,
        loss_weights=_parse_loss_weights(args.loss_weights),
        age_loss=args.age_loss, normalization=args.normalization,
        feature_spec=args.kinds,
    )
    bundle = _bundle_from_cache(manifest, cache, tasks, args.model,
                                args.oversample, cfg.normalization, cfg.seed)

    sample = (bundle.train.features[0] if bundle.train.sequential
              else bundle.train.features)
    feature_rows = sample.shape[0] if bundle.train.sequential else sample.shape[1]
    spec_kwargs = {"kind": args.model, "tasks": tasks, "dropout": args.dropout}
    if args.hidden:
        spec_kwargs["hidden"] = tuple(int(h) for h in args.hidden.split(","))
    if args.model in ("mlp", "multitask_mlp"):
        spec_kwargs["input_dim"] = feature_rows
    else:
        spec_kwargs["in_channels"] = feature_rows
    if "speaker" in tasks:
        spec_kwargs["n_speakers"] = len(manifest.speakers)
    spec = ModelSpec(**spec_kwargs)

    model = build_model(spec, seed=cfg.seed)
    model, history = train(model, bundle, cfg)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out_dir / "model.vpck", model)
    write_history(out_dir / "history.jsonl", "train", {"train": history})
    print(f"trained {args.model} on {args.task}: "
          f"final train loss {history[-1]['train_loss']:.6f}; "
          f"checkpoint -> {out_dir / 'model.vpck'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest = parse_manifest(args.manifest)
    cache = read_cache(args.cache)
    model = load_checkpoint(args.checkpoint)
    tasks = model.spec.tasks
    if "speaker" in tasks:
        manifest = split_for_speaker_id(manifest, seed=args.seed)

    bundle = _bundle_from_cache(manifest, cache, tasks, model.spec.kind,
                                oversample=False, normalization=args.normalization,
                                seed=args.seed)
    if "age" in tasks:
        fit_age_scale(bundle)
    metrics = evaluate_tasks(model, bundle.split(args.split), bundle)
    rows = [{"model": model.spec.kind, "task": task, "metrics": m}
            for task, m in metrics.items()]
    table = summary_table(rows)
    print(table, end="")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "summary.txt").write_text(table)
        write_summary_csv(out_dir / "summary.csv", rows)
        print(f"report -> {out_dir}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    if args.manifest:
        manifest = parse_manifest(args.manifest)
    else:
        root = _data_root(args)
        if args.synthetic:
            meta = generate_corpus(root, n_speakers=args.synthetic, seed=args.seed or 0)
            args.meta = str(meta)
        meta = args.meta or str(Path(root) / "speaker_meta.csv")
        manifest = scan_timit_layout(root, meta).manifest

    overrides = {}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.batch is not None:
        overrides["batch_size"] = args.batch
    if args.lr is not None:
        overrides["learning_rate"] = args.lr
    if args.seed is not None:
        overrides["seed"] = args.seed
    weights = _parse_loss_weights(args.loss_weights)
    if weights is not None:
        overrides["loss_weights"] = weights

    feature_cfg = _feature_config(args)
    result = run_experiment(args.preset, manifest, args.out,
                            feature_cfg=feature_cfg, train_overrides=overrides,
                            jobs=args.jobs, reuse_cache=not args.no_cache)
    print(f"experiment {args.preset} (run {result['run_id']})")
    print(summary_table(result["rows"]), end="")
    print(f"bundle -> {result['out_dir']}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def _add_feature_flags(parser):
    parser.add_argument("--sr", type=int, default=16000, help="sample rate (Hz)")
    parser.add_argument("--n-fft", type=int, default=512, help="FFT size")
    parser.add_argument("--hop", type=int, default=160,
                        help="hop length in samples (default 160)")
    parser.add_argument("--win", type=int, default=400, help="window length")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxprofile",
        description="Speaker-profiling toolkit: features, models, experiments.",
        epilog="experiment presets:\n" + "\n".join(preset_help_lines()),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--config", help="JSON file whose values override flags")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="scan a corpus tree into a manifest CSV")
    p.add_argument("--root", help=f"corpus root (or ${ENV_DATA_ROOT})")
    p.add_argument("--meta", help="speaker_id,age CSV")
    p.add_argument("--out", required=True, help="output manifest CSV")
    p.add_argument("--synthetic", type=int, metavar="N",
                   help="generate an N-speaker synthetic corpus under --root first")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("features", help="extract features into a cache file")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output cache file")
    p.add_argument("--kinds", default="mfcc:40",
                   help="comma list, e.g. mfcc:40,mel:64,chroma,tonnetz,contrast")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--avg", dest="averaged", action="store_true", default=True,
                       help="frame-averaged features (default)")
    group.add_argument("--sequential", dest="averaged", action="store_false",
                       help="per-frame sequential features")
    _add_feature_flags(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel extraction workers")
    p.add_argument("--no-cache", action="store_true",
                   help="recompute even if the cache matches")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train one model from a manifest + cache")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--task", required=True,
                   help="gender | accent | age | speaker, or a comma list for multitask")
    p.add_argument("--model", default="mlp",
                   choices=("mlp", "cnn", "lstm", "multitask_mlp",
                            "multitask_cnn_lstm"))
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--hidden", help="comma list of hidden widths")
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--oversample", action="store_true",
                   help="balance (accent, gender) counts in the training split")
    p.add_argument("--normalization", default="global_standardize",
                   choices=("none", "global_standardize"))
    p.add_argument("--loss-weights", metavar="A,G,AGE",
                   help="multitask loss weights, e.g. 5,1,0.01")
    p.add_argument("--age-loss", default="mse", choices=("mse", "l1"),
                   help="training objective for the age head")
    p.add_argument("--kinds", default=None, help="recorded in reports")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", help="optional report directory")
    p.add_argument("--seed", type=int, default=0,
                   help="must match the training seed for speaker-task "
                        "checkpoints (drives the per-speaker re-split)")
    p.add_argument("--normalization", default="global_standardize",
                   choices=("none", "global_standardize"),
                   help="must match the setting the checkpoint was trained with")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser(
        "experiment", help="run a named preset end to end",
        epilog="presets:\n" + "\n".join(preset_help_lines()),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--preset", required=True)
    p.add_argument("--root", help=f"corpus root (or ${ENV_DATA_ROOT})")
    p.add_argument("--meta", help="speaker_id,age CSV (default <root>/speaker_meta.csv)")
    p.add_argument("--manifest", help="use an existing manifest CSV instead of --root")
    p.add_argument("--synthetic", type=int, metavar="N",
                   help="generate an N-speaker synthetic corpus under --root first")
    p.add_argument("--out", required=True, help="output bundle directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--loss-weights", metavar="A,G,AGE")
    _add_feature_flags(p)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-cache", action="store_true")
    p.set_defaults(func=cmd_experiment)

    return parser


def _apply_config_file(args) -> None:
    if not getattr(args, "config", None):
        return
    with open(args.config) as fh:
        overrides = json.load(fh)
    for key, value in overrides.items():
        if not hasattr(args, key):
            raise ConfigError(f"config file sets unknown option {key!r}")
        setattr(args, key, value)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        _apply_config_file(args)
        return args.func(args)
    except (ConfigError, ParseError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ShapeError, ValidationError, DecodeError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as err:
        print(f"numeric failure: {err} {err.diagnostics}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
