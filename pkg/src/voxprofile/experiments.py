"""Experiment presets and the end-to-end runner.

Each preset resolves to a full (features, model, training) configuration
given nothing but a corpus manifest. Preset names follow the source
study's result tables one row at a time, and each carries the reported
numbers as annotations. Those numbers were measured on the licensed
TIMIT corpus with unreported hyperparameters, so runs on any other
corpus (including the synthetic one) are experiments, not reproductions;
report bundles say so explicitly.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .dataset import (Manifest, accent_code, gender_code, oversample_balanced,
                      split_for_speaker_id)
from .dsp import FeatureConfig, feature_dim, parse_feature_kinds
from .errors import ConfigError, DataError
from .feature_cache import build_cache, read_cache
from .models import LossWeights, ModelSpec, build_model, save_checkpoint, spec_hash
from .reports import config_hash, summary_table, write_history, write_summary_csv
from .training import (DataBundle, Split, TrainConfig,
                       evaluate_classification, evaluate_regression,
                       global_standardize, run_comparison, train)

logger = logging.getLogger(__name__)

REPORTED_NOTE = ("reported values come from the source study's runs on the "
                 "licensed TIMIT corpus; runs on other corpora, synthetic "
                 "included, are not reproductions")

AVERAGED_KINDS = ("mlp", "multitask_mlp")

FIVE_TYPES_SPEC = "mfcc:40,mel:64,chroma,tonnetz,contrast"


@dataclass(frozen=True)
class ExperimentPreset:
    """One runnable experiment: features + model + training config."""

    name: str
    mode: str                  # single | mtl | comparison | speaker
    kinds: str
    averaged: bool
    model_kind: str
    tasks: tuple
    train: TrainConfig
    provenance: str
    reported: dict
    model_overrides: dict | None = None

    def describe(self) -> str:
        return f"{self.name}: {self.provenance}"


def _single(name, task, kinds, averaged, model_kind, provenance, reported,
            epochs=60, overrides=None):
    return ExperimentPreset(
        name=name, mode="single", kinds=kinds, averaged=averaged,
        model_kind=model_kind, tasks=(task,),
        train=TrainConfig(epochs=epochs, batch_size=32, learning_rate=1e-3,
                          seed=0, patience=10, normalization="global_standardize",
                          feature_spec=kinds),
        provenance=provenance, reported=reported, model_overrides=overrides,
    )


def _speaker(name, kinds, model_kind, provenance, reported):
    return ExperimentPreset(
        name=name, mode="speaker", kinds=kinds, averaged=True,
        model_kind=model_kind, tasks=("speaker",),
        train=TrainConfig(epochs=100, batch_size=32, learning_rate=1e-3,
                          seed=0, patience=None,
                          normalization="global_standardize", feature_spec=kinds),
        provenance=provenance, reported=reported,
    )


def _mtl(name, kinds, provenance, reported):
    return ExperimentPreset(
        name=name, mode="mtl", kinds=kinds, averaged=False,
        model_kind="multitask_cnn_lstm", tasks=("accent", "gender", "age"),
        train=TrainConfig(epochs=60, batch_size=32, learning_rate=1e-3, seed=0,
                          patience=10, loss_weights=LossWeights(1.0, 1.0, 1.0),
                          normalization="global_standardize", feature_spec=kinds),
        provenance=provenance, reported=reported,
    )


def _comparison(name, kinds, provenance, reported):
    return ExperimentPreset(
        name=name, mode="comparison", kinds=kinds, averaged=True,
        model_kind="multitask_mlp", tasks=("accent", "gender", "age"),
        train=TrainConfig(epochs=60, batch_size=32, learning_rate=1e-3, seed=0,
                          patience=10, loss_weights=LossWeights(1.0, 1.0, 1.0),
                          normalization="global_standardize", feature_spec=kinds),
        provenance=provenance, reported=reported,
        model_overrides={"dropout": 0.2},
    )


def _build_presets():
    presets = [
        _single("table1_gender_mfcc13", "gender", "mfcc:13", True, "mlp",
                "Table 1, 13 averaged MFCCs",
                {"accuracy": 0.941, "precision": 0.941, "recall": 0.941},
                overrides={"dropout": 0.2}),
        _single("table1_gender_mfcc30", "gender", "mfcc:30", True, "mlp",
                "Table 1, 30 averaged MFCCs",
                {"accuracy": 0.986, "precision": 0.986, "recall": 0.986},
                overrides={"dropout": 0.2}),
        _single("table1_gender_mfcc40", "gender", "mfcc:40", True, "mlp",
                "Table 1, 40 averaged MFCCs",
                {"accuracy": 0.986, "precision": 0.986, "recall": 0.986},
                overrides={"dropout": 0.2}),
        _single("table2_accent_seqmfcc30_cnn", "accent", "mfcc:30", False, "cnn",
                "Table 2, sequential MFCC(30) CNN",
                {"accuracy": 0.10, "precision": 0.13, "recall": 0.11}),
        _single("table2_accent_seqmfcc40_lstm", "accent", "mfcc:40", False, "lstm",
                "Table 2, sequential MFCC(40) LSTM",
                {"accuracy": 0.16, "precision": 0.18, "recall": 0.16}),
        _single("table2_accent_mfcc40_mlp", "accent", "mfcc:40", True, "mlp",
                "Table 2, averaged MFCC(40) MLP",
                {"accuracy": 0.18, "precision": 0.16, "recall": 0.18},
                overrides={"dropout": 0.2}),
        _single("table2_accent_fivetypes_mlp", "accent", FIVE_TYPES_SPEC, True, "mlp",
                "Table 2, five feature types, MLP",
                {"accuracy": 0.21, "precision": 0.16, "recall": 0.21},
                overrides={"dropout": 0.2}),
        _single("table3_age_mlp", "age", "mfcc:40", True, "mlp",
                "Table 3, averaged MFCC(40) MLP",
                {"mae": 6.16, "rmse": 10.82}, overrides={"dropout": 0.2}),
        _single("table3_age_lstm", "age", "mfcc:30", False, "lstm",
                "Table 3, sequential MFCC(30) LSTM",
                {"mae": 6.02, "rmse": 10.26}),
        _single("table3_age_cnn", "age", "mfcc:30", False, "cnn",
                "Table 3, sequential MFCC(30) CNN",
                {"mae": 5.53, "rmse": 9.24}),
        _mtl("table4_mtl_cnnlstm_mfcc13", "mfcc:13",
             "Table 4, multi-task CNN+LSTM, sequential MFCC(13)",
             {"age": {"mae": 6.03},
              "gender": {"accuracy": 0.98, "precision": 0.98, "recall": 0.94},
              "accent": {"accuracy": 0.14, "precision": 0.14, "recall": 0.14}}),
        _mtl("table4_mtl_cnnlstm_mfcc25", "mfcc:25",
             "Table 4, multi-task CNN+LSTM, sequential MFCC(25)",
             {"age": {"mae": 5.97},
              "gender": {"accuracy": 0.98, "precision": 0.99, "recall": 0.96},
              "accent": {"accuracy": 0.15, "precision": 0.14, "recall": 0.14}}),
        _mtl("table4_mtl_cnnlstm_mfcc40", "mfcc:40",
             "Table 4, multi-task CNN+LSTM, sequential MFCC(40)",
             {"age": {"mae": 6.08},
              "gender": {"accuracy": 0.99, "precision": 0.99, "recall": 0.96},
              "accent": {"accuracy": 0.11, "precision": 0.11, "recall": 0.11}}),
        _comparison("table5_stl_vs_mtl_mfcc_mel", "mfcc:40,mel:64",
                    "Table 5, STL vs MTL MLP on MFCC(40)+Mel(64)",
                    {"MTL": {"accent": {"accuracy": 0.13}, "gender": {"accuracy": 0.97},
                             "age": {"mae": 7.71}},
                     "STL": {"accent": {"accuracy": 0.16}, "gender": {"accuracy": 0.98},
                             "age": {"mae": 6.66}}}),
        _comparison("table6_stl_vs_mtl_five_types", FIVE_TYPES_SPEC,
                    "Table 6, STL vs MTL MLP on five feature types",
                    {"MTL": {"accent": {"accuracy": 0.12}, "gender": {"accuracy": 0.97},
                             "age": {"mae": 6.17}},
                     "STL": {"accent": {"accuracy": 0.15}, "gender": {"accuracy": 0.99},
                             "age": {"mae": 6.18}}}),
        _speaker("table7_speakerid_mlp", "mfcc:40", "mlp",
                 "Table 7, speaker id, averaged MFCC(40), 4-layer MLP",
                 {"f1_macro": 0.75, "precision": 0.83, "recall": 0.79}),
        _speaker("table7_speakerid_lstm", "mfcc:40", "lstm",
                 "Table 7, speaker id, averaged MFCC(40), 2-layer LSTM",
                 {"f1_macro": 0.76, "precision": 0.86, "recall": 0.80}),
        _speaker("table7_speakerid_mfcc_mel_mlp", "mfcc:40,mel:64", "mlp",
                 "Table 7, speaker id, MFCC(40)+Mel(64), 4-layer MLP",
                 {"f1_macro": 0.80, "precision": 0.89, "recall": 0.84}),
        _speaker("table7_speakerid_mfcc_mel_lstm", "mfcc:40,mel:64", "lstm",
                 "Table 7, speaker id, MFCC(40)+Mel(64), 2-layer LSTM",
                 {"f1_macro": 0.83, "precision": 0.91, "recall": 0.86}),
        _speaker("table7_speakerid_five_mlp", FIVE_TYPES_SPEC, "mlp",
                 "Table 7, speaker id, five feature types, 4-layer MLP",
                 {"f1_macro": 0.80, "precision": 0.88, "recall": 0.84}),
        _speaker("table7_speakerid_five_lstm", FIVE_TYPES_SPEC, "lstm",
                 "Table 7, speaker id, five feature types, 2-layer LSTM",
                 {"f1_macro": 0.83, "precision": 0.91, "recall": 0.86}),
    ]
    return {p.name: p for p in presets}


PRESETS = _build_presets()


def preset_help_lines():
    lines = [f"  {name}: {preset.provenance}" for name, preset in PRESETS.items()]
    lines.append(f"  note: {REPORTED_NOTE}")
    return lines


def get_preset(name: str) -> ExperimentPreset:
    if name not in PRESETS:
        known = ", ".join(sorted(PRESETS))
        raise ConfigError(f"unknown preset {name!r}; available presets: {known}")
    return PRESETS[name]


# ---------------------------------------------------------------------------
# data preparation

def _record_targets(records, tasks, manifest: Manifest) -> dict:
    targets = {}
    if "gender" in tasks:
        targets["gender"] = np.array([gender_code(r.gender) for r in records],
                                     dtype=np.int64)
    if "accent" in tasks:
        targets["accent"] = np.array([accent_code(r.accent) for r in records],
                                     dtype=np.int64)
    if "age" in tasks:
        targets["age"] = np.array([r.age for r in records], dtype=np.float32)
    if "speaker" in tasks:
        targets["speaker"] = np.array([manifest.speaker_index(r.speaker_id)
                                       for r in records], dtype=np.int64)
    return targets


def _features_for(records, cache, averaged: bool, sequential_model: bool):
    if averaged:
        vectors = np.stack([cache.features[r.path] for r in records])
        if not sequential_model:
            return vectors.astype(np.float32)
        # averaged vectors feed sequential models as one-step sequences
        return [v.reshape(-1, 1).astype(np.float32) for v in vectors]
    if not sequential_model:
        raise ConfigError("averaged-feature models need an averaged cache")
    return [cache.features[r.path].astype(np.float32) for r in records]


def prepare_bundle(manifest: Manifest, tasks, cache, averaged: bool,
                   sequential_model: bool, oversample: bool,
                   normalization: str, seed: int):
    """Assemble train/val/test splits with targets and normalization.

    Oversampling applies to the training records only. Normalization
    statistics come from the raw (pre-oversampling) training records,
    so training and later evaluation of a checkpoint agree on one
    deterministic transform; they are applied to every split.
    """
    parts = {name: manifest.for_split(name) for name in ("train", "val", "test")}
    if not parts["train"]:
        raise DataError("manifest has no train records; assign splits first")
    if not parts["test"]:
        raise DataError("manifest has no test records")
    raw_train = parts["train"]
    if oversample:
        parts["train"] = oversample_balanced(parts["train"], seed)

    splits = {}
    for name, records in parts.items():
        if not records:
            splits[name] = None
            continue
        features = _features_for(records, cache, averaged, sequential_model)
        splits[name] = Split(features, _record_targets(records, tasks, manifest))

    if normalization == "global_standardize":
        scaler = global_standardize(
            _features_for(raw_train, cache, averaged, sequential_model))
        for split in splits.values():
            if split is not None:
                split.features = scaler.transform(split.features)

    return DataBundle(train=splits["train"], val=splits["val"], test=splits["test"])


def _model_spec(preset: ExperimentPreset, feature_rows: int, n_speakers: int,
                kind: str | None = None, tasks: tuple | None = None) -> ModelSpec:
    kind = kind or preset.model_kind
    tasks = tasks or preset.tasks
    kwargs = dict(preset.model_overrides or {})
    if kind in AVERAGED_KINDS:
        kwargs["input_dim"] = feature_rows
    else:
        kwargs["in_channels"] = feature_rows
    if "speaker" in tasks:
        kwargs["n_speakers"] = n_speakers
    return ModelSpec(kind=kind, tasks=tasks, **kwargs)


def _stl_specs(mtl_spec: ModelSpec) -> list:
    """Single-task replicas of the multi-task trunk (same widths, same
    batchnorm/dropout), so shared-seed initializations coincide."""
    return [
        ModelSpec(kind="mlp", tasks=(task,), input_dim=mtl_spec.input_dim,
                  hidden=mtl_spec.hidden, dropout=mtl_spec.dropout,
                  batchnorm=True)
        for task in mtl_spec.tasks
    ]


# ---------------------------------------------------------------------------
# runner

def run_experiment(preset_name: str, manifest: Manifest, out_dir,
                   feature_cfg: FeatureConfig | None = None,
                   train_overrides: dict | None = None,
                   jobs: int = 1, reuse_cache: bool = True) -> dict:
    """Run one preset end to end and write the report bundle.

    The bundle holds config.txt (resolved configuration and provenance),
    run.jsonl (per-epoch records), summary.txt / summary.csv (metric
    tables) and one checkpoint per trained model. Output bytes are a
    pure function of (preset, corpus, overrides).
    """
    preset = get_preset(preset_name)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    cfg = preset.train
    if train_overrides:
        cfg = replace(cfg, **train_overrides)
    feature_cfg = feature_cfg or FeatureConfig()
    kinds = parse_feature_kinds(preset.kinds)

    if preset.mode == "speaker":
        manifest = split_for_speaker_id(manifest, seed=cfg.seed)

    cache_tag = config_hash({"kinds": list(map(list, kinds)),
                             "config": feature_cfg.to_dict(),
                             "averaged": preset.averaged})
    cache_path = out_dir / f"features_{cache_tag}.vpfc"
    all_paths = sorted({r.path for r in manifest})
    hit = build_cache(cache_path, all_paths, kinds, feature_cfg,
                      averaged=preset.averaged, jobs=jobs, reuse=reuse_cache)
    logger.info("feature cache %s (%s)", cache_path.name, "hit" if hit else "rebuilt")
    cache = read_cache(cache_path)

    sequential_model = preset.model_kind not in AVERAGED_KINDS
    bundle = prepare_bundle(
        manifest, preset.tasks, cache, preset.averaged, sequential_model,
        oversample=preset.mode in ("single", "mtl", "comparison"),
        normalization=cfg.normalization, seed=cfg.seed,
    )
    feature_rows = feature_dim(kinds, feature_cfg)
    n_speakers = len(manifest.speakers)

    rows, histories, checkpoints = [], {}, {}
    if preset.mode == "comparison":
        mtl_spec = _model_spec(preset, feature_rows, n_speakers)
        report = run_comparison(_stl_specs(mtl_spec), mtl_spec, cfg, bundle)
        rows = report.rows
        histories = report.histories
        checkpoints = report.models
    else:
        spec = _model_spec(preset, feature_rows, n_speakers)
        model = build_model(spec, seed=cfg.seed)
        model, history = train(model, bundle, cfg)
        run_name = preset.mode
        histories[run_name] = history
        checkpoints[run_name] = model
        label = "MTL" if preset.mode == "mtl" else "STL"
        evaluated = spec.tasks
        if len(spec.tasks) > 1 and cfg.loss_weights is not None:
            # heads detached by zero weights were never trained
            evaluated = tuple(t for t in spec.tasks
                              if t in cfg.loss_weights.active_tasks())
        test_split = bundle.split("test")
        for task in evaluated:
            metrics = (evaluate_regression(model, test_split, bundle)
                       if task == "age"
                       else evaluate_classification(model, test_split, task))
            rows.append({"model": label, "task": task, "metrics": metrics})

    run_id = config_hash({
        "preset": preset.name,
        "train": cfg.to_dict(),
        "features": feature_cfg.to_dict(),
        "kinds": list(map(list, kinds)),
        "n_records": len(manifest),
    })
    _write_bundle(out_dir, preset, cfg, feature_cfg, run_id, rows, histories,
                  checkpoints)
    return {"run_id": run_id, "rows": rows, "out_dir": str(out_dir)}


def _write_bundle(out_dir: Path, preset, cfg, feature_cfg, run_id,
                  rows, histories, checkpoints) -> None:
    lines = [
        f"preset = {preset.name}",
        f"provenance = {preset.provenance}",
        f"reported = {json.dumps(preset.reported, sort_keys=True)}",
        f"note = {REPORTED_NOTE}",
        f"run_id = {run_id}",
        f"kinds = {preset.kinds}",
        f"averaged = {preset.averaged}",
        f"mode = {preset.mode}",
        "",
        "[features]",
    ]
    lines.extend(f"{k} = {v}" for k, v in sorted(feature_cfg.to_dict().items()))
    lines.append("")
    lines.append("[train]")
    lines.extend(f"{k} = {v}" for k, v in sorted(cfg.to_dict().items()))
    lines.append("")
    for name in sorted(checkpoints):
        lines.append(f"[model {name}]")
        lines.append(checkpoints[name].spec.to_text().rstrip())
        lines.append(f"spec_hash = {spec_hash(checkpoints[name].spec)}")
        lines.append("")
    (out_dir / "config.txt").write_text("\n".join(lines))

    write_history(out_dir / "run.jsonl", run_id, histories, rows)
    (out_dir / "summary.txt").write_text(summary_table(rows))
    write_summary_csv(out_dir / "summary.csv", rows)
    for name, model in checkpoints.items():
        save_checkpoint(out_dir / f"{name}.vpck", model)
