"""Seeded training loops, padding/batching, normalization and metrics.

A run is fully determined by (data, model spec, TrainConfig): weight
init, shuffling and dropout masks all derive from ``TrainConfig.seed``,
so repeated runs are bit-identical. Oversampling and normalization
statistics are computed from the training split only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import autodiff as ad
from .autodiff import Adam, Tensor
from .errors import ConfigError, DataError, NumericError
from .models import LossWeights, ModelSpec, build_model, combined_loss, named_arrays

logger = logging.getLogger(__name__)

EVAL_BATCH = 256

N_CLASSES = {"accent": 8, "gender": 2}


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training run."""

    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    loss_weights: LossWeights | None = None
    patience: int | None = None
    age_loss: str = "mse"                 # mse | l1
    normalization: str = "none"           # none | global_standardize
    feature_spec: str | None = None       # recorded in reports

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.age_loss not in ("mse", "l1"):
            raise ConfigError(f"age_loss must be mse or l1, got {self.age_loss!r}")
        if self.normalization not in ("none", "global_standardize"):
            raise ConfigError(f"unknown normalization {self.normalization!r}")

    def to_dict(self) -> dict:
        d = {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "patience": self.patience,
            "age_loss": self.age_loss,
            "normalization": self.normalization,
            "feature_spec": self.feature_spec,
        }
        if self.loss_weights is not None:
            d["loss_weights"] = [self.loss_weights.accent, self.loss_weights.gender,
                                 self.loss_weights.age]
        return d


@dataclass(frozen=True)
class Metrics:
    """Evaluation results; classification and regression fields are
    mutually optional."""

    accuracy: float | None = None
    precision_macro: float | None = None
    recall_macro: float | None = None
    f1_macro: float | None = None
    mae: float | None = None
    rmse: float | None = None
    confusion: np.ndarray | None = None
    excluded_classes: tuple = ()

    def to_dict(self) -> dict:
        out = {}
        for key in ("accuracy", "precision_macro", "recall_macro", "f1_macro",
                    "mae", "rmse"):
            value = getattr(self, key)
            if value is not None:
                out[key] = round(float(value), 6)
        return out


@dataclass
class Split:
    """Features plus aligned targets for one data split.

    ``features`` is an [N, D] float32 array for averaged features, or a
    list of [C, T] float32 matrices for sequential ones.
    """

    features: object
    targets: dict = field(default_factory=dict)

    def __len__(self):
        return (len(self.features) if isinstance(self.features, list)
                else self.features.shape[0])

    @property
    def sequential(self) -> bool:
        return isinstance(self.features, list)


@dataclass
class DataBundle:
    train: Split
    val: Split | None = None
    test: Split | None = None
    age_mean: float | None = None
    age_std: float | None = None

    def split(self, name: str) -> Split:
        part = getattr(self, name)
        if part is None:
            raise ConfigError(f"data bundle has no {name} split")
        return part

    def age_to_years(self, standardized) -> np.ndarray:
        if self.age_mean is None:
            return np.asarray(standardized)
        return np.asarray(standardized) * self.age_std + self.age_mean


def fit_age_scale(bundle: DataBundle) -> None:
    """Z-score age targets on the training split; metrics invert later."""
    ages = np.asarray(bundle.train.targets["age"], dtype=np.float64)
    mean = float(ages.mean())
    std = float(ages.std())
    if std < 1e-8:
        std = 1.0
    bundle.age_mean, bundle.age_std = mean, std
    for part in (bundle.train, bundle.val, bundle.test):
        if part is not None and "age" in part.targets:
            part.targets["age_std"] = (
                (np.asarray(part.targets["age"], dtype=np.float64) - mean) / std
            ).astype(np.float32)


def pad_batch(sequences):
    """Zero-pad [C, T] feature matrices on the time axis to the batch max.

    Returns (Tensor[B, C, Tmax] float32, lengths int64). Consumers mask
    by length, so an item's output does not depend on its batch mates.
    """
    arrays = [np.asarray(getattr(s, "values", s), dtype=np.float32)
              for s in sequences]
    if not arrays:
        raise DataError("cannot pad an empty batch")
    coeffs = arrays[0].shape[0]
    for a in arrays:
        if a.ndim != 2 or a.shape[0] != coeffs:
            raise DataError(
                f"inconsistent coefficient rows in batch: {a.shape} vs {coeffs}"
            )
    lengths = np.array([a.shape[1] for a in arrays], dtype=np.int64)
    t_max = int(lengths.max())
    padded = np.zeros((len(arrays), coeffs, t_max), dtype=np.float32)
    for i, a in enumerate(arrays):
        padded[i, :, : a.shape[1]] = a
    return Tensor(padded), lengths


class GlobalStandardizer(BaseEstimator, TransformerMixin):
    """Per-coefficient standardization with statistics from one split.

    Works on [N, D] arrays or lists of [D, T] matrices (statistics over
    all frames). Standard deviations are floored to keep constant
    coefficients finite.
    """

    def __init__(self, floor: float = 1e-8):
        self.floor = floor

    def fit(self, X, y=None):
        if isinstance(X, list):
            stacked = np.concatenate(
                [np.asarray(getattr(m, "values", m), dtype=np.float64) for m in X],
                axis=1,
            )
            mean, std = stacked.mean(axis=1), stacked.std(axis=1)
        else:
            X = np.asarray(X, dtype=np.float64)
            mean, std = X.mean(axis=0), X.std(axis=0)
        self.mean_ = mean
        self.scale_ = np.maximum(std, self.floor)
        return self

    def transform(self, X):
        if isinstance(X, list):
            return [
                ((np.asarray(getattr(m, "values", m), dtype=np.float64)
                  - self.mean_[:, None]) / self.scale_[:, None]).astype(np.float32)
                for m in X
            ]
        X = np.asarray(X, dtype=np.float64)
        return ((X - self.mean_) / self.scale_).astype(np.float32)


def global_standardize(train_features) -> GlobalStandardizer:
    """Fit a :class:`GlobalStandardizer` on training features only."""
    return GlobalStandardizer().fit(train_features)


# ---------------------------------------------------------------------------
# forward helpers

def _forward_batch(model, split: Split, idx, training: bool, rng, active):
    if split.sequential:
        x, lengths = pad_batch([split.features[i] for i in idx])
        return model.forward(x, lengths=lengths, training=training, rng=rng,
                             active=active)
    x = Tensor(split.features[idx])
    return model.forward(x, training=training, rng=rng, active=active)


def _task_loss(task: str, outputs, split: Split, idx, cfg: TrainConfig):
    logits = outputs[task]
    if task == "age":
        target = split.targets.get("age_std", split.targets["age"])[idx]
        loss_fn = ad.mse_loss if cfg.age_loss == "mse" else ad.l1_loss
        return loss_fn(logits, target)
    return ad.softmax_cross_entropy(logits, split.targets[task][idx])


def _active_tasks(model, cfg: TrainConfig):
    tasks = model.spec.tasks
    if len(tasks) == 1:
        return tasks, None
    weights = cfg.loss_weights or LossWeights()
    active = tuple(t for t in tasks if getattr(weights, t) > 0)
    if not active:
        raise ConfigError("loss weights detach every task of the model")
    return active, weights


def _epoch_loss(model, split: Split, cfg: TrainConfig, active, weights):
    """Eval-mode loss over a whole split (validation objective)."""
    total, count = 0.0, 0
    for start in range(0, len(split), EVAL_BATCH):
        idx = np.arange(start, min(start + EVAL_BATCH, len(split)))
        outputs = _forward_batch(model, split, idx, False, None, active)
        losses = {t: _task_loss(t, outputs, split, idx, cfg) for t in active}
        if weights is None:
            batch_loss = losses[active[0]]
        else:
            batch_loss = combined_loss(losses.get("accent"), losses.get("gender"),
                                       losses.get("age"), weights)
        total += float(batch_loss.data) * len(idx)
        count += len(idx)
    return total / count


def train(model, data: DataBundle, cfg: TrainConfig):
    """Run the seeded loop; returns (model, history).

    History holds one record per epoch (train/val losses and per-task
    train losses). When a validation split exists the parameters from
    the best validation epoch are restored on exit, and ``patience``
    epochs without improvement stop the run early.
    """
    train_split = data.split("train")
    if len(train_split) == 0:
        raise ConfigError("training split is empty")
    active, weights = _active_tasks(model, cfg)
    if "age" in active and data.age_mean is None:
        fit_age_scale(data)

    seed_seq = np.random.SeedSequence(cfg.seed)
    shuffle_rng, dropout_rng = (np.random.default_rng(s) for s in seed_seq.spawn(2))
    optimizer = Adam(model.parameters(), lr=cfg.learning_rate)

    history = []
    best_val = np.inf
    best_state = None
    stale = 0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(train_split))
        epoch_total = 0.0
        task_totals = dict.fromkeys(active, 0.0)
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            outputs = _forward_batch(model, train_split, idx, True, dropout_rng, active)
            losses = {t: _task_loss(t, outputs, train_split, idx, cfg) for t in active}
            try:
                if weights is None:
                    loss = losses[active[0]]
                    if not np.isfinite(loss.data):
                        raise NumericError(
                            f"{active[0]} loss is not finite",
                            {"component": active[0], "value": float(loss.data)},
                        )
                else:
                    loss = combined_loss(losses.get("accent"), losses.get("gender"),
                                         losses.get("age"), weights)
            except NumericError as err:
                err.diagnostics.update(epoch=epoch, batch=start // cfg.batch_size)
                logger.error("aborting: non-finite loss %s", err.diagnostics)
                raise
            ad.backward(loss)
            optimizer.step()
            optimizer.zero_grad()
            epoch_total += float(loss.data) * len(idx)
            for t in active:
                task_totals[t] += float(losses[t].data) * len(idx)

        record = {
            "epoch": epoch,
            "train_loss": epoch_total / len(train_split),
            "task_losses": {t: task_totals[t] / len(train_split) for t in active},
            "val_loss": None,
        }
        if data.val is not None and len(data.val):
            val_loss = _epoch_loss(model, data.val, cfg, active, weights)
            record["val_loss"] = val_loss
            if val_loss < best_val:
                best_val = val_loss
                best_state = [arr.copy() for _, arr in named_arrays(model)]
                stale = 0
            else:
                stale += 1
        history.append(record)
        if cfg.patience is not None and stale > cfg.patience:
            logger.info("early stop at epoch %d (patience %d)", epoch, cfg.patience)
            break

    if best_state is not None:
        for (_, arr), saved in zip(named_arrays(model), best_state):
            arr[...] = saved
    return model, history


# ---------------------------------------------------------------------------
# metrics

def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    matrix = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(np.asarray(y_true, dtype=np.int64),
                    np.asarray(y_pred, dtype=np.int64)):
        matrix[t, p] += 1
    return matrix


def classification_metrics(y_true, y_pred, n_classes: int) -> Metrics:
    """Accuracy plus macro precision/recall/F1 from first principles.

    Empty denominators score 0; classes absent from both truth and
    prediction are excluded from the macro averages and logged.
    """
    matrix = confusion_matrix(y_true, y_pred, n_classes)
    total = matrix.sum()
    if total == 0:
        raise DataError("cannot compute metrics over an empty split")
    diag = np.diag(matrix).astype(np.float64)
    support = matrix.sum(axis=1).astype(np.float64)
    predicted = matrix.sum(axis=0).astype(np.float64)

    present = (support > 0) | (predicted > 0)
    excluded = tuple(int(c) for c in np.flatnonzero(~present))
    if excluded:
        logger.info("classes %s absent from truth and prediction; "
                    "excluded from macro averages", excluded)

    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, diag / np.where(predicted > 0, predicted, 1), 0.0)
        recall = np.where(support > 0, diag / np.where(support > 0, support, 1), 0.0)
    f1 = np.where(precision + recall > 0,
                  2 * precision * recall / np.where(precision + recall > 0,
                                                    precision + recall, 1), 0.0)
    return Metrics(
        accuracy=float(diag.sum() / total),
        precision_macro=float(precision[present].mean()),
        recall_macro=float(recall[present].mean()),
        f1_macro=float(f1[present].mean()),
        confusion=matrix,
        excluded_classes=excluded,
    )


def regression_metrics(y_true, y_pred) -> Metrics:
    errors = np.asarray(y_pred, dtype=np.float64) - np.asarray(y_true, dtype=np.float64)
    return Metrics(mae=float(np.abs(errors).mean()),
                   rmse=float(np.sqrt((errors ** 2).mean())))


def predict(model, split: Split, tasks=None) -> dict:
    """Eval-mode forward over a split; returns {task: raw outputs}."""
    tasks = tuple(tasks) if tasks else model.spec.tasks
    collected = {t: [] for t in tasks}
    for start in range(0, len(split), EVAL_BATCH):
        idx = np.arange(start, min(start + EVAL_BATCH, len(split)))
        outputs = _forward_batch(model, split, idx, False, None, tasks)
        for t in tasks:
            collected[t].append(outputs[t].data)
    return {t: np.concatenate(chunks) for t, chunks in collected.items()}


def task_class_count(model, task: str) -> int:
    if task == "speaker":
        return model.spec.n_speakers
    return N_CLASSES[task]


def evaluate_classification(model, split: Split, task: str) -> Metrics:
    outputs = predict(model, split, (task,))[task]
    return classification_metrics(split.targets[task], outputs.argmax(axis=1),
                                  task_class_count(model, task))


def evaluate_regression(model, split: Split, bundle: DataBundle) -> Metrics:
    outputs = predict(model, split, ("age",))["age"].reshape(-1)
    return regression_metrics(split.targets["age"], bundle.age_to_years(outputs))


def evaluate_tasks(model, split: Split, bundle: DataBundle) -> dict:
    return {
        task: (evaluate_regression(model, split, bundle) if task == "age"
               else evaluate_classification(model, split, task))
        for task in model.spec.tasks
    }


# ---------------------------------------------------------------------------
# controlled single-task vs multi-task comparison

@dataclass
class ComparisonReport:
    rows: list            # {"model": "STL"|"MTL", "task": ..., "metrics": Metrics}
    histories: dict       # run name -> history
    models: dict          # run name -> trained model

    def table_rows(self):
        for row in self.rows:
            yield row["model"], row["task"], row["metrics"]


def run_comparison(stl_specs, mtl_spec: ModelSpec, cfg: TrainConfig,
                   data: DataBundle, eval_split: str = "test") -> ComparisonReport:
    """Train one model per task plus one multi-task model, same seed.

    Single-task specs must replicate the multi-task trunk so that the
    shared-seed initialization is identical; heads are drawn after the
    trunk, so per-task parameters line up too.
    """
    if "age" in mtl_spec.tasks:
        fit_age_scale(data)
    split = data.split(eval_split)

    def task_metrics(model, task):
        if task == "age":
            return evaluate_regression(model, split, data)
        return evaluate_classification(model, split, task)

    rows = []
    histories = {}
    models = {}
    for spec in stl_specs:
        task = spec.tasks[0]
        model = build_model(spec, seed=cfg.seed)
        model, history = train(model, data, cfg)
        histories[f"stl_{task}"] = history
        models[f"stl_{task}"] = model
        rows.append({"model": "STL", "task": task, "metrics": task_metrics(model, task)})

    mtl_model = build_model(mtl_spec, seed=cfg.seed)
    mtl_model, history = train(mtl_model, data, cfg)
    histories["mtl"] = history
    models["mtl"] = mtl_model
    active, _ = _active_tasks(mtl_model, cfg)
    for task in active:
        rows.append({"model": "MTL", "task": task,
                     "metrics": task_metrics(mtl_model, task)})
    return ComparisonReport(rows=rows, histories=histories, models=models)
