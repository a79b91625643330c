"""Scikit-learn style estimators wrapping the functional core.

These let the toolkit compose with sklearn pipelines and model
selection: :class:`FeatureExtractor` is a stateless transformer over
decoded clips, :class:`GlobalStandardizer` (re-exported from
:mod:`voxprofile.training`) is a fitted transformer, and the Net
estimators wrap model building plus the seeded training loop behind
``fit``/``predict``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, TransformerMixin

from .autodiff import softmax
from .dsp import FeatureConfig, extract_set
from .errors import DataError
from .models import LossWeights, ModelSpec, build_model
from .training import (DataBundle, GlobalStandardizer, Split, TrainConfig,
                       predict as _predict_split, train)

__all__ = [
    "FeatureExtractor",
    "GlobalStandardizer",
    "NetClassifier",
    "NetRegressor",
    "MultiTaskNet",
]

_AVERAGED_KINDS = ("mlp", "multitask_mlp")


def _as_features(X):
    """Validate estimator input: [N, D] array or list of [C, T] matrices."""
    if isinstance(X, (list, tuple)):
        mats = [np.asarray(m, dtype=np.float32) for m in X]
        if not mats or any(m.ndim != 2 for m in mats):
            raise DataError("sequential input must be a list of 2-D matrices")
        return list(mats), True
    X = np.asarray(X, dtype=np.float32)
    if X.ndim != 2:
        raise DataError(f"expected a 2-D feature array, got shape {X.shape}")
    return X, False


class FeatureExtractor(BaseEstimator, TransformerMixin):
    """Extract a configurable feature set from decoded audio clips.

    ``transform`` maps a sequence of :class:`~voxprofile.audio_io.AudioClip`
    to an [N, D] array (averaged) or a list of [D, T] matrices.
    """

    def __init__(self, kinds="mfcc:40", averaged=True, sample_rate=16000,
                 n_fft=512, hop_length=160, win_length=400):
        self.kinds = kinds
        self.averaged = averaged
        self.sample_rate = sample_rate
        self.n_fft = n_fft
        self.hop_length = hop_length
        self.win_length = win_length

    def _config(self) -> FeatureConfig:
        return FeatureConfig(sample_rate=self.sample_rate, n_fft=self.n_fft,
                             hop_length=self.hop_length, win_length=self.win_length)

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        cfg = self._config()
        features = [extract_set(clip, self.kinds, cfg, averaged=self.averaged).values
                    for clip in X]
        if self.averaged:
            return np.stack(features).astype(np.float32)
        return [f.astype(np.float32) for f in features]


class _NetBase(BaseEstimator):
    def __init__(self, kind="mlp", hidden=(), conv_channels=(32, 64),
                 lstm_hidden=128, lstm_layers=2, dropout=0.0, batchnorm=False,
                 epochs=60, batch_size=32, learning_rate=1e-3, seed=0):
        self.kind = kind
        self.hidden = hidden
        self.conv_channels = conv_channels
        self.lstm_hidden = lstm_hidden
        self.lstm_layers = lstm_layers
        self.dropout = dropout
        self.batchnorm = batchnorm
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed

    def _spec_kwargs(self, features, sequential):
        rows = features[0].shape[0] if sequential else features.shape[1]
        kwargs = dict(kind=self.kind, hidden=tuple(self.hidden),
                      conv_channels=tuple(self.conv_channels),
                      lstm_hidden=self.lstm_hidden, lstm_layers=self.lstm_layers,
                      dropout=self.dropout, batchnorm=self.batchnorm)
        if self.kind in _AVERAGED_KINDS:
            if sequential:
                raise DataError(f"{self.kind} expects an [N, D] feature array")
            kwargs["input_dim"] = rows
        else:
            kwargs["in_channels"] = rows
        return kwargs

    def _train_config(self, **extra) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           learning_rate=self.learning_rate, seed=self.seed,
                           **extra)

    def _sequentialize(self, features, sequential):
        if sequential or self.kind in _AVERAGED_KINDS:
            return features
        return [v.reshape(-1, 1) for v in features]


class NetClassifier(_NetBase, ClassifierMixin):
    """Single-label classifier over arbitrary class sets."""

    def fit(self, X, y):
        features, sequential = _as_features(X)
        y = np.asarray(y)
        self.classes_, indices = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise DataError("need at least 2 classes to fit a classifier")
        spec = ModelSpec(tasks=("speaker",), n_speakers=len(self.classes_),
                         **self._spec_kwargs(features, sequential))
        split = Split(self._sequentialize(features, sequential),
                      {"speaker": indices.astype(np.int64)})
        self.model_, self.history_ = train(
            build_model(spec, seed=self.seed), DataBundle(train=split),
            self._train_config(),
        )
        return self

    def decision_function(self, X):
        features, sequential = _as_features(X)
        split = Split(self._sequentialize(features, sequential))
        return _predict_split(self.model_, split, ("speaker",))["speaker"]

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        return self.classes_[self.decision_function(X).argmax(axis=1)]


class NetRegressor(_NetBase, RegressorMixin):
    """Scalar regressor; targets are z-scored internally for training."""

    def fit(self, X, y):
        features, sequential = _as_features(X)
        spec = ModelSpec(tasks=("age",), **self._spec_kwargs(features, sequential))
        split = Split(self._sequentialize(features, sequential),
                      {"age": np.asarray(y, dtype=np.float32)})
        self.bundle_ = DataBundle(train=split)
        self.model_, self.history_ = train(
            build_model(spec, seed=self.seed), self.bundle_, self._train_config(),
        )
        return self

    def predict(self, X):
        features, sequential = _as_features(X)
        split = Split(self._sequentialize(features, sequential))
        raw = _predict_split(self.model_, split, ("age",))["age"].reshape(-1)
        return self.bundle_.age_to_years(raw)


class MultiTaskNet(_NetBase):
    """Joint accent/gender/age model with a weighted combined loss.

    ``fit`` takes a dict of targets keyed by task name; ``predict``
    returns a dict of class indices (classification) and years (age).
    """

    def __init__(self, kind="multitask_mlp", hidden=(), conv_channels=(32, 64),
                 lstm_hidden=128, lstm_layers=2, dropout=0.0, batchnorm=False,
                 epochs=60, batch_size=32, learning_rate=1e-3, seed=0,
                 loss_weights=(1.0, 1.0, 1.0)):
        super().__init__(kind=kind, hidden=hidden, conv_channels=conv_channels,
                         lstm_hidden=lstm_hidden, lstm_layers=lstm_layers,
                         dropout=dropout, batchnorm=batchnorm, epochs=epochs,
                         batch_size=batch_size, learning_rate=learning_rate,
                         seed=seed)
        self.loss_weights = loss_weights

    def fit(self, X, y):
        features, sequential = _as_features(X)
        tasks = tuple(t for t in ("accent", "gender", "age") if t in y)
        if len(tasks) < 2:
            raise DataError(f"multitask fit needs >= 2 of accent/gender/age, got {tasks}")
        targets = {}
        for task in tasks:
            dtype = np.float32 if task == "age" else np.int64
            targets[task] = np.asarray(y[task], dtype=dtype)
        spec = ModelSpec(tasks=tasks, **self._spec_kwargs(features, sequential))
        split = Split(self._sequentialize(features, sequential), targets)
        self.bundle_ = DataBundle(train=split)
        cfg = self._train_config(loss_weights=LossWeights(*self.loss_weights))
        self.model_, self.history_ = train(
            build_model(spec, seed=self.seed), self.bundle_, cfg,
        )
        return self

    def predict(self, X):
        features, sequential = _as_features(X)
        split = Split(self._sequentialize(features, sequential))
        raw = _predict_split(self.model_, split, self.model_.spec.tasks)
        out = {}
        for task, values in raw.items():
            if task == "age":
                out[task] = self.bundle_.age_to_years(values.reshape(-1))
            else:
                out[task] = values.argmax(axis=1)
        return out
