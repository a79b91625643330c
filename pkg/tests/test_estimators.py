import numpy as np
import pytest
from sklearn.base import clone
from sklearn.pipeline import Pipeline

from voxprofile.dataset import gender_code
from voxprofile.errors import DataError
from voxprofile.estimators import (FeatureExtractor, GlobalStandardizer,
                                   MultiTaskNet, NetClassifier, NetRegressor)

RNG = np.random.default_rng(2024)


def _blobs(n=60, dim=8, classes=3, seed=0):
    rng = np.random.default_rng(seed)
    centers = 5.0 * rng.standard_normal((classes, dim))
    y = rng.integers(0, classes, n)
    x = (centers[y] + 0.4 * rng.standard_normal((n, dim))).astype(np.float32)
    return x, y


def test_classifier_fit_predict_score():
    x, y = _blobs()
    clf = NetClassifier(kind="mlp", hidden=(16,), epochs=40, batch_size=16, seed=0)
    clf.fit(x, y)
    assert clf.score(x, y) >= 0.95
    probs = clf.predict_proba(x)
    assert probs.shape == (len(x), 3)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)


def test_classifier_arbitrary_labels():
    x, y = _blobs(classes=2)
    labels = np.array(["male", "female"])[y]
    clf = NetClassifier(hidden=(8,), epochs=30, batch_size=16).fit(x, labels)
    assert set(clf.predict(x)) <= {"male", "female"}
    assert list(clf.classes_) == ["female", "male"]


def test_classifier_is_cloneable():
    clf = NetClassifier(kind="lstm", lstm_hidden=32, epochs=5)
    params = clf.get_params()
    assert params["lstm_hidden"] == 32
    cloned = clone(clf)
    assert cloned.get_params() == params


def test_classifier_rejects_single_class():
    x, _ = _blobs()
    with pytest.raises(DataError):
        NetClassifier().fit(x, np.zeros(len(x)))


def test_regressor_learns_linear_target():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((80, 5)).astype(np.float32)
    y = 30.0 + 8.0 * x[:, 0]
    reg = NetRegressor(hidden=(16,), epochs=150, batch_size=16, seed=0).fit(x, y)
    pred = reg.predict(x)
    assert np.abs(pred - y).mean() < 4.0
    assert reg.score(x, y) > 0.5  # sklearn R^2 through RegressorMixin


def test_multitask_fit_predict():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((60, 12)).astype(np.float32)
    y = {
        "accent": rng.integers(0, 8, 60),
        "gender": rng.integers(0, 2, 60),
        "age": rng.uniform(20, 60, 60),
    }
    net = MultiTaskNet(hidden=(8, 8, 8), epochs=3, batch_size=16,
                       loss_weights=(1.0, 1.0, 0.01))
    net.fit(x, y)
    out = net.predict(x)
    assert set(out) == {"accent", "gender", "age"}
    assert out["accent"].shape == (60,)
    assert out["age"].dtype.kind == "f"
    assert np.all((out["age"] > 0) & (out["age"] < 120))


def test_multitask_needs_two_tasks():
    x = RNG.standard_normal((10, 4)).astype(np.float32)
    with pytest.raises(DataError):
        MultiTaskNet().fit(x, {"gender": np.zeros(10, dtype=int)})


def test_feature_extractor_transform(mini_corpus):
    from voxprofile.audio_io import read_audio
    clips = [read_audio(r.path) for r in mini_corpus.manifest.records[:6]]
    fx = FeatureExtractor(kinds="mfcc:13,chroma", averaged=True)
    out = fx.transform(clips)
    assert out.shape == (6, 25)
    seq = FeatureExtractor(kinds="mfcc:13", averaged=False).transform(clips)
    assert isinstance(seq, list) and seq[0].shape[0] == 13
    assert fx.get_params()["kinds"] == "mfcc:13,chroma"


def test_pipeline_composition(mini_corpus):
    from voxprofile.audio_io import read_audio
    records = mini_corpus.manifest.records
    clips = [read_audio(r.path) for r in records]
    labels = np.array([gender_code(r.gender) for r in records])
    pipeline = Pipeline([
        ("features", FeatureExtractor(kinds="mfcc:20", averaged=True)),
        ("scale", GlobalStandardizer()),
        ("net", NetClassifier(hidden=(16,), epochs=30, batch_size=16, seed=0)),
    ])
    pipeline.fit(clips, labels)
    assert pipeline.score(clips, labels) >= 0.9


def test_sequential_classifier_on_matrices():
    rng = np.random.default_rng(3)
    mats, labels = [], []
    for i in range(24):
        label = i % 2
        base = np.zeros((6, 12), dtype=np.float32)
        base[label * 3] = 5.0
        mats.append(base + 0.1 * rng.standard_normal((6, 12)).astype(np.float32))
        labels.append(label)
    clf = NetClassifier(kind="cnn", epochs=30, batch_size=8, seed=1)
    clf.fit(mats, np.array(labels))
    assert clf.score(mats, np.array(labels)) >= 0.9
