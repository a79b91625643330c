import logging

import numpy as np
import pytest

from voxprofile.errors import ConfigError, DataError, NumericError
from voxprofile.models import LossWeights, ModelSpec, build_model
from voxprofile.training import (DataBundle, GlobalStandardizer, Split,
                                 TrainConfig, classification_metrics,
                                 confusion_matrix, evaluate_classification,
                                 evaluate_regression, fit_age_scale,
                                 global_standardize, pad_batch,
                                 regression_metrics, run_comparison, train)

from oracles import nearest_centroid

RNG = np.random.default_rng(99)


# ---------------------------------------------------------------------------
# pad_batch and masking

def test_pad_batch_equal_lengths():
    seqs = [RNG.standard_normal((4, 6)) for _ in range(3)]
    padded, lengths = pad_batch(seqs)
    assert padded.shape == (3, 4, 6)
    assert np.array_equal(lengths, [6, 6, 6])
    assert np.allclose(padded.data[0], seqs[0].astype(np.float32))


def test_pad_batch_zero_fills():
    seqs = [RNG.standard_normal((2, 3)), RNG.standard_normal((2, 5))]
    padded, lengths = pad_batch(seqs)
    assert padded.shape == (2, 2, 5)
    assert np.array_equal(lengths, [3, 5])
    assert np.all(padded.data[0, :, 3:] == 0.0)


def test_pad_batch_rejects_mixed_rows():
    with pytest.raises(DataError):
        pad_batch([RNG.standard_normal((3, 4)), RNG.standard_normal((2, 4))])


@pytest.mark.parametrize("kind,tasks", [
    ("cnn", ("gender",)),
    ("lstm", ("gender",)),
    ("multitask_cnn_lstm", ("accent", "gender", "age")),
])
def test_masking_batched_equals_solo(kind, tasks):
    spec = ModelSpec(kind=kind, tasks=tasks, in_channels=8, lstm_hidden=12)
    model = build_model(spec, seed=0)
    short = RNG.standard_normal((8, 9)).astype(np.float32)
    long = RNG.standard_normal((8, 21)).astype(np.float32)

    solo_x, solo_len = pad_batch([short])
    solo = model.forward(solo_x, lengths=solo_len)
    batch_x, batch_len = pad_batch([short, long])
    batched = model.forward(batch_x, lengths=batch_len)
    for task in solo:
        assert np.allclose(solo[task].data[0], batched[task].data[0], atol=1e-6)


# ---------------------------------------------------------------------------
# standardization

def test_standardizer_train_stats():
    x = RNG.standard_normal((200, 7)) * 5.0 + 3.0
    scaler = global_standardize(x)
    out = scaler.transform(x)
    assert np.allclose(out.mean(axis=0), 0.0, atol=1e-6)
    assert np.allclose(out.std(axis=0), 1.0, atol=1e-6)


def test_standardizer_constant_column_maps_to_zero():
    x = RNG.standard_normal((50, 3))
    x[:, 1] = 4.2
    out = global_standardize(x).transform(x)
    assert np.all(np.isfinite(out))
    # mean roundoff divided by the 1e-8 floor leaves ~1e-7 residue
    assert np.allclose(out[:, 1], 0.0, atol=1e-5)


def test_standardizer_no_leakage():
    train = RNG.standard_normal((40, 4))
    scaler = global_standardize(train)
    mean_before = scaler.mean_.copy()
    scaler.transform(RNG.standard_normal((10, 4)) * 100.0)
    assert np.array_equal(scaler.mean_, mean_before)


def test_standardizer_sequential_matrices():
    mats = [RNG.standard_normal((5, t)) * 2.0 + 1.0 for t in (10, 20, 15)]
    scaler = GlobalStandardizer().fit(mats)
    out = scaler.transform(mats)
    stacked = np.concatenate(out, axis=1)
    assert np.allclose(stacked.mean(axis=1), 0.0, atol=1e-5)
    assert np.allclose(stacked.std(axis=1), 1.0, atol=1e-5)


def test_standardizer_sklearn_params():
    scaler = GlobalStandardizer(floor=1e-6)
    assert scaler.get_params() == {"floor": 1e-6}
    scaler.set_params(floor=1e-5)
    assert scaler.floor == 1e-5


# ---------------------------------------------------------------------------
# training loop

def _separable_bundle(n=80, dim=10, classes=2, seed=0):
    rng = np.random.default_rng(seed)
    centers = 4.0 * rng.standard_normal((classes, dim))
    labels = rng.integers(0, classes, size=n)
    x = centers[labels] + 0.3 * rng.standard_normal((n, dim))
    split = Split(x.astype(np.float32), {"speaker": labels.astype(np.int64)})
    return DataBundle(train=split), labels, x


def test_lr_zero_keeps_parameters():
    bundle, _, _ = _separable_bundle()
    spec = ModelSpec(kind="mlp", tasks=("speaker",), input_dim=10,
                     hidden=(8,), n_speakers=2)
    model = build_model(spec, seed=0)
    before = [p.data.copy() for p in model.parameters()]
    model, history = train(model, bundle, TrainConfig(epochs=1, learning_rate=0.0))
    assert len(history) == 1
    for prev, param in zip(before, model.parameters()):
        assert np.array_equal(prev, param.data)


def test_separable_data_reaches_99_accuracy():
    bundle, labels, x = _separable_bundle()
    # independent check that the construction is separable at all
    oracle_acc = (nearest_centroid(x, labels, x) == labels).mean()
    assert oracle_acc >= 0.99
    spec = ModelSpec(kind="mlp", tasks=("speaker",), input_dim=10,
                     hidden=(16,), n_speakers=2)
    model = build_model(spec, seed=0)
    model, _ = train(model, bundle, TrainConfig(epochs=50, batch_size=16, seed=0))
    metrics = evaluate_classification(model, bundle.train, "speaker")
    assert metrics.accuracy >= 0.99


def test_training_bit_reproducible():
    spec = ModelSpec(kind="mlp", tasks=("speaker",), input_dim=10,
                     hidden=(12,), n_speakers=2, dropout=0.3)
    results = []
    for _ in range(2):
        bundle, _, _ = _separable_bundle(seed=3)
        model = build_model(spec, seed=7)
        model, history = train(model, bundle,
                               TrainConfig(epochs=5, batch_size=16, seed=7))
        results.append(([p.data.copy() for p in model.parameters()], history))
    for a, b in zip(results[0][0], results[1][0]):
        assert np.array_equal(a, b)
    assert results[0][1] == results[1][1]


def test_nan_loss_aborts_with_diagnostics():
    bundle, _, _ = _separable_bundle(n=20)
    bundle.train.features[3, 2] = np.nan
    # trunk-free model: the NaN reaches the logits and poisons the loss
    spec = ModelSpec(kind="mlp", tasks=("speaker",), input_dim=10,
                     hidden=(), n_speakers=2)
    model = build_model(spec, seed=0)
    with pytest.raises(NumericError) as err:
        train(model, bundle, TrainConfig(epochs=2, batch_size=20))
    assert "epoch" in err.value.diagnostics
    assert "batch" in err.value.diagnostics
    assert "component" in err.value.diagnostics


def test_nan_loss_aborts_multitask():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((16, 6)).astype(np.float32)
    bundle = DataBundle(train=Split(x, {
        "accent": rng.integers(0, 8, 16).astype(np.int64),
        "gender": rng.integers(0, 2, 16).astype(np.int64),
        "age": np.full(16, np.nan, dtype=np.float32),
    }))
    spec = ModelSpec(kind="multitask_mlp", tasks=("accent", "gender", "age"),
                     input_dim=6, hidden=(4, 4, 4))
    with pytest.raises(NumericError) as err:
        train(build_model(spec, 0), bundle,
              TrainConfig(epochs=1, batch_size=16,
                          loss_weights=LossWeights(1, 1, 1)))
    assert err.value.diagnostics["component"] == "age"


def test_empty_split_rejected():
    split = Split(np.zeros((0, 4), dtype=np.float32), {"gender": np.zeros(0)})
    spec = ModelSpec(kind="mlp", tasks=("gender",), input_dim=4, hidden=(4,))
    with pytest.raises(ConfigError):
        train(build_model(spec, 0), DataBundle(train=split), TrainConfig(epochs=1))


def test_early_stopping_with_patience():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((60, 6)).astype(np.float32)
    y = rng.integers(0, 2, 60).astype(np.int64)  # pure noise: no signal
    bundle = DataBundle(
        train=Split(x[:40], {"gender": y[:40]}),
        val=Split(x[40:], {"gender": y[40:]}),
    )
    spec = ModelSpec(kind="mlp", tasks=("gender",), input_dim=6, hidden=(16,))
    model = build_model(spec, seed=0)
    model, history = train(model, bundle,
                           TrainConfig(epochs=200, batch_size=16, patience=3))
    assert len(history) < 200


# ---------------------------------------------------------------------------
# metrics

def test_perfect_predictor_metrics():
    y = np.array([0, 1, 2, 0, 1, 2])
    m = classification_metrics(y, y, 3)
    assert m.accuracy == m.precision_macro == m.recall_macro == m.f1_macro == 1.0
    assert np.array_equal(m.confusion, np.diag([2, 2, 2]))


def test_hand_computed_confusion_example():
    # confusion [[1,1],[0,2]]: truth 0 -> pred 0,1; truth 1 -> pred 1,1
    y_true = np.array([0, 0, 1, 1])
    y_pred = np.array([0, 1, 1, 1])
    assert np.array_equal(confusion_matrix(y_true, y_pred, 2), [[1, 1], [0, 2]])
    m = classification_metrics(y_true, y_pred, 2)
    assert m.accuracy == pytest.approx(0.75)
    assert m.precision_macro == pytest.approx((1.0 + 2.0 / 3.0) / 2)  # 5/6
    assert m.recall_macro == pytest.approx(0.75)
    f1_0 = 2 * 1.0 * 0.5 / 1.5
    f1_1 = 2 * (2 / 3) * 1.0 / (2 / 3 + 1.0)
    assert m.f1_macro == pytest.approx((f1_0 + f1_1) / 2)


def test_absent_class_excluded_and_logged(caplog):
    y_true = np.array([0, 0, 1])
    y_pred = np.array([0, 0, 1])
    with caplog.at_level(logging.INFO, logger="voxprofile.training"):
        m = classification_metrics(y_true, y_pred, 4)
    assert m.excluded_classes == (2, 3)
    assert m.precision_macro == 1.0
    assert any("excluded" in rec.message for rec in caplog.records)


def test_row_sums_equal_support():
    y_true = RNG.integers(0, 5, 100)
    y_pred = RNG.integers(0, 5, 100)
    matrix = confusion_matrix(y_true, y_pred, 5)
    assert np.array_equal(matrix.sum(axis=1), np.bincount(y_true, minlength=5))


def test_regression_metrics_values():
    m = regression_metrics([0.0, 0.0], [3.0, 4.0])
    assert m.mae == pytest.approx(3.5)
    assert m.rmse == pytest.approx(np.sqrt(12.5))
    zero = regression_metrics([1.0, 2.0], [1.0, 2.0])
    assert zero.mae == 0.0 and zero.rmse == 0.0


def test_mae_never_exceeds_rmse():
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        errors = rng.standard_normal(rng.integers(1, 30)) * rng.uniform(0.1, 10)
        m = regression_metrics(np.zeros_like(errors), errors)
        assert m.mae <= m.rmse + 1e-12


def test_age_scale_round_trip():
    ages = np.array([25.0, 30.0, 60.0, 45.0], dtype=np.float32)
    bundle = DataBundle(train=Split(np.zeros((4, 2), dtype=np.float32),
                                    {"age": ages}))
    fit_age_scale(bundle)
    std = bundle.train.targets["age_std"]
    assert np.allclose(bundle.age_to_years(std), ages, atol=1e-4)


def test_evaluate_regression_reports_years():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((50, 6)).astype(np.float32)
    ages = (40.0 + 10.0 * x[:, 0]).astype(np.float32)
    bundle = DataBundle(train=Split(x, {"age": ages}))
    spec = ModelSpec(kind="mlp", tasks=("age",), input_dim=6, hidden=(16,))
    model = build_model(spec, seed=1)
    model, _ = train(model, bundle, TrainConfig(epochs=120, batch_size=16, seed=1))
    metrics = evaluate_regression(model, bundle.train, bundle)
    assert metrics.mae < 4.0  # linear target is learnable into the right range
    assert metrics.mae <= metrics.rmse


# ---------------------------------------------------------------------------
# stl vs mtl comparison

def _profiling_bundle(n=96, dim=24, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, dim)).astype(np.float32)
    accent = rng.integers(0, 8, n).astype(np.int64)
    gender = rng.integers(0, 2, n).astype(np.int64)
    age = rng.uniform(20, 60, n).astype(np.float32)
    half = n // 2
    return DataBundle(
        train=Split(x[:half], {"accent": accent[:half], "gender": gender[:half],
                               "age": age[:half]}),
        test=Split(x[half:], {"accent": accent[half:], "gender": gender[half:],
                              "age": age[half:]}),
    )


def test_mtl_weights_100_degenerates_to_stl_bitwise():
    bundle = _profiling_bundle()
    mtl_spec = ModelSpec(kind="multitask_mlp", tasks=("accent", "gender", "age"),
                         input_dim=24, hidden=(16, 16, 16), dropout=0.2)
    stl_spec = ModelSpec(kind="mlp", tasks=("accent",), input_dim=24,
                         hidden=(16, 16, 16), dropout=0.2, batchnorm=True)
    cfg = TrainConfig(epochs=4, batch_size=16, seed=13,
                      loss_weights=LossWeights(1.0, 0.0, 0.0))
    report = run_comparison([stl_spec], mtl_spec, cfg, bundle)
    stl_row = next(r for r in report.rows if r["model"] == "STL")
    mtl_row = next(r for r in report.rows if r["model"] == "MTL")
    assert stl_row["task"] == mtl_row["task"] == "accent"
    assert stl_row["metrics"].to_dict() == mtl_row["metrics"].to_dict()
    assert np.array_equal(stl_row["metrics"].confusion, mtl_row["metrics"].confusion)
    assert report.histories["stl_accent"] == report.histories["mtl"]
    stl_params = report.models["stl_accent"].parameters()
    mtl_params = report.models["mtl"].parameters()
    for a, b in zip(stl_params[:-2], mtl_params[: len(stl_params) - 2]):
        assert np.array_equal(a.data, b.data)


def test_comparison_report_shape():
    bundle = _profiling_bundle(seed=2)
    mtl_spec = ModelSpec(kind="multitask_mlp", tasks=("accent", "gender", "age"),
                         input_dim=24, hidden=(8, 8, 8))
    stl_specs = [
        ModelSpec(kind="mlp", tasks=(t,), input_dim=24, hidden=(8, 8, 8),
                  batchnorm=True)
        for t in ("accent", "gender", "age")
    ]
    cfg = TrainConfig(epochs=2, batch_size=16, seed=0,
                      loss_weights=LossWeights(1, 1, 1))
    report = run_comparison(stl_specs, mtl_spec, cfg, bundle)
    assert len(report.rows) == 6  # 3 tasks x {STL, MTL}
    assert {(r["model"], r["task"]) for r in report.rows} == {
        (m, t) for m in ("STL", "MTL") for t in ("accent", "gender", "age")
    }


def test_comparison_reproducible():
    def run_once():
        bundle = _profiling_bundle(seed=5)
        mtl_spec = ModelSpec(kind="multitask_mlp",
                             tasks=("accent", "gender", "age"),
                             input_dim=24, hidden=(8, 8, 8))
        cfg = TrainConfig(epochs=2, batch_size=16, seed=21,
                          loss_weights=LossWeights(1, 1, 1))
        return run_comparison([], mtl_spec, cfg, bundle)

    a, b = run_once(), run_once()
    assert [r["metrics"].to_dict() for r in a.rows] == \
           [r["metrics"].to_dict() for r in b.rows]
    assert a.histories == b.histories


def test_param_snapshot_restored_from_best_val():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((40, 5)).astype(np.float32)
    y = (x[:, 0] > 0).astype(np.int64)
    bundle = DataBundle(train=Split(x[:30], {"gender": y[:30]}),
                        val=Split(x[30:], {"gender": y[30:]}))
    spec = ModelSpec(kind="mlp", tasks=("gender",), input_dim=5, hidden=(8,))
    model = build_model(spec, seed=0)
    model, history = train(model, bundle, TrainConfig(epochs=30, batch_size=10))
    best_epoch = min((h["val_loss"], h["epoch"]) for h in history)[1]
    assert history[best_epoch]["val_loss"] == min(h["val_loss"] for h in history)
