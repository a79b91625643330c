import numpy as np
import pytest

from voxprofile import autodiff as ad
from voxprofile.autodiff import Tensor, backward
from voxprofile.errors import ConfigError, DataError, NumericError, ValidationError
from voxprofile.models import (LossWeights, ModelSpec, build_model,
                               build_multitask_mlp, build_single_lstm,
                               combined_loss, expected_param_count,
                               load_checkpoint, param_count, save_checkpoint,
                               spec_hash)

RNG = np.random.default_rng(55)


def _mlp_spec(**kw):
    base = dict(kind="mlp", tasks=("gender",), input_dim=40)
    base.update(kw)
    return ModelSpec(**base)


# ---------------------------------------------------------------------------
# spec validation

def test_spec_task_arity():
    with pytest.raises(ConfigError):
        ModelSpec(kind="multitask_mlp", tasks=("gender",), input_dim=8)
    with pytest.raises(ConfigError):
        ModelSpec(kind="mlp", tasks=("gender", "age"), input_dim=8)
    with pytest.raises(ConfigError):
        ModelSpec(kind="mlp", tasks=("speaker",), input_dim=8)  # no n_speakers
    with pytest.raises(ConfigError):
        ModelSpec(kind="mlp", tasks=("gender",))  # no input_dim


def test_spec_text_round_trip_and_hash():
    spec = ModelSpec(kind="multitask_cnn_lstm", tasks=("accent", "gender", "age"),
                     in_channels=25, dropout=0.1)
    again = ModelSpec.from_text(spec.to_text())
    assert again == spec
    assert spec_hash(again) == spec_hash(spec)
    other = ModelSpec.from_text(_mlp_spec().to_text())
    assert spec_hash(other) != spec_hash(spec)


# ---------------------------------------------------------------------------
# parameter counts

def test_mlp_param_count_default_profile():
    # 40 -> 256 -> 128 -> 64 -> 2 with biases everywhere
    model = build_model(_mlp_spec())
    expression = (40 * 256 + 256) + (256 * 128 + 128) + (128 * 64 + 64) + (64 * 2 + 2)
    assert expression == 51778
    assert param_count(model) == 51778
    assert expected_param_count(_mlp_spec()) == 51778


@pytest.mark.parametrize("spec", [
    _mlp_spec(),
    _mlp_spec(batchnorm=True, hidden=(32, 16)),
    ModelSpec(kind="cnn", tasks=("age",), in_channels=30),
    ModelSpec(kind="lstm", tasks=("accent",), in_channels=40),
    ModelSpec(kind="multitask_mlp", tasks=("accent", "gender", "age"), input_dim=104),
    ModelSpec(kind="multitask_cnn_lstm", tasks=("accent", "gender", "age"),
              in_channels=13),
    ModelSpec(kind="mlp", tasks=("speaker",), input_dim=104, n_speakers=20),
])
def test_expected_count_matches_brute_force(spec):
    assert expected_param_count(spec) == param_count(build_model(spec))


def test_zero_hidden_is_single_linear():
    spec = ModelSpec(kind="mlp", tasks=("gender",), input_dim=40, hidden=())
    model = build_model(spec)
    assert param_count(model) == 40 * 2 + 2  # logistic-regression shaped
    out = model.forward(Tensor(RNG.standard_normal((3, 40)).astype(np.float32)))
    assert out["gender"].shape == (3, 2)
    assert ModelSpec.from_text(spec.to_text()) == spec
    # hidden omitted entirely falls back to the default profile
    assert _mlp_spec().trunk_hidden() == (256, 128, 64)


def test_mlp_forward_shape():
    model = build_model(_mlp_spec())
    out = model.forward(Tensor(RNG.standard_normal((5, 40)).astype(np.float32)))
    assert set(out) == {"gender"}
    assert out["gender"].shape == (5, 2)


# ---------------------------------------------------------------------------
# cnn

def test_cnn_pooling_arithmetic_and_min_length():
    spec = ModelSpec(kind="cnn", tasks=("age",), in_channels=30)
    model = build_model(spec)
    x = Tensor(RNG.standard_normal((2, 30, 4)).astype(np.float32))
    out = model.forward(x)
    assert out["age"].shape == (2, 1)
    with pytest.raises(DataError):
        model.forward(Tensor(RNG.standard_normal((2, 30, 3)).astype(np.float32)))


def test_cnn_respects_lengths():
    spec = ModelSpec(kind="cnn", tasks=("gender",), in_channels=5)
    model = build_model(spec)
    x = Tensor(RNG.standard_normal((3, 5, 12)).astype(np.float32))
    out = model.forward(x, lengths=np.array([12, 8, 4]))
    assert out["gender"].shape == (3, 2)
    with pytest.raises(DataError):
        model.forward(x, lengths=np.array([12, 8, 3]))


# ---------------------------------------------------------------------------
# lstm

def test_lstm_net_output_shape_and_zero_fixed_point():
    spec = ModelSpec(kind="lstm", tasks=("accent",), in_channels=6, lstm_hidden=8)
    model = build_model(spec)
    x = Tensor(RNG.standard_normal((4, 6, 10)).astype(np.float32))
    assert model.forward(x)["accent"].shape == (4, 8)

    for layer in model.lstm.layers:
        for tensor in layer.tensors():
            tensor.data[...] = 0.0
    out1 = model.forward(x)["accent"].data
    out2 = model.forward(Tensor(np.zeros((4, 6, 10), dtype=np.float32)))["accent"].data
    # zero recurrent weights make the last hidden state zero for any input
    assert np.array_equal(out1, out2)
    assert np.allclose(out1, model.heads.heads["accent"].bias.data, atol=1e-7)


def test_lstm_net_t1_matches_cell():
    spec = ModelSpec(kind="lstm", tasks=("gender",), in_channels=2,
                     lstm_hidden=3, lstm_layers=1)
    model = build_model(spec, seed=3)
    x = RNG.standard_normal((1, 2, 1)).astype(np.float32)
    out = model.forward(Tensor(x))["gender"].data

    params = model.lstm.layers[0]
    z = x[:, :, 0] @ params.w_input.data + params.bias.data
    h = 3

    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    c = sig(z[:, :h]) * np.tanh(z[:, 2 * h:3 * h])
    hid = sig(z[:, 3 * h:]) * np.tanh(c)
    head = model.heads.heads["gender"]
    assert np.allclose(out, hid @ head.weight.data + head.bias.data, atol=1e-6)


# ---------------------------------------------------------------------------
# multitask

def test_multitask_mlp_head_widths():
    spec = ModelSpec(kind="multitask_mlp", tasks=("accent", "gender", "age"),
                     input_dim=104)
    model = build_model(spec)
    out = model.forward(Tensor(RNG.standard_normal((4, 104)).astype(np.float32)))
    assert {t: o.shape[1] for t, o in out.items()} == {"accent": 8, "gender": 2, "age": 1}


def test_multitask_trunk_gets_accent_gradients_when_heads_inactive():
    spec = ModelSpec(kind="multitask_mlp", tasks=("accent", "gender", "age"),
                     input_dim=12, hidden=(8, 8, 8))
    model = build_model(spec, seed=1)
    x = Tensor(RNG.standard_normal((6, 12)).astype(np.float32))
    out = model.forward(x, training=True, rng=np.random.default_rng(0),
                        active=("accent",))
    assert set(out) == {"accent"}
    loss = ad.softmax_cross_entropy(out["accent"], np.arange(6) % 8)
    backward(loss)
    trunk_weight = model.blocks[0]["linear"].weight
    assert trunk_weight.grad is not None
    assert np.abs(trunk_weight.grad).max() > 0.0
    assert model.heads.heads["gender"].weight.grad is None


def test_multitask_eval_deterministic():
    spec = ModelSpec(kind="multitask_mlp", tasks=("accent", "gender", "age"),
                     input_dim=16, dropout=0.5)
    model = build_model(spec, seed=2)
    x = Tensor(RNG.standard_normal((4, 16)).astype(np.float32))
    a = model.forward(x, training=False)
    b = model.forward(x, training=False)
    for task in a:
        assert np.array_equal(a[task].data, b[task].data)


def test_multitask_cnn_lstm_accepts_mfcc_widths():
    for width in (13, 25, 40):
        spec = ModelSpec(kind="multitask_cnn_lstm",
                         tasks=("accent", "gender", "age"), in_channels=width,
                         lstm_hidden=16)
        model = build_model(spec)
        x = Tensor(RNG.standard_normal((2, width, 20)).astype(np.float32))
        out = model.forward(x)
        assert {t: o.shape[1] for t, o in out.items()} == {"accent": 8, "gender": 2,
                                                           "age": 1}


def test_multitask_cnn_lstm_conv1_receives_gradient():
    spec = ModelSpec(kind="multitask_cnn_lstm", tasks=("accent", "gender", "age"),
                     in_channels=13, lstm_hidden=8)
    model = build_model(spec, seed=4)
    x = Tensor(RNG.standard_normal((3, 13, 16)).astype(np.float32))
    out = model.forward(x)
    loss = combined_loss(
        ad.softmax_cross_entropy(out["accent"], np.array([0, 1, 2])),
        ad.softmax_cross_entropy(out["gender"], np.array([0, 1, 0])),
        ad.mse_loss(out["age"], np.array([0.1, -0.2, 0.3])),
        LossWeights(1.0, 1.0, 0.001),
    )
    backward(loss)
    assert np.abs(model.conv1.kernel.grad).max() > 0.0


# ---------------------------------------------------------------------------
# combined loss

def _scalar(v):
    return Tensor(np.asarray(v, dtype=np.float64), requires_grad=True)


def test_combined_loss_arithmetic():
    loss = combined_loss(_scalar(2.0), _scalar(3.0), _scalar(4.0),
                         LossWeights(1, 1, 1))
    assert float(loss.data) == pytest.approx(9.0)
    loss = combined_loss(_scalar(1.0), _scalar(1.0), _scalar(100.0),
                         LossWeights(5, 1, 0.01))
    assert float(loss.data) == pytest.approx(7.0)


def test_combined_loss_single_weight_equals_component_gradient():
    spec = ModelSpec(kind="multitask_mlp", tasks=("accent", "gender", "age"),
                     input_dim=10, hidden=(6, 6, 6))
    x = RNG.standard_normal((5, 10)).astype(np.float32)
    targets = np.arange(5) % 8

    def accent_grad(use_combined):
        model = build_model(spec, seed=9)
        out = model.forward(Tensor(x), active=("accent",))
        loss = ad.softmax_cross_entropy(out["accent"], targets)
        if use_combined:
            loss = combined_loss(loss, None, None, LossWeights(1.0, 0.0, 0.0))
        backward(loss)
        return model.blocks[0]["linear"].weight.grad.copy()

    assert np.array_equal(accent_grad(True), accent_grad(False))


def test_combined_loss_scaling_linearity():
    for scale_factor in (2.0, 0.5, 10.0):
        grads = []
        for factor in (1.0, scale_factor):
            a, g, age = _scalar(1.3), _scalar(0.7), _scalar(2.1)
            loss = combined_loss(a, g, age,
                                 LossWeights(5 * factor, 1 * factor, 0.01 * factor))
            backward(loss)
            grads.append(np.array([a.grad, g.grad, age.grad]))
        assert np.allclose(grads[1], scale_factor * grads[0], rtol=1e-12)


def test_combined_loss_nan_aborts_with_component():
    with pytest.raises(NumericError) as err:
        combined_loss(_scalar(np.nan), _scalar(1.0), _scalar(1.0),
                      LossWeights(1, 1, 1))
    assert err.value.diagnostics["component"] == "accent"


def test_combined_loss_detached_with_weight_rejected():
    with pytest.raises(ConfigError):
        combined_loss(_scalar(1.0), None, None, LossWeights(1, 1, 0))


def test_loss_weights_validation():
    with pytest.raises(ConfigError):
        LossWeights(-1, 1, 1)
    with pytest.raises(ConfigError):
        LossWeights(0, 0, 0)
    assert LossWeights(1, 0, 0).active_tasks() == ("accent",)


# ---------------------------------------------------------------------------
# shared trunk initialization

def test_stl_and_mtl_trunks_init_identically():
    mtl = build_multitask_mlp(
        ModelSpec(kind="multitask_mlp", tasks=("accent", "gender", "age"),
                  input_dim=104, dropout=0.2), seed=11)
    stl = build_model(
        ModelSpec(kind="mlp", tasks=("accent",), input_dim=104, dropout=0.2,
                  batchnorm=True), seed=11)
    for mtl_block, stl_block in zip(mtl.blocks, stl.blocks):
        assert np.array_equal(mtl_block["linear"].weight.data,
                              stl_block["linear"].weight.data)
        assert np.array_equal(mtl_block["linear"].bias.data,
                              stl_block["linear"].bias.data)
    # first head drawn after the trunk is the accent head in both
    assert np.array_equal(mtl.heads.heads["accent"].weight.data,
                          stl.heads.heads["accent"].weight.data)


# ---------------------------------------------------------------------------
# checkpoints

def test_checkpoint_round_trip(tmp_path):
    spec = ModelSpec(kind="multitask_mlp", tasks=("accent", "gender", "age"),
                     input_dim=32, hidden=(16, 8, 8))
    model = build_model(spec, seed=5)
    model.blocks[0]["bn"].running_mean += 1.5  # buffers must round-trip too
    save_checkpoint(tmp_path / "m.vpck", model)
    loaded = load_checkpoint(tmp_path / "m.vpck")
    assert loaded.spec == spec
    for a, b in zip(model.parameters(), loaded.parameters()):
        assert np.array_equal(a.data, b.data)
    assert np.array_equal(loaded.blocks[0]["bn"].running_mean,
                          model.blocks[0]["bn"].running_mean)


def test_checkpoint_rejects_wrong_spec(tmp_path):
    model = build_model(_mlp_spec(), seed=0)
    save_checkpoint(tmp_path / "m.vpck", model)
    other = ModelSpec(kind="mlp", tasks=("accent",), input_dim=40)
    with pytest.raises(ValidationError, match="hash"):
        load_checkpoint(tmp_path / "m.vpck", expected_spec=other)


def test_single_lstm_builder_profile():
    spec = ModelSpec(kind="lstm", tasks=("speaker",), in_channels=104,
                     n_speakers=10)
    model = build_single_lstm(spec, seed=0)
    assert len(model.lstm.layers) == 2  # 2-layer default
    x = Tensor(RNG.standard_normal((3, 104, 1)).astype(np.float32))
    assert model.forward(x)["speaker"].shape == (3, 10)
