"""Model zoo: declarative specs, seeded builders and the weighted
multi-task loss.

Five architectures are supported: mlp, lstm and cnn single-task nets,
plus multitask_mlp (shared linear trunk) and multitask_cnn_lstm
(conv stack feeding a recurrent layer). Every forward returns a dict
``{task: logits}`` so single- and multi-task paths share one calling
convention. Sequential models take ``[B, C, T]`` input with optional
per-item lengths; padded positions never influence a clip's output, so
a clip scores identically batched or alone.

Builders draw parameters from one seeded generator, trunk first and
heads after in canonical task order. Two specs sharing a trunk and a
seed therefore share the exact trunk initialization, which is what
makes the controlled single-task vs multi-task comparison possible.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import LSTMLayerParams, Tensor, uniform_init
from .errors import ConfigError, DataError, NumericError

MODEL_KINDS = ("mlp", "lstm", "cnn", "multitask_mlp", "multitask_cnn_lstm")
TASK_ORDER = ("accent", "gender", "age", "speaker")
CLASS_COUNTS = {"accent": 8, "gender": 2, "age": 1}

DEFAULT_HIDDEN = (256, 128, 64)
DEFAULT_HIDDEN_SPEAKER = (512, 256, 128, 64)


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of one model."""

    kind: str
    tasks: tuple
    input_dim: int | None = None      # averaged-feature models
    in_channels: int | None = None    # sequential models: coefficient rows
    hidden: tuple | None = None       # None -> default profile; () -> no trunk
    conv_channels: tuple = (32, 64)
    lstm_hidden: int = 128
    lstm_layers: int = 2
    dropout: float = 0.0
    batchnorm: bool = False
    n_speakers: int | None = None

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        tasks = tuple(self.tasks)
        if len(set(tasks)) != len(tasks) or not tasks:
            raise ConfigError(f"tasks must be unique and non-empty, got {tasks}")
        for task in tasks:
            if task not in TASK_ORDER:
                raise ConfigError(f"unknown task {task!r}")
        tasks = tuple(t for t in TASK_ORDER if t in tasks)
        object.__setattr__(self, "tasks", tasks)
        if self.hidden is not None:
            object.__setattr__(self, "hidden", tuple(self.hidden))
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        if self.kind.startswith("multitask"):
            if len(tasks) < 2:
                raise ConfigError(f"{self.kind} needs at least 2 tasks, got {tasks}")
        elif len(tasks) != 1:
            raise ConfigError(f"{self.kind} takes exactly 1 task, got {tasks}")
        if self.kind == "multitask_mlp":
            # the shared trunk is defined with batch normalization
            object.__setattr__(self, "batchnorm", True)
        if "speaker" in tasks and (self.n_speakers is None or self.n_speakers < 2):
            raise ConfigError("speaker task needs n_speakers >= 2")
        if self.kind in ("mlp", "multitask_mlp"):
            if not self.input_dim or self.input_dim < 1:
                raise ConfigError(f"{self.kind} needs a positive input_dim")
        elif not self.in_channels or self.in_channels < 1:
            raise ConfigError(f"{self.kind} needs positive in_channels")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    def head_width(self, task: str) -> int:
        if task == "speaker":
            return self.n_speakers
        return CLASS_COUNTS[task]

    def trunk_hidden(self) -> tuple:
        if self.hidden is not None:
            return self.hidden
        return DEFAULT_HIDDEN_SPEAKER if "speaker" in self.tasks else DEFAULT_HIDDEN

    def to_text(self) -> str:
        def fmt(value):
            if value is None:
                return ""
            if isinstance(value, tuple):
                return ",".join(str(v) for v in value) if value else "none"
            return str(value)

        keys = ("kind", "tasks", "input_dim", "in_channels", "hidden",
                "conv_channels", "lstm_hidden", "lstm_layers", "dropout",
                "batchnorm", "n_speakers")
        return "".join(f"{k} = {fmt(getattr(self, k))}\n" for k in keys)

    @classmethod
    def from_text(cls, text: str) -> "ModelSpec":
        values = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"model spec line {lineno}: expected key = value")
            key, _, raw = line.partition("=")
            values[key.strip()] = raw.strip()

        def tup(raw, cast=int):
            if raw == "none":
                return ()
            return tuple(cast(v) for v in raw.split(",") if v) if raw else ()

        return cls(
            kind=values["kind"],
            tasks=tup(values["tasks"], str),
            input_dim=int(values["input_dim"]) if values.get("input_dim") else None,
            in_channels=int(values["in_channels"]) if values.get("in_channels") else None,
            hidden=tup(values["hidden"]) if values.get("hidden") else None,
            conv_channels=tup(values.get("conv_channels", "32,64")),
            lstm_hidden=int(values.get("lstm_hidden", 128)),
            lstm_layers=int(values.get("lstm_layers", 2)),
            dropout=float(values.get("dropout", 0.0)),
            batchnorm=values.get("batchnorm", "False") == "True",
            n_speakers=int(values["n_speakers"]) if values.get("n_speakers") else None,
        )


def spec_hash(spec: ModelSpec) -> str:
    return hashlib.sha256(spec.to_text().encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class LossWeights:
    """Non-negative per-task loss weights; at least one must be positive."""

    accent: float = 1.0
    gender: float = 1.0
    age: float = 1.0

    def __post_init__(self):
        values = (self.accent, self.gender, self.age)
        if any(w < 0 for w in values):
            raise ConfigError(f"loss weights must be non-negative, got {values}")
        if not any(w > 0 for w in values):
            raise ConfigError("at least one loss weight must be positive")

    def active_tasks(self) -> tuple:
        return tuple(
            t for t, w in zip(("accent", "gender", "age"),
                              (self.accent, self.gender, self.age)) if w > 0
        )


def combined_loss(accent_loss, gender_loss, age_loss, weights: LossWeights) -> Tensor:
    """Weighted sum of per-task losses; detached tasks pass None."""
    total = None
    for name, loss, weight in (("accent", accent_loss, weights.accent),
                               ("gender", gender_loss, weights.gender),
                               ("age", age_loss, weights.age)):
        if loss is None:
            if weight > 0:
                raise ConfigError(f"{name} loss missing but weighted {weight}")
            continue
        if not np.isfinite(loss.data):
            raise NumericError(f"{name} loss is not finite",
                               {"component": name, "value": float(loss.data)})
        if weight == 0:
            continue
        term = ad.scale(loss, weight)
        total = term if total is None else ad.add(total, term)
    if total is None:
        raise ConfigError("all task losses detached; nothing to optimize")
    return total


# ---------------------------------------------------------------------------
# layers

class Linear:
    def __init__(self, rng, in_dim: int, out_dim: int):
        self.weight = Tensor(uniform_init(rng, (in_dim, out_dim), in_dim),
                             requires_grad=True)
        self.bias = Tensor(uniform_init(rng, (out_dim,), in_dim),
                           requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.linear(x, self.weight, self.bias)

    def parameters(self):
        return [self.weight, self.bias]


class Conv1d:
    def __init__(self, rng, in_channels: int, out_channels: int, width: int = 3):
        fan_in = in_channels * width
        self.kernel = Tensor(
            uniform_init(rng, (out_channels, in_channels, width), fan_in),
            requires_grad=True,
        )
        self.bias = Tensor(uniform_init(rng, (out_channels,), fan_in),
                           requires_grad=True)
        self.padding = (width - 1) // 2

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv1d(x, self.kernel, self.bias, padding=self.padding)

    def parameters(self):
        return [self.kernel, self.bias]


class BatchNorm1d:
    def __init__(self, width: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(width, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(width, dtype=np.float32), requires_grad=True)
        self.running_mean = np.zeros(width, dtype=np.float32)
        self.running_var = np.ones(width, dtype=np.float32)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if training:
            out, mean, var = ad.batchnorm_train(x, self.gamma, self.beta, self.eps)
            self.running_mean = ((1 - self.momentum) * self.running_mean
                                 + self.momentum * mean).astype(np.float32)
            self.running_var = ((1 - self.momentum) * self.running_var
                                + self.momentum * var).astype(np.float32)
            return out
        return ad.batchnorm_eval(x, self.gamma, self.beta,
                                 self.running_mean, self.running_var, self.eps)

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]


class LSTM:
    def __init__(self, rng, input_size: int, hidden_size: int, layers: int):
        self.layers = []
        size = input_size
        for _ in range(layers):
            self.layers.append(LSTMLayerParams(
                w_input=Tensor(uniform_init(rng, (size, 4 * hidden_size), size),
                               requires_grad=True),
                w_hidden=Tensor(uniform_init(rng, (hidden_size, 4 * hidden_size),
                                             hidden_size), requires_grad=True),
                bias=Tensor(uniform_init(rng, (4 * hidden_size,), hidden_size),
                            requires_grad=True),
            ))
            size = hidden_size

    def __call__(self, x: Tensor):
        return ad.lstm_forward(x, self.layers)

    def parameters(self):
        return [t for layer in self.layers for t in layer.tensors()]


# ---------------------------------------------------------------------------
# length masking for padded sequential batches

def _lengths_array(lengths, batch: int, t_len: int) -> np.ndarray:
    if lengths is None:
        return np.full(batch, t_len, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.shape != (batch,):
        raise DataError(f"lengths shape {lengths.shape} does not match batch {batch}")
    if lengths.min() < 1 or lengths.max() > t_len:
        raise DataError(f"lengths must lie in [1, {t_len}], got {lengths}")
    return lengths


def _mask_tail(x: Tensor, lengths: np.ndarray) -> Tensor:
    """Zero positions at or beyond each item's true length."""
    batch, channels, t_len = x.shape
    if lengths.min() == t_len:
        return x
    mask = (np.arange(t_len)[None, :] < lengths[:, None]).astype(x.dtype)
    mask = np.repeat(mask[:, None, :], channels, axis=1)
    return ad.mul(x, Tensor(mask))


def _mean_over_time(x: Tensor, lengths: np.ndarray) -> Tensor:
    """Masked mean over the time axis of [B, C, T]."""
    summed = ad.sum_axis(_mask_tail(x, lengths), 2)
    inv = np.repeat((1.0 / lengths)[:, None], x.shape[1], axis=1).astype(x.dtype)
    return ad.mul(summed, Tensor(inv))


def _pooled_lengths(lengths: np.ndarray, kind: str) -> np.ndarray:
    pooled = lengths // 2
    if pooled.min() < 1:
        raise DataError(
            f"{kind}: sequence of length {int(lengths.min())} underflows "
            "max pooling (kernel 2, stride 2)"
        )
    return pooled


# ---------------------------------------------------------------------------
# architectures

class _Heads:
    """Task-specific linear heads, built and applied in canonical order."""

    def __init__(self, rng, spec: ModelSpec, trunk_width: int):
        self.heads = {
            task: Linear(rng, trunk_width, spec.head_width(task))
            for task in spec.tasks
        }

    def __call__(self, features: Tensor, active) -> dict:
        return {task: head(features) for task, head in self.heads.items()
                if active is None or task in active}

    def parameters(self):
        return [t for head in self.heads.values() for t in head.parameters()]


class MLPNet:
    """Linear trunk with ReLU (optionally batchnorm and dropout) plus heads."""

    kind_label = "mlp"

    def __init__(self, spec: ModelSpec, seed: int):
        self.spec = spec
        rng = np.random.default_rng(seed)
        width = spec.input_dim
        self.blocks = []
        for hidden in spec.trunk_hidden():
            block = {"linear": Linear(rng, width, hidden)}
            if spec.batchnorm:
                block["bn"] = BatchNorm1d(hidden)
            self.blocks.append(block)
            width = hidden
        self.heads = _Heads(rng, spec, width)

    def forward(self, x: Tensor, lengths=None, training: bool = False,
                rng=None, active=None) -> dict:
        h = x
        for block in self.blocks:
            h = block["linear"](h)
            if "bn" in block:
                h = block["bn"](h, training)
            h = ad.relu(h)
            h = ad.dropout(h, self.spec.dropout, training, rng)
        return self.heads(h, active)

    def parameters(self):
        params = []
        for block in self.blocks:
            params.extend(block["linear"].parameters())
            if "bn" in block:
                params.extend(block["bn"].parameters())
        params.extend(self.heads.parameters())
        return params

    def buffers(self):
        out = []
        for i, block in enumerate(self.blocks):
            if "bn" in block:
                out.extend((f"block{i}.{name}", arr)
                           for name, arr in block["bn"].buffers())
        return out


class CNNNet:
    """Two conv/pool stages, masked mean over time, linear heads."""

    kind_label = "cnn"

    def __init__(self, spec: ModelSpec, seed: int):
        self.spec = spec
        rng = np.random.default_rng(seed)
        c1, c2 = spec.conv_channels
        self.conv1 = Conv1d(rng, spec.in_channels, c1)
        self.conv2 = Conv1d(rng, c1, c2)
        self.heads = _Heads(rng, spec, c2)

    def forward(self, x: Tensor, lengths=None, training: bool = False,
                rng=None, active=None) -> dict:
        lengths = _lengths_array(lengths, x.shape[0], x.shape[2])
        h = ad.maxpool1d(ad.relu(self.conv1(x)))
        lengths = _pooled_lengths(lengths, self.kind_label)
        h = _mask_tail(h, lengths)
        h = ad.maxpool1d(ad.relu(self.conv2(h)))
        lengths = _pooled_lengths(lengths, self.kind_label)
        pooled = _mean_over_time(h, lengths)
        pooled = ad.dropout(pooled, self.spec.dropout, training, rng)
        return self.heads(pooled, active)

    def parameters(self):
        return (self.conv1.parameters() + self.conv2.parameters()
                + self.heads.parameters())

    def buffers(self):
        return []


class LSTMNet:
    """Stacked LSTM over [B, T, F]; the last true step feeds the heads."""

    kind_label = "lstm"

    def __init__(self, spec: ModelSpec, seed: int):
        self.spec = spec
        rng = np.random.default_rng(seed)
        self.lstm = LSTM(rng, spec.in_channels, spec.lstm_hidden, spec.lstm_layers)
        self.heads = _Heads(rng, spec, spec.lstm_hidden)

    def forward(self, x: Tensor, lengths=None, training: bool = False,
                rng=None, active=None) -> dict:
        lengths = _lengths_array(lengths, x.shape[0], x.shape[2])
        outputs, _ = self.lstm(ad.swap_axes(x, 1, 2))
        last = ad.select_step(outputs, lengths - 1)
        last = ad.dropout(last, self.spec.dropout, training, rng)
        return self.heads(last, active)

    def parameters(self):
        return self.lstm.parameters() + self.heads.parameters()

    def buffers(self):
        return []


class MultiTaskMLP(MLPNet):
    """Shared trunk of linear/batchnorm/ReLU/dropout blocks, one head per task."""

    kind_label = "multitask_mlp"


class MultiTaskCNNLSTM:
    """Conv/pool stack into a single LSTM layer; heads read the last step."""

    kind_label = "multitask_cnn_lstm"

    def __init__(self, spec: ModelSpec, seed: int):
        self.spec = spec
        rng = np.random.default_rng(seed)
        c1, c2 = spec.conv_channels
        self.conv1 = Conv1d(rng, spec.in_channels, c1)
        self.conv2 = Conv1d(rng, c1, c2)
        self.lstm = LSTM(rng, c2, spec.lstm_hidden, 1)
        self.heads = _Heads(rng, spec, spec.lstm_hidden)

    def forward(self, x: Tensor, lengths=None, training: bool = False,
                rng=None, active=None) -> dict:
        lengths = _lengths_array(lengths, x.shape[0], x.shape[2])
        h = ad.maxpool1d(ad.relu(self.conv1(x)))
        lengths = _pooled_lengths(lengths, self.kind_label)
        h = _mask_tail(h, lengths)
        h = ad.maxpool1d(ad.relu(self.conv2(h)))
        lengths = _pooled_lengths(lengths, self.kind_label)
        outputs, _ = self.lstm(ad.swap_axes(h, 1, 2))
        last = ad.select_step(outputs, lengths - 1)
        last = ad.dropout(last, self.spec.dropout, training, rng)
        return self.heads(last, active)

    def parameters(self):
        return (self.conv1.parameters() + self.conv2.parameters()
                + self.lstm.parameters() + self.heads.parameters())

    def buffers(self):
        return []


_BUILDERS = {
    "mlp": MLPNet,
    "cnn": CNNNet,
    "lstm": LSTMNet,
    "multitask_mlp": MultiTaskMLP,
    "multitask_cnn_lstm": MultiTaskCNNLSTM,
}


def build_model(spec: ModelSpec, seed: int = 0):
    return _BUILDERS[spec.kind](spec, seed)


def build_mlp(spec: ModelSpec, seed: int = 0) -> MLPNet:
    return MLPNet(spec, seed)


def build_single_cnn(spec: ModelSpec, seed: int = 0) -> CNNNet:
    return CNNNet(spec, seed)


def build_single_lstm(spec: ModelSpec, seed: int = 0) -> LSTMNet:
    return LSTMNet(spec, seed)


def build_multitask_mlp(spec: ModelSpec, seed: int = 0) -> MultiTaskMLP:
    return MultiTaskMLP(spec, seed)


def build_multitask_cnn_lstm(spec: ModelSpec, seed: int = 0) -> MultiTaskCNNLSTM:
    return MultiTaskCNNLSTM(spec, seed)


def param_count(model) -> int:
    return sum(p.size for p in model.parameters())


def expected_param_count(spec: ModelSpec) -> int:
    """Parameter count derived from a ModelSpec alone (no model built)."""
    heads = sum(spec.head_width(t) for t in spec.tasks)

    def mlp_trunk(width):
        total = 0
        for hidden in spec.trunk_hidden():
            total += width * hidden + hidden
            if spec.batchnorm:
                total += 2 * hidden
            width = hidden
        return total, width

    def lstm_params(input_size, layers):
        total, size = 0, input_size
        for _ in range(layers):
            total += size * 4 * spec.lstm_hidden
            total += spec.lstm_hidden * 4 * spec.lstm_hidden
            total += 4 * spec.lstm_hidden
            size = spec.lstm_hidden
        return total

    c1, c2 = spec.conv_channels
    if spec.kind in ("mlp", "multitask_mlp"):
        trunk, width = mlp_trunk(spec.input_dim)
        return trunk + width * heads + heads
    if spec.kind == "lstm":
        return (lstm_params(spec.in_channels, spec.lstm_layers)
                + spec.lstm_hidden * heads + heads)
    conv = (c1 * spec.in_channels * 3 + c1) + (c2 * c1 * 3 + c2)
    if spec.kind == "cnn":
        return conv + c2 * heads + heads
    return (conv + lstm_params(c2, 1) + spec.lstm_hidden * heads + heads)


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = b"VPCK1\n"


def named_arrays(model):
    """Parameters then buffers, in deterministic order."""
    arrays = [(f"param{i}", p.data) for i, p in enumerate(model.parameters())]
    arrays.extend(model.buffers())
    return arrays


def save_checkpoint(path, model) -> None:
    """Write spec text, spec hash and float32 parameter payload."""
    arrays = named_arrays(model)
    header = json.dumps({
        "spec": model.spec.to_text(),
        "spec_hash": spec_hash(model.spec),
        "arrays": [[name, list(arr.shape)] for name, arr in arrays],
        "version": 1,
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path, expected_spec: ModelSpec | None = None, seed: int = 0):
    """Rebuild a model from a checkpoint, rejecting spec-hash mismatches."""
    from .errors import ValidationError

    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ValidationError(f"{path}: not a checkpoint file")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        spec = ModelSpec.from_text(header["spec"])
        if spec_hash(spec) != header["spec_hash"]:
            raise ValidationError(f"{path}: stored spec does not match its hash")
        if expected_spec is not None and spec_hash(expected_spec) != header["spec_hash"]:
            raise ValidationError(
                f"{path}: checkpoint spec hash {header['spec_hash'][:12]} does not "
                f"match expected {spec_hash(expected_spec)[:12]}"
            )
        model = build_model(spec, seed=seed)
        arrays = named_arrays(model)
        stored = header["arrays"]
        if [[n, list(a.shape)] for n, a in arrays] != stored:
            raise ValidationError(f"{path}: array table does not match model")
        for name, arr in arrays:
            payload = fh.read(4 * arr.size)
            if len(payload) < 4 * arr.size:
                raise OSError(f"{path}: truncated checkpoint at {name}")
            arr[...] = np.frombuffer(payload, dtype="<f4").reshape(arr.shape)
    return model
