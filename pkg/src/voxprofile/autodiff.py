"""Minimal reverse-mode automatic differentiation over dense tensors.

Dynamic tape: every op returns a new :class:`Tensor` holding its
parents and a closure producing parent gradients. :func:`backward`
walks the graph once in reverse topological order and accumulates
(+=) into the ``grad`` of every tensor with ``requires_grad``; calling
it twice without zeroing doubles gradients.

Training tensors default to float32; pass float64 arrays to run the
same graph in double precision (finite-difference checks do).
Broadcasting is limited to the bias patterns ``add_bias``/``mul_bias``;
any other shape mismatch raises :class:`~voxprofile.errors.ShapeError`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ShapeError

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """N-dimensional array participating in the differentiation tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, np.ndarray) and data.dtype in _FLOAT_DTYPES:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=np.float32)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._grad_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _result(data, parents, grad_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


def _check_same_shape(op, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def backward(loss: Tensor) -> None:
    """Populate gradients of every requires_grad tensor below ``loss``."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    # iterative topological sort; LSTM graphs overflow recursive DFS
    topo, visited, stack = [], set(), [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    flowing = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        grad = flowing.pop(id(node), None)
        if grad is None:
            continue
        if node.grad is None:
            node.grad = grad.copy()
        else:
            node.grad += grad
        if node._grad_fn is None:
            continue
        for parent, parent_grad in zip(node._parents, node._grad_fn(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            slot = flowing.get(id(parent))
            # never accumulate in place: grad_fns may alias one array
            # across parents (add returns the upstream grad twice)
            flowing[id(parent)] = parent_grad if slot is None else slot + parent_grad


# ---------------------------------------------------------------------------
# elementwise and broadcast primitives

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    return _result(a.data * b.data, (a, b),
                   lambda g: (g * b.data, g * a.data))


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _result(a.data + c, (a,), lambda g: (g,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x[..., F] + b[F], the one sanctioned broadcast."""
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: shapes {x.shape} and {b.shape} differ")
    axes = tuple(range(x.data.ndim - 1))
    return _result(x.data + b.data, (x, b),
                   lambda g: (g, g.sum(axis=axes)))


def mul_bias(x: Tensor, s: Tensor) -> Tensor:
    """x[..., F] * s[F], row-broadcast multiply."""
    if s.data.ndim != 1 or x.shape[-1] != s.shape[0]:
        raise ShapeError(f"mul_bias: shapes {x.shape} and {s.shape} differ")
    axes = tuple(range(x.data.ndim - 1))
    return _result(x.data * s.data, (x, s),
                   lambda g: (g * s.data, (g * x.data).sum(axis=axes)))


def powc(a: Tensor, exponent: float) -> Tensor:
    out = a.data ** exponent
    return _result(out, (a,),
                   lambda g: (g * exponent * a.data ** (exponent - 1.0),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    # np.maximum (unlike a mask select) propagates NaN, so a poisoned
    # forward pass surfaces as a non-finite loss instead of silence
    return _result(np.maximum(a.data, 0.0), (a,),
                   lambda g: (np.where(mask, g, 0.0),))


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


# ---------------------------------------------------------------------------
# shape plumbing

def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _result(a.data.reshape(shape), (a,),
                   lambda g: (g.reshape(old),))


def swap_axes(a: Tensor, axis1: int, axis2: int) -> Tensor:
    return _result(np.ascontiguousarray(np.swapaxes(a.data, axis1, axis2)), (a,),
                   lambda g: (np.swapaxes(g, axis1, axis2),))


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def grad_fn(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _result(np.ascontiguousarray(a.data[index]), (a,), grad_fn)


def stack_steps(steps) -> Tensor:
    """Stack a list of [B, H] tensors into [B, T, H]."""
    data = np.stack([s.data for s in steps], axis=1)
    return _result(data, tuple(steps),
                   lambda g: tuple(g[:, t] for t in range(len(steps))))


def select_step(x: Tensor, indices) -> Tensor:
    """Per-row gather along time: out[i] = x[i, indices[i]] for [B, T, H]."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.ndim != 1 or indices.shape[0] != x.shape[0]:
        raise ShapeError(
            f"select_step: index shape {indices.shape} vs batch {x.shape}"
        )
    rows = np.arange(x.shape[0])

    def grad_fn(g):
        full = np.zeros_like(x.data)
        full[rows, indices] = g
        return (full,)

    return _result(x.data[rows, indices].copy(), (x,), grad_fn)


def sum_axis(a: Tensor, axis: int) -> Tensor:
    def grad_fn(g):
        return (np.repeat(np.expand_dims(g, axis), a.shape[axis], axis=axis),)

    return _result(a.data.sum(axis=axis), (a,), grad_fn)


def sum_all(a: Tensor) -> Tensor:
    return _result(np.asarray(a.data.sum(), dtype=a.dtype), (a,),
                   lambda g: (np.full_like(a.data, g),))


def mean_axis0(a: Tensor) -> Tensor:
    n = a.shape[0]
    return _result(a.data.mean(axis=0), (a,),
                   lambda g: (np.repeat(g[None, :] / n, n, axis=0),))


# ---------------------------------------------------------------------------
# layers

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} incompatible")
    return _result(a.data @ b.data, (a, b),
                   lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x[B, I] @ W[I, O] + b[O]."""
    return add_bias(matmul(x, weight), bias)


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor,
           stride: int = 1, padding: int = 1) -> Tensor:
    """Cross-correlation of x[B, Cin, T] with kernel[Cout, Cin, k].

    Zero padding on both ends; stride 1 with padding (k-1)/2 preserves T.
    """
    if stride != 1:
        raise ConfigError("conv1d supports stride 1 only")
    if x.data.ndim != 3 or kernel.data.ndim != 3 or x.shape[1] != kernel.shape[1]:
        raise ShapeError(
            f"conv1d: input {x.shape} incompatible with kernel {kernel.shape}"
        )
    if bias.data.ndim != 1 or bias.shape[0] != kernel.shape[0]:
        raise ShapeError(f"conv1d: bias {bias.shape} vs kernel {kernel.shape}")
    c_out, _, width = kernel.shape
    t_out = x.shape[2] + 2 * padding - width + 1
    if t_out < 1:
        raise DataError(f"conv1d: sequence length {x.shape[2]} shorter than kernel")

    padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding)))
    out = np.zeros((x.shape[0], c_out, t_out), dtype=x.dtype)
    for j in range(width):
        out += np.einsum("bct,oc->bot", padded[:, :, j:j + t_out], kernel.data[:, :, j])
    out += bias.data[None, :, None]

    def grad_fn(g):
        gx_padded = np.zeros_like(padded)
        g_kernel = np.zeros_like(kernel.data)
        for j in range(width):
            window = padded[:, :, j:j + t_out]
            g_kernel[:, :, j] = np.einsum("bot,bct->oc", g, window)
            gx_padded[:, :, j:j + t_out] += np.einsum(
                "bot,oc->bct", g, kernel.data[:, :, j]
            )
        gx = gx_padded[:, :, padding:padding + x.shape[2]] if padding else gx_padded
        return gx, g_kernel, g.sum(axis=(0, 2))

    return _result(out, (x, kernel, bias), grad_fn)


def maxpool1d(x: Tensor, kernel: int = 2, stride: int = 2) -> Tensor:
    """Non-overlapping max pool over time; ties route to the first index."""
    if kernel != stride:
        raise ConfigError("maxpool1d supports kernel == stride only")
    batch, channels, length = x.shape
    t_out = length // kernel
    if t_out < 1:
        raise DataError(f"maxpool1d: sequence length {length} < kernel {kernel}")
    windows = x.data[:, :, : t_out * kernel].reshape(batch, channels, t_out, kernel)
    winners = windows.argmax(axis=3)

    def grad_fn(g):
        expanded = np.zeros_like(windows)
        np.put_along_axis(expanded, winners[..., None], g[..., None], axis=3)
        full = np.zeros_like(x.data)
        full[:, :, : t_out * kernel] = expanded.reshape(batch, channels, t_out * kernel)
        return (full,)

    return _result(windows.max(axis=3), (x,), grad_fn)


def dropout(x: Tensor, p: float, training: bool,
            rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: scales by 1/(1-p) at train time, identity at eval."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("training-mode dropout needs a seeded generator")
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return _result(x.data * mask, (x,), lambda g: (g * mask,))


def batchnorm_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5):
    """Batch normalization over axis 0 using biased batch variance.

    Returns (out, batch_mean, batch_var) with the statistics detached
    for running-average updates.
    """
    mean = mean_axis0(x)
    centered = add_bias(x, neg(mean))
    var = mean_axis0(mul(centered, centered))
    inv_std = powc(add_scalar(var, eps), -0.5)
    normalized = mul_bias(centered, inv_std)
    out = add_bias(mul_bias(normalized, gamma), beta)
    return out, mean.data.copy(), var.data.copy()


def batchnorm_eval(x: Tensor, gamma: Tensor, beta: Tensor,
                   running_mean: np.ndarray, running_var: np.ndarray,
                   eps: float = 1e-5) -> Tensor:
    """Eval-mode batchnorm: a pure affine map from running statistics."""
    inv_std = 1.0 / np.sqrt(running_var + eps)
    shift = Tensor((-running_mean * inv_std).astype(x.dtype))
    scale_const = Tensor(inv_std.astype(x.dtype))
    return add_bias(mul_bias(add_bias(mul_bias(x, scale_const), shift), gamma), beta)


# ---------------------------------------------------------------------------
# recurrent cell

@dataclass
class LSTMLayerParams:
    """Gate parameters for one layer; gate order i, f, g, o along 4H."""

    w_input: Tensor   # [I, 4H]
    w_hidden: Tensor  # [H, 4H]
    bias: Tensor      # [4H]

    @property
    def hidden_size(self) -> int:
        return self.w_hidden.shape[0]

    def tensors(self):
        return [self.w_input, self.w_hidden, self.bias]


def lstm_forward(x: Tensor, layers):
    """Run a stacked LSTM over x[B, T, I] from zero initial state.

    Returns (outputs[B, T, H] of the top layer, (h_final, c_final)
    lists with one [B, H] tensor per layer). Backward flows through
    every step (full backpropagation through time).
    """
    batch, t_len, _ = x.shape
    steps = [reshape(narrow(x, 1, t, 1), (batch, x.shape[2])) for t in range(t_len)]

    h_final, c_final = [], []
    for params in layers:
        hidden = params.hidden_size
        if params.w_input.shape[0] != steps[0].shape[1]:
            raise ShapeError(
                f"lstm: input width {steps[0].shape[1]} vs "
                f"w_input {params.w_input.shape}"
            )
        h = Tensor(np.zeros((batch, hidden), dtype=x.dtype))
        c = Tensor(np.zeros((batch, hidden), dtype=x.dtype))
        outputs = []
        for step in steps:
            gates = add_bias(
                add(matmul(step, params.w_input), matmul(h, params.w_hidden)),
                params.bias,
            )
            gate_in = sigmoid(narrow(gates, 1, 0, hidden))
            gate_forget = sigmoid(narrow(gates, 1, hidden, hidden))
            gate_cell = tanh(narrow(gates, 1, 2 * hidden, hidden))
            gate_out = sigmoid(narrow(gates, 1, 3 * hidden, hidden))
            c = add(mul(gate_forget, c), mul(gate_in, gate_cell))
            h = mul(gate_out, tanh(c))
            outputs.append(h)
        steps = outputs
        h_final.append(h)
        c_final.append(c)
    return stack_steps(steps), (h_final, c_final)


# ---------------------------------------------------------------------------
# losses

def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log softmax probability of the target classes."""
    targets = np.asarray(targets, dtype=np.int64)
    batch, n_classes = logits.shape
    if targets.shape != (batch,):
        raise ShapeError(f"targets shape {targets.shape} vs logits {logits.shape}")
    if targets.min() < 0 or targets.max() >= n_classes:
        raise DataError(
            f"target index out of range [0, {n_classes}): "
            f"min {targets.min()}, max {targets.max()}"
        )
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    losses = log_z - shifted[np.arange(batch), targets]
    probs = softmax(logits.data)

    def grad_fn(g):
        grad = probs.copy()
        grad[np.arange(batch), targets] -= 1.0
        return (grad * (g / batch),)

    return _result(np.asarray(losses.mean(), dtype=logits.dtype), (logits,), grad_fn)


def _flat_pair(pred: Tensor, target):
    target = np.asarray(target, dtype=pred.dtype).reshape(-1)
    if pred.size != target.size:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    return pred.data.reshape(-1), target


def l1_loss(pred: Tensor, target) -> Tensor:
    flat, target = _flat_pair(pred, target)
    diff = flat - target

    def grad_fn(g):
        return ((np.sign(diff) * (g / diff.size)).reshape(pred.shape),)

    return _result(np.asarray(np.abs(diff).mean(), dtype=pred.dtype), (pred,), grad_fn)


def mse_loss(pred: Tensor, target) -> Tensor:
    flat, target = _flat_pair(pred, target)
    diff = flat - target

    def grad_fn(g):
        return ((2.0 * diff * (g / diff.size)).reshape(pred.shape),)

    return _result(np.asarray((diff ** 2).mean(), dtype=pred.dtype), (pred,), grad_fn)


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class OptimizerState:
    """Adam moment accumulators; one slot per parameter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


class Adam:
    """Standard Adam with bias correction; parameters update in place."""

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.state = OptimizerState(
            lr=lr, beta1=beta1, beta2=beta2, eps=eps,
            m=[np.zeros_like(p.data) for p in self.params],
            v=[np.zeros_like(p.data) for p in self.params],
        )

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(self.params, self.state)


def adam_step(params, state: OptimizerState) -> None:
    """One Adam update; parameters with no gradient stay untouched."""
    state.step_count += 1
    t = state.step_count
    bias1 = 1.0 - state.beta1 ** t
    bias2 = 1.0 - state.beta2 ** t
    for i, p in enumerate(params):
        grad = p.grad
        if grad is None:
            continue
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad * grad
        m_hat = state.m[i] / bias1
        v_hat = state.v[i] / bias2
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def uniform_init(rng: np.random.Generator, shape, fan_in: int,
                 dtype=np.float32) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
