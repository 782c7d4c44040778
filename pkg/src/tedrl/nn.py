"""Minimal dense-network engine on float64 numpy arrays.

Reverse-mode differentiation is implemented micrograd-style: every operation
returns a `Tensor` holding the forward value plus a closure that accumulates
adjoints into its parents. Calling :func:`backward` on a scalar loss
topologically sorts the recorded graph and runs the closures in reverse.

Includes parameter containers for dense networks, Adam, and the
exponential-moving-average update used for target encoders.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InputShapeError, NumericalError

Array = np.ndarray

_LN_EPS = 1e-5


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the computation graph.

    `data` is always a float64 ndarray (scalars become 0-d arrays). `grad`
    is populated by :func:`backward`; it is None until then. Leaf tensors
    created with ``requires_grad=True`` are trainable parameters.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, parents: tuple["Tensor", ...] = (), op: str = "leaf",
                 requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.op = op
        self._parents = parents
        self._backward: Callable[[], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.data.shape})"

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: Array, parents: tuple[Tensor, ...], op: str) -> Tensor:
    return Tensor(data, parents=parents, op=op)


# -- primitive operations ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data + b.data, (a, b), "add")

    def back():
        if a.requires_grad:
            a.grad += _unbroadcast(out.grad, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(out.grad, b.data.shape)

    out._backward = back
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data - b.data, (a, b), "sub")

    def back():
        if a.requires_grad:
            a.grad += _unbroadcast(out.grad, a.data.shape)
        if b.requires_grad:
            b.grad -= _unbroadcast(out.grad, b.data.shape)

    out._backward = back
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data * b.data, (a, b), "mul")

    def back():
        if a.requires_grad:
            a.grad += _unbroadcast(out.grad * b.data, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(out.grad * a.data, b.data.shape)

    out._backward = back
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise InputShapeError(
            f"matmul expects 2-d operands, got {a.data.shape} @ {b.data.shape}")
    out = _make(a.data @ b.data, (a, b), "matmul")

    def back():
        if a.requires_grad:
            a.grad += out.grad @ b.data.T
        if b.requires_grad:
            b.grad += a.data.T @ out.grad

    out._backward = back
    return out


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = _make(np.maximum(a.data, 0.0), (a,), "relu")

    def back():
        if a.requires_grad:
            a.grad += out.grad * (a.data > 0.0)

    out._backward = back
    return out


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    out = _make(t, (a,), "tanh")

    def back():
        if a.requires_grad:
            a.grad += out.grad * (1.0 - t * t)

    out._backward = back
    return out


def absolute(a: Tensor) -> Tensor:
    """Elementwise |x| with subgradient 0 at x = 0."""
    a = as_tensor(a)
    out = _make(np.abs(a.data), (a,), "abs")

    def back():
        if a.requires_grad:
            a.grad += out.grad * np.sign(a.data)

    out._backward = back
    return out


def square(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = _make(a.data * a.data, (a,), "square")

    def back():
        if a.requires_grad:
            a.grad += out.grad * 2.0 * a.data

    out._backward = back
    return out


def log_sigmoid(a: Tensor) -> Tensor:
    """Numerically stable log(sigmoid(x)) = -softplus(-x)."""
    a = as_tensor(a)
    x = a.data
    val = np.where(x > 0, -np.log1p(np.exp(-x)), x - np.log1p(np.exp(x)))
    out = _make(val, (a,), "log_sigmoid")

    def back():
        if a.requires_grad:
            # d/dx log sigmoid(x) = sigmoid(-x)
            a.grad += out.grad * sigmoid_np(-x)

    out._backward = back
    return out


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    out = _make(a.data.sum(axis=axis), (a,), "sum")

    def back():
        if a.requires_grad:
            g = out.grad
            if axis is not None:
                g = np.expand_dims(g, axis)
            a.grad += np.broadcast_to(g, a.data.shape)

    out._backward = back
    return out


def tmean(a: Tensor, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    out = _make(a.data.mean(axis=axis), (a,), "mean")

    def back():
        if a.requires_grad:
            g = out.grad
            if axis is not None:
                g = np.expand_dims(g, axis)
            a.grad += np.broadcast_to(g, a.data.shape) / n

    out._backward = back
    return out


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = _make(np.concatenate([p.data for p in parts], axis=axis),
                tuple(parts), "concat")
    splits = np.cumsum([p.data.shape[axis] for p in parts])[:-1]

    def back():
        pieces = np.split(out.grad, splits, axis=axis)
        for p, g in zip(parts, pieces):
            if p.requires_grad:
                p.grad += g

    out._backward = back
    return out


def take_per_row(a: Tensor, idx: Array) -> Tensor:
    """out[i] = a[i, idx[i]] for a 2-d tensor; used for Q(z, a_t)."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    rows = np.arange(a.data.shape[0])
    out = _make(a.data[rows, idx], (a,), "take_per_row")

    def back():
        if a.requires_grad:
            g = np.zeros_like(a.data)
            np.add.at(g, (rows, idx), out.grad)
            a.grad += g

    out._backward = back
    return out


def layer_norm(a: Tensor, eps: float = _LN_EPS) -> Tensor:
    """Per-row normalization over the last axis (no learned affine)."""
    a = as_tensor(a)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out = _make(y, (a,), "layer_norm")

    def back():
        if a.requires_grad:
            g = out.grad
            gm = g.mean(axis=-1, keepdims=True)
            gym = (g * y).mean(axis=-1, keepdims=True)
            a.grad += inv * (g - gm - y * gym)

    out._backward = back
    return out


def sigmoid_np(x: Array) -> Array:
    """Plain (non-graph) stable sigmoid."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- backward pass -----------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate `.grad` on every tensor the scalar `loss` depends on.

    Gradients accumulate, so trainable leaves must be cleared with
    :func:`zero_grads` before each backward pass.
    """
    if loss.data.ndim != 0:
        raise InputShapeError(f"backward expects a scalar loss, got shape {loss.shape}")
    order = _topo_order(loss)
    if not np.isfinite(loss.data):
        for node in order:
            if not np.all(np.isfinite(node.data)):
                raise NumericalError(f"non-finite value produced by node '{node.op}'")
        raise NumericalError("non-finite loss")
    for node in order:
        if node.grad is None or node._parents:
            node.grad = np.zeros_like(node.data)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.requires_grad:
            node._backward()


def zero_grads(tensors: Sequence[Tensor]) -> None:
    for t in tensors:
        t.grad = np.zeros_like(t.data)


# -- dense networks ----------------------------------------------------------

ACTIVATIONS = ("relu", "tanh", "none")


@dataclass
class DenseNetParams:
    """Ordered (weights, biases) layer list with an activation per layer.

    `final_layer_norm` normalizes the last layer's pre-activation before its
    activation is applied, matching the encoder trunk convention
    (linear -> layer norm -> tanh).
    """

    weights: list[Tensor]
    biases: list[Tensor]
    activations: tuple[str, ...]
    final_layer_norm: bool = False

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or len(self.weights) != len(self.activations):
            raise InputShapeError("layer list lengths disagree")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise InputShapeError(f"unknown activation {act!r}")
        for i in range(len(self.weights) - 1):
            if self.weights[i].shape[1] != self.weights[i + 1].shape[0]:
                raise InputShapeError(
                    f"layer {i} output dim {self.weights[i].shape[1]} does not "
                    f"match layer {i + 1} input dim {self.weights[i + 1].shape[0]}")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def tensors(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def init_dense_net(rng: np.random.Generator, sizes: Sequence[int],
                   activations: Sequence[str], final_layer_norm: bool = False,
                   requires_grad: bool = True) -> DenseNetParams:
    """Uniform +-1/sqrt(fan_in) weights, zero biases."""
    weights, biases = [], []
    for d_in, d_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(d_in)
        w = rng.uniform(-bound, bound, size=(d_in, d_out))
        weights.append(Tensor(w, requires_grad=requires_grad))
        biases.append(Tensor(np.zeros(d_out), requires_grad=requires_grad))
    return DenseNetParams(weights, biases, tuple(activations), final_layer_norm)


def net_forward(params: DenseNetParams, x) -> Tensor:
    """Forward pass building the gradient graph; `x` is (batch, in_dim)."""
    h = as_tensor(x)
    if h.data.ndim != 2:
        raise InputShapeError(f"net_forward expects (batch, {params.in_dim}), got {h.shape}")
    if h.data.shape[1] != params.in_dim:
        raise InputShapeError(
            f"input dim {h.data.shape[1]} does not match first layer {params.in_dim}")
    last = len(params.weights) - 1
    for i, (w, b, act) in enumerate(zip(params.weights, params.biases, params.activations)):
        h = matmul(h, w) + b
        if i == last and params.final_layer_norm:
            h = layer_norm(h)
        if act == "relu":
            h = relu(h)
        elif act == "tanh":
            h = tanh(h)
    return h


def net_apply(params: DenseNetParams, x: Array) -> Array:
    """Graph-free forward convenience; accepts (d,) or (batch, d)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    out = net_forward(params, x[None, :] if single else x).data
    return out[0] if single else out


def copy_net(params: DenseNetParams, requires_grad: bool = False) -> DenseNetParams:
    weights = [Tensor(w.data.copy(), requires_grad=requires_grad) for w in params.weights]
    biases = [Tensor(b.data.copy(), requires_grad=requires_grad) for b in params.biases]
    return DenseNetParams(weights, biases, params.activations, params.final_layer_norm)


def make_encoder(rng: np.random.Generator, in_dim: int, latent_dim: int,
                 hidden: Sequence[int] = (128, 128),
                 layer_norm_final: bool = True) -> DenseNetParams:
    """Encoder trunk: hidden relu layers, linear to latent, layer norm, tanh.

    The final tanh bounds every latent coordinate to [-1, 1].
    """
    sizes = [in_dim, *hidden, latent_dim]
    activations = ["relu"] * len(hidden) + ["tanh"]
    return init_dense_net(rng, sizes, activations, final_layer_norm=layer_norm_final)


def make_q_head(rng: np.random.Generator, latent_dim: int, n_actions: int,
                hidden: Sequence[int] = (128,)) -> DenseNetParams:
    sizes = [latent_dim, *hidden, n_actions]
    activations = ["relu"] * len(hidden) + ["none"]
    return init_dense_net(rng, sizes, activations)


# -- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    """Per-tensor first/second moment accumulators with bias correction."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[Array] = field(default_factory=list)
    v: list[Array] = field(default_factory=list)


def adam_init(tensors: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=0,
                     m=[np.zeros_like(t.data) for t in tensors],
                     v=[np.zeros_like(t.data) for t in tensors])


def adam_step(state: AdamState, tensors: Sequence[Tensor]) -> None:
    """Apply one Adam update in place; each tensor is updated independently."""
    if len(tensors) != len(state.m):
        raise InputShapeError("optimizer state does not match parameter list")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for i, t in enumerate(tensors):
        g = t.grad
        if g is None:
            raise NumericalError("adam_step called before backward populated grads")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        t.data = t.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def ema_update(online: DenseNetParams, target: DenseNetParams, rate: float) -> None:
    """target <- rate * online + (1 - rate) * target, elementwise in place.

    Small `rate` keeps the target slow-moving; rate = 1 copies the online
    network outright.
    """
    for o, t in zip(online.tensors(), target.tensors()):
        if o.data.shape != t.data.shape:
            raise InputShapeError("online/target parameter shapes disagree")
        t.data = rate * o.data + (1.0 - rate) * t.data
