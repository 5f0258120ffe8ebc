"""Dense float64 tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array and, when an operation involves at least one
tensor with ``requires_grad=True``, records a backward closure. Calling
:func:`backward` on a scalar result walks the graph in reverse topological
order and accumulates gradients into every reachable leaf. Gradients
accumulate across calls until :func:`zero_grad`.
"""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, _coerce(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _coerce(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_coerce(other)))

    def __rsub__(self, other):
        return add(_coerce(other), neg(self))

    def __matmul__(self, other):
        return matmul(self, _coerce(other))

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def sum(self, axis=None):
        return tensor_sum(self, axis=axis)

    def reshape(self, shape):
        return reshape(self, shape)


def _coerce(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- primitive operations --------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def backward(out):
        _accumulate(a, _unbroadcast(out.grad, a.data.shape))
        _accumulate(b, _unbroadcast(out.grad, b.data.shape))

    return _node(out_data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def backward(out):
        _accumulate(a, _unbroadcast(out.grad * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(out.grad * a.data, b.data.shape))

    return _node(out_data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(out):
        _accumulate(a, -out.grad)

    return _node(-a.data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix/vector product for 1-D and 2-D operands, numpy semantics."""
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError(f"matmul supports 1-D/2-D operands, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data
    ad, bd = a.data, b.data

    def backward(out):
        g = out.grad
        if a.ndim == 2 and b.ndim == 2:
            _accumulate(a, g @ bd.T)
            _accumulate(b, ad.T @ g)
        elif a.ndim == 2 and b.ndim == 1:
            _accumulate(a, np.outer(g, bd))
            _accumulate(b, ad.T @ g)
        elif a.ndim == 1 and b.ndim == 2:
            _accumulate(a, bd @ g)
            _accumulate(b, np.outer(ad, g))
        else:
            _accumulate(a, g * bd)
            _accumulate(b, g * ad)

    return _node(out_data, (a, b), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0

    def backward(out):
        _accumulate(a, out.grad * mask)

    return _node(np.where(mask, a.data, 0.0), (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    """Elementwise 1/(1+exp(-x)), overflow-free for any finite input."""
    x = a.data
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)

    def backward(out):
        _accumulate(a, out.grad * s * (1.0 - s))

    return _node(s, (a,), backward)


def softmax_scaled(logits: Tensor, scale_dim: int) -> Tensor:
    """Softmax over a 1-D logit vector after dividing by sqrt(scale_dim)."""
    if logits.ndim != 1:
        raise ShapeError(f"softmax_scaled expects a 1-D tensor, got shape {logits.shape}")
    if logits.data.size == 0:
        raise ValueError("softmax_scaled: empty logit vector")
    if scale_dim < 1:
        raise ValueError(f"softmax_scaled: scale_dim must be >= 1, got {scale_dim}")
    inv_scale = 1.0 / np.sqrt(float(scale_dim))
    z = logits.data * inv_scale
    z = z - z.max()
    e = np.exp(z)
    s = e / e.sum()

    def backward(out):
        g = out.grad
        _accumulate(logits, (s * (g - float(g @ s))) * inv_scale)

    return _node(s, (logits,), backward)


def log(a: Tensor) -> Tensor:
    def backward(out):
        _accumulate(a, out.grad / a.data)

    return _node(np.log(a.data), (a,), backward)


def clamp(a: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    out_data = np.clip(a.data, lo, hi)
    inside = np.ones_like(a.data, dtype=bool)
    if lo is not None:
        inside &= a.data > lo
    if hi is not None:
        inside &= a.data < hi

    def backward(out):
        _accumulate(a, out.grad * inside)

    return _node(out_data, (a,), backward)


def tensor_sum(a: Tensor, axis: int | None = None) -> Tensor:
    out_data = a.data.sum(axis=axis)

    def backward(out):
        if axis is None:
            _accumulate(a, np.broadcast_to(out.grad, a.data.shape).copy())
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(out.grad, axis), a.data.shape).copy())

    return _node(out_data, (a,), backward)


def mean_rows(a: Tensor) -> Tensor:
    """Column-wise mean of a 2-D tensor (average over rows)."""
    if a.ndim != 2:
        raise ShapeError(f"mean_rows expects a 2-D tensor, got shape {a.shape}")
    n = a.data.shape[0]
    if n == 0:
        raise ValueError("mean_rows: no rows to average")
    return tensor_sum(a, axis=0) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    def backward(out):
        _accumulate(a, out.grad.reshape(a.data.shape))

    return _node(a.data.reshape(shape), (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_coerce(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(out):
        for t, piece in zip(tensors, np.split(out.grad, splits, axis=axis)):
            _accumulate(t, piece)

    return _node(out_data, tensors, backward)


def stack_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equal-length 1-D tensors into a 2-D tensor, one per row."""
    tensors = [_coerce(t) for t in tensors]
    for t in tensors:
        if t.ndim != 1:
            raise ShapeError(f"stack_rows expects 1-D tensors, got shape {t.shape}")
    out_data = np.stack([t.data for t in tensors])

    def backward(out):
        for i, t in enumerate(tensors):
            _accumulate(t, out.grad[i])

    return _node(out_data, tensors, backward)


def take_rows(a: Tensor, indices: Sequence[int]) -> Tensor:
    """Gather elements (1-D input) or rows (2-D input) along axis 0."""
    idx = np.asarray(indices, dtype=np.intp)
    out_data = a.data[idx]

    def backward(out):
        if a.requires_grad:
            g = np.zeros_like(a.data)
            np.add.at(g, idx, out.grad)
            _accumulate(a, g)

    return _node(out_data, (a,), backward)


def scatter_rows(values: Tensor, indices: Sequence[int], n_rows: int) -> Tensor:
    """Sum rows of `values` into an [n_rows x d] tensor at the given indices."""
    if values.ndim != 2:
        raise ShapeError(f"scatter_rows expects 2-D values, got shape {values.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    out_data = np.zeros((n_rows, values.data.shape[1]))
    np.add.at(out_data, idx, values.data)

    def backward(out):
        _accumulate(values, out.grad[idx])

    return _node(out_data, (values,), backward)


def dropout(a: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate == 0."""
    if not training or rate == 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    mask = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    return mul(a, Tensor(mask))


# -- reverse pass ----------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate gradients of every requires_grad tensor reachable from `loss`.

    The loss must contain a single element. Gradients accumulate; call
    :func:`zero_grad` between backward passes that should not add up.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


# -- Adam optimizer ---------------------------------------------------------

class AdamState:
    """Moment buffers and hyperparameters for Adam with bias correction."""

    def __init__(self, params: Sequence[Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
            raise ValueError(f"betas must lie in (0, 1), got {beta1}, {beta2}")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.first_moment = [np.zeros_like(p.data) for p in params]
        self.second_moment = [np.zeros_like(p.data) for p in params]


def adam_step(state: AdamState, params: Sequence[Tensor]) -> None:
    """One bias-corrected Adam update; zeroes gradients afterwards."""
    if len(params) != len(state.first_moment):
        raise ValueError(
            f"optimizer state tracks {len(state.first_moment)} parameters, got {len(params)}")
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"parameter {i} has no gradient; run backward first")
        if p.grad.shape != p.data.shape:
            raise ShapeError(f"gradient shape {p.grad.shape} != parameter shape {p.data.shape}")

    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.step_count
    bias2 = 1.0 - b2 ** state.step_count
    for p, m, v in zip(params, state.first_moment, state.second_moment):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
        p.zero_grad()
