"""Minimal reverse-mode autodiff over float64 numpy arrays.

The graph itself is the tape: every op returns a Tensor holding its parents
and a closure that maps the upstream gradient to parent gradients.
`backward` walks the graph in reverse topological order and accumulates
gradients additively into every parameter it reaches.
"""

from __future__ import annotations

import numpy as np

from ..errors import NonFiniteLoss, NonScalarLoss
from . import backend as K


class Tensor:
    __slots__ = ("value", "grad", "parents", "grad_fn", "requires_grad", "name")

    def __init__(self, value, parents=(), grad_fn=None, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.grad_fn = grad_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"


def param(value, name=None) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def constant(value) -> Tensor:
    return Tensor(value)


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(node) through the recorded graph.

    Parameters never touched by the loss simply keep grad None; callers
    should treat that as a zero gradient (see grad_or_zero).
    """
    if loss.value.ndim != 0 and loss.value.size != 1:
        raise NonScalarLoss(f"loss has shape {loss.value.shape}")
    if not np.isfinite(loss.value):
        raise NonFiniteLoss(f"loss is {float(loss.value)}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.value)
    for node in reversed(topo):
        if node.grad_fn is None or node.grad is None:
            continue
        grads = node.grad_fn(node.grad)
        for p, g in zip(node.parents, grads):
            if not p.requires_grad or g is None:
                continue
            if p.grad is None:
                p.grad = np.array(g, dtype=np.float64)
            else:
                p.grad = p.grad + g


def grad_or_zero(t: Tensor) -> np.ndarray:
    return t.grad if t.grad is not None else np.zeros_like(t.value)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- basic ops

def add(a: Tensor, b: Tensor) -> Tensor:
    def grad_fn(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)
    return Tensor(a.value + b.value, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def grad_fn(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)
    return Tensor(a.value - b.value, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def grad_fn(g):
        return (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        )
    return Tensor(a.value * b.value, (a, b), grad_fn)


def scale(a: Tensor, c: float) -> Tensor:
    def grad_fn(g):
        return (g * c,)
    return Tensor(a.value * c, (a,), grad_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """1D @ 2D, 2D @ 2D or 2D @ 1D."""
    av, bv = a.value, b.value
    out = av @ bv

    def grad_fn(g):
        if av.ndim == 1 and bv.ndim == 2:
            return g @ bv.T, np.outer(av, g)
        if av.ndim == 2 and bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        return g @ bv.T, av.T @ g
    return Tensor(out, (a, b), grad_fn)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.value)

    def grad_fn(g):
        return (g * (1.0 - out * out),)
    return Tensor(out, (a,), grad_fn)


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.value))

    def grad_fn(g):
        return (g * out * (1.0 - out),)
    return Tensor(out, (a,), grad_fn)


def concat(tensors: list[Tensor]) -> Tensor:
    """Concatenate 1D tensors."""
    sizes = [t.value.shape[0] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        return tuple(g[offsets[i] : offsets[i + 1]] for i in range(len(tensors)))
    return Tensor(np.concatenate([t.value for t in tensors]), tuple(tensors), grad_fn)


def slice1d(a: Tensor, start: int, stop: int) -> Tensor:
    def grad_fn(g):
        full = np.zeros_like(a.value)
        full[start:stop] = g
        return (full,)
    return Tensor(a.value[start:stop], (a,), grad_fn)


def row(a: Tensor, idx: int) -> Tensor:
    """Select one row of a 2D tensor."""
    def grad_fn(g):
        full = np.zeros_like(a.value)
        full[idx] = g
        return (full,)
    return Tensor(a.value[idx], (a,), grad_fn)


def column(a: Tensor, idx: int) -> Tensor:
    """Select one column of a 2D tensor."""
    def grad_fn(g):
        full = np.zeros_like(a.value)
        full[:, idx] = g
        return (full,)
    return Tensor(a.value[:, idx], (a,), grad_fn)


def stack_rows(tensors: list[Tensor]) -> Tensor:
    """Stack 1D tensors into a 2D [len, dim] tensor."""
    def grad_fn(g):
        return tuple(g[i] for i in range(len(tensors)))
    return Tensor(np.stack([t.value for t in tensors]), tuple(tensors), grad_fn)


def sum_all(a: Tensor) -> Tensor:
    def grad_fn(g):
        return (np.full_like(a.value, float(g)),)
    return Tensor(a.value.sum(), (a,), grad_fn)


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    diff = pred.value - target
    n = diff.size

    def grad_fn(g):
        return (float(g) * 2.0 * diff / n,)
    return Tensor(np.mean(diff * diff), (pred,), grad_fn)


def softmax_cross_entropy(logits: Tensor, label: int) -> Tensor:
    z = logits.value - logits.value.max()
    e = np.exp(z)
    p = e / e.sum()
    loss = -np.log(max(p[label], 1e-300))

    def grad_fn(g):
        d = p.copy()
        d[label] -= 1.0
        return (float(g) * d,)
    return Tensor(loss, (logits,), grad_fn)


def embedding_row(table: Tensor, idx: int) -> Tensor:
    """Row lookup in an embedding table with sparse gradient."""
    def grad_fn(g):
        full = np.zeros_like(table.value)
        full[idx] = g
        return (full,)
    return Tensor(table.value[idx], (table,), grad_fn)


def weighted_sum(terms: list[tuple[float, Tensor]]) -> Tensor:
    """Scalar combination sum(w_i * t_i) of scalar tensors."""
    val = sum(w * float(t.value) for w, t in terms)

    def grad_fn(g):
        return tuple(float(g) * w for w, _ in terms)
    return Tensor(np.float64(val), tuple(t for _, t in terms), grad_fn)


# ------------------------------------------------------------- fused kernels

def lstm_seq(x: Tensor, h0: Tensor, c0: Tensor, W: Tensor, U: Tensor, b: Tensor) -> Tensor:
    """Whole-sequence LSTM as a single taped op (backend kernel)."""
    hs, cs, gates = K.lstm_seq_forward(x.value, h0.value, c0.value, W.value, U.value, b.value)
    H = h0.value.shape[0]

    def grad_fn(g):
        g = np.ascontiguousarray(g)
        return K.lstm_seq_backward(
            g, np.zeros(H), x.value, h0.value, c0.value, W.value, U.value, hs, cs, gates
        )
    return Tensor(hs, (x, h0, c0, W, U, b), grad_fn)


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, W: Tensor, U: Tensor, b: Tensor) -> Tensor:
    """Single LSTM step; returns [h; c] concatenated (slice to separate)."""
    xv = np.ascontiguousarray(x.value[None, :])
    hs, cs, gates = K.lstm_seq_forward(xv, h_prev.value, c_prev.value, W.value, U.value, b.value)
    H = h_prev.value.shape[0]

    def grad_fn(g):
        d_hs = np.ascontiguousarray(g[None, :H])
        dc_last = np.ascontiguousarray(g[H:])
        dx, dh0, dc0, dW, dU, db = K.lstm_seq_backward(
            d_hs, dc_last, xv, h_prev.value, c_prev.value, W.value, U.value, hs, cs, gates
        )
        return dx[0], dh0, dc0, dW, dU, db
    return Tensor(np.concatenate([hs[0], cs[0]]), (x, h_prev, c_prev, W, U, b), grad_fn)
