"""Minimal reverse-mode autodiff over float64 numpy arrays.

A forward pass builds a tape of `Var` nodes; `backward` walks the tape in
reverse topological order and accumulates vector-Jacobian products. The op
set is exactly what the models in this repo need, including batched
per-sample matrix products so gradients flow into dynamically generated
layer weights.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ShapeError, StateError
from . import functional as F


class Var:
    """One tape node: a value, its accumulated gradient and a vjp closure."""

    __slots__ = ("value", "grad", "parents", "vjp", "name")

    def __init__(self, value, parents=(), vjp=None, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents: tuple[Var, ...] = tuple(parents)
        self.vjp: Callable | None = vjp
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Var{tag}(shape={self.value.shape})"


def leaf(value: np.ndarray, name: str | None = None) -> Var:
    return Var(value, name=name)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum out axes that broadcasting introduced or expanded."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a: Var, b: Var) -> Var:
    out = a.value + b.value

    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

    return Var(out, (a, b), vjp)


def mul(a: Var, b: Var) -> Var:
    out = a.value * b.value

    def vjp(g):
        return (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        )

    return Var(out, (a, b), vjp)


def scale(a: Var, c: float) -> Var:
    return Var(a.value * c, (a,), lambda g: (g * c,))


def matmul(a: Var, b: Var) -> Var:
    if a.value.shape[-1] != b.value.shape[0]:
        raise ShapeError(
            f"matmul: inner dims {a.value.shape[-1]} vs {b.value.shape[0]}"
        )
    out = a.value @ b.value

    def vjp(g):
        return g @ b.value.T, a.value.T @ g

    return Var(out, (a, b), vjp)


def bmm_vec(w: Var, x: Var) -> Var:
    """Per-sample matrix-vector product: (n,m,k) x (n,k) -> (n,m)."""
    if w.value.ndim != 3 or x.value.ndim != 2:
        raise ShapeError("bmm_vec expects (n,m,k) and (n,k)")
    if w.value.shape[0] != x.value.shape[0] or w.value.shape[2] != x.value.shape[1]:
        raise ShapeError(
            f"bmm_vec: {w.value.shape} incompatible with {x.value.shape}"
        )
    out = np.einsum("nmk,nk->nm", w.value, x.value)

    def vjp(g):
        gw = np.einsum("nm,nk->nmk", g, x.value)
        gx = np.einsum("nm,nmk->nk", g, w.value)
        return gw, gx

    return Var(out, (w, x), vjp)


def relu(a: Var) -> Var:
    mask = a.value > 0

    def vjp(g):
        return (g * mask,)

    return Var(a.value * mask, (a,), vjp)


def tanh(a: Var) -> Var:
    t = np.tanh(a.value)

    def vjp(g):
        return (g * (1.0 - t * t),)

    return Var(t, (a,), vjp)


def sigmoid(a: Var) -> Var:
    s = F.sigmoid(a.value)

    def vjp(g):
        return (g * s * (1.0 - s),)

    return Var(s, (a,), vjp)


def softmax_rows(a: Var) -> Var:
    s = F.softmax_rows(a.value)

    def vjp(g):
        dot = np.sum(g * s, axis=-1, keepdims=True)
        return (s * (g - dot),)

    return Var(s, (a,), vjp)


def reshape(a: Var, shape: Sequence[int]) -> Var:
    orig = a.value.shape
    return Var(a.value.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def concat_cols(parts: Sequence[Var]) -> Var:
    """Concatenate 2D vars along axis 1."""
    widths = [p.value.shape[1] for p in parts]
    out = np.concatenate([p.value for p in parts], axis=1)

    def vjp(g):
        grads, lo = [], 0
        for w in widths:
            grads.append(g[:, lo : lo + w])
            lo += w
        return tuple(grads)

    return Var(out, tuple(parts), vjp)


def concat_rows(parts: Sequence[Var]) -> Var:
    """Concatenate 2D vars along axis 0."""
    heights = [p.value.shape[0] for p in parts]
    out = np.concatenate([p.value for p in parts], axis=0)

    def vjp(g):
        grads, lo = [], 0
        for h in heights:
            grads.append(g[lo : lo + h])
            lo += h
        return tuple(grads)

    return Var(out, tuple(parts), vjp)


def slice_cols(a: Var, lo: int, hi: int) -> Var:
    out = a.value[:, lo:hi]

    def vjp(g):
        full = np.zeros_like(a.value)
        full[:, lo:hi] = g
        return (full,)

    return Var(out, (a,), vjp)


def gather_rows(table: Var, idx: np.ndarray) -> Var:
    """Row lookup (n,) indices into a (V,d) table; scatter-add on backward."""
    idx = np.asarray(idx)
    out = table.value[idx]

    def vjp(g):
        gt = np.zeros_like(table.value)
        np.add.at(gt, idx, g)
        return (gt,)

    return Var(out, (table,), vjp)


def take_rows(a: Var, idx: np.ndarray) -> Var:
    """Select rows of a 2D var; used for per-scenario routing."""
    idx = np.asarray(idx)
    out = a.value[idx]

    def vjp(g):
        ga = np.zeros_like(a.value)
        np.add.at(ga, idx, g)
        return (ga,)

    return Var(out, (a,), vjp)


def dropout(a: Var, rate: float, rng: np.random.Generator) -> Var:
    """Inverted dropout: scale kept units by 1/(1-rate) at train time."""
    if rate <= 0.0:
        return a
    keep = rng.random(a.value.shape) >= rate
    m = keep / (1.0 - rate)

    def vjp(g):
        return (g * m,)

    return Var(a.value * m, (a,), vjp)


def sum_all(a: Var) -> Var:
    def vjp(g):
        return (np.broadcast_to(g, a.value.shape).copy(),)

    return Var(np.sum(a.value), (a,), vjp)


def mean_all(a: Var) -> Var:
    n = a.value.size

    def vjp(g):
        return (np.broadcast_to(g / n, a.value.shape).copy(),)

    return Var(np.mean(a.value), (a,), vjp)


def bce(pred: Var, labels: np.ndarray) -> Var:
    """Mean BCE against fixed binary labels; clamps only inside the logs."""
    y = np.asarray(labels, dtype=np.float64).ravel()
    p = pred.value.ravel()
    if p.shape != y.shape:
        raise ShapeError(f"bce: {p.shape[0]} predictions vs {y.shape[0]} labels")
    n = y.size
    pc = np.clip(p, F.BCE_EPS, 1.0 - F.BCE_EPS)
    loss = -np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))

    def vjp(g):
        gp = g * (pc - y) / (pc * (1.0 - pc)) / n
        return (gp.reshape(pred.value.shape),)

    return Var(loss, (pred,), vjp)


def predict_probs(logits: Var, eps: float = 1e-12) -> Var:
    """Sigmoid clamped strictly inside (0,1); the model's output head."""
    s = np.clip(F.sigmoid(logits.value), eps, 1.0 - eps)

    def vjp(g):
        return (g * s * (1.0 - s),)

    return Var(s, (logits,), vjp)


def batch_norm(
    x: Var,
    gamma: Var,
    beta: Var,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
    momentum: float,
    eps: float = 1e-5,
) -> Var:
    """Per-feature batch normalization over axis 0.

    Train mode normalizes with biased batch statistics and updates the
    running buffers in place; eval mode is a fixed affine map.
    """
    if train:
        mu = x.value.mean(axis=0)
        var = x.value.var(axis=0)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.value - mu) * inv
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var
        out = xhat * gamma.value + beta.value
        n = x.value.shape[0]

        def vjp(g):
            dgamma = _unbroadcast(g * xhat, gamma.value.shape)
            dbeta = _unbroadcast(g, beta.value.shape)
            dxhat = g * gamma.value
            dx = (
                inv
                / n
                * (
                    n * dxhat
                    - dxhat.sum(axis=0)
                    - xhat * (dxhat * xhat).sum(axis=0)
                )
            )
            return dx, dgamma, dbeta

        return Var(out, (x, gamma, beta), vjp)

    inv = 1.0 / np.sqrt(running_var + eps)
    xhat = (x.value - running_mean) * inv
    out = xhat * gamma.value + beta.value

    def vjp(g):
        dgamma = _unbroadcast(g * xhat, gamma.value.shape)
        dbeta = _unbroadcast(g, beta.value.shape)
        return g * (gamma.value * inv), dgamma, dbeta

    return Var(out, (x, gamma, beta), vjp)


def backward(root: Var) -> None:
    """Reverse-mode sweep from a scalar root; accumulates into Var.grad."""
    if root.value.ndim != 0 and root.value.size != 1:
        raise StateError("backward expects a scalar root")

    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)

    for node in reversed(order):
        if node.grad is None or node.vjp is None:
            continue
        grads = node.vjp(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=np.float64, copy=True)
            else:
                parent.grad += g
