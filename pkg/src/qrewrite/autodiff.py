"""Minimal reverse-mode automatic differentiation over numpy arrays.

A fixed operator set (embedding gather, add, matmul, layer norm, masked
softmax, log-softmax, relu, dropout, reshape/transpose, gathers and weighted
reductions) is enough to express the encoder-decoder models. Each op records
a closure that scatters the output gradient back to its parents; ``backward``
walks the graph once in reverse topological order.

Gradient correctness is pinned by finite-difference tests, not by symmetry
with any framework.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


class Var:
    """A node in the computation graph: an ndarray plus backward plumbing."""

    __slots__ = ("value", "grad", "parents", "backward_fn")

    def __init__(self, value: np.ndarray, parents: tuple = (), backward_fn=None):
        self.value = value
        self.grad: np.ndarray | None = None
        self.parents = parents
        self.backward_fn = backward_fn

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape


def _accum(var: Var, g: np.ndarray) -> None:
    if var.grad is None:
        var.grad = np.zeros_like(var.value)
    var.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient back to the shape it was broadcast from."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(root: Var) -> None:
    """Accumulate gradients of ``root`` (a scalar) into every reachable Var."""
    if root.value.ndim != 0:
        raise ValueError("backward expects a scalar root")
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)


def constant(value: np.ndarray) -> Var:
    return Var(np.asarray(value))


def add(a: Var, b: Var) -> Var:
    out = Var(a.value + b.value, (a, b))

    def bw(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(g, b.value.shape))

    out.backward_fn = bw
    return out


def add_const(a: Var, c) -> Var:
    out = Var(a.value + c, (a,))
    out.backward_fn = lambda g: _accum(a, _unbroadcast(g, a.value.shape))
    return out


def mul_const(a: Var, c) -> Var:
    out = Var(a.value * c, (a,))
    out.backward_fn = lambda g: _accum(a, _unbroadcast(g * c, a.value.shape))
    return out


def matmul(a: Var, b: Var) -> Var:
    out = Var(np.matmul(a.value, b.value), (a, b))

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.value, -1, -2))
        gb = np.matmul(np.swapaxes(a.value, -1, -2), g)
        _accum(a, _unbroadcast(ga, a.value.shape))
        _accum(b, _unbroadcast(gb, b.value.shape))

    out.backward_fn = bw
    return out


def embedding(table: Var, ids: np.ndarray) -> Var:
    out = Var(table.value[ids], (table,))

    def bw(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.value)
        np.add.at(table.grad, ids, g)

    out.backward_fn = bw
    return out


def relu(a: Var) -> Var:
    mask = a.value > 0
    out = Var(a.value * mask, (a,))
    out.backward_fn = lambda g: _accum(a, g * mask)
    return out


def reshape(a: Var, shape: tuple[int, ...]) -> Var:
    out = Var(a.value.reshape(shape), (a,))
    out.backward_fn = lambda g: _accum(a, g.reshape(a.value.shape))
    return out


def transpose(a: Var, axes: tuple[int, ...]) -> Var:
    inverse = np.argsort(axes)
    out = Var(a.value.transpose(axes), (a,))
    out.backward_fn = lambda g: _accum(a, g.transpose(inverse))
    return out


def layer_norm(x: Var, gamma: Var, beta: Var, eps: float = 1e-5) -> Var:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    mu = x.value.mean(axis=-1, keepdims=True)
    centered = x.value - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = Var(gamma.value * xhat + beta.value, (x, gamma, beta))

    def bw(g):
        reduce_axes = tuple(range(g.ndim - 1))
        _accum(gamma, (g * xhat).sum(axis=reduce_axes))
        _accum(beta, g.sum(axis=reduce_axes))
        dxhat = g * gamma.value
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        _accum(x, dx)

    out.backward_fn = bw
    return out


def softmax_masked(scores: Var, additive_mask: np.ndarray | None = None) -> Var:
    """Softmax over the last axis after adding a (non-differentiable) mask."""
    z = scores.value if additive_mask is None else scores.value + additive_mask
    z = z - z.max(axis=-1, keepdims=True)
    expz = np.exp(z)
    p = expz / expz.sum(axis=-1, keepdims=True)
    out = Var(p, (scores,))

    def bw(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        _accum(scores, p * (g - dot))

    out.backward_fn = bw
    return out


def log_softmax(x: Var) -> Var:
    z = x.value - x.value.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    out = Var(logp, (x,))

    def bw(g):
        _accum(x, g - np.exp(logp) * g.sum(axis=-1, keepdims=True))

    out.backward_fn = bw
    return out


def dropout(x: Var, rate: float, rng: np.random.Generator | None) -> Var:
    """Inverted dropout; ``rng is None`` means eval mode (identity)."""
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.value.shape) >= rate).astype(x.value.dtype) / (1.0 - rate)
    out = Var(x.value * keep, (x,))
    out.backward_fn = lambda g: _accum(x, g * keep)
    return out


def gather_last(x: Var, idx: np.ndarray) -> Var:
    """out[..., t] = x[..., t, idx[..., t]] -- pick one entry along the last axis."""
    picked = np.take_along_axis(x.value, idx[..., None], axis=-1)[..., 0]
    out = Var(picked, (x,))

    def bw(g):
        if x.grad is None:
            x.grad = np.zeros_like(x.value)
        np.put_along_axis(
            x.grad,
            idx[..., None],
            np.take_along_axis(x.grad, idx[..., None], axis=-1) + g[..., None],
            axis=-1,
        )

    out.backward_fn = bw
    return out


def weighted_sum(x: Var, weights: np.ndarray) -> Var:
    """Scalar sum(x * weights) with constant weights."""
    out = Var(np.asarray((x.value * weights).sum()), (x,))
    out.backward_fn = lambda g: _accum(x, g * weights)
    return out


def masked_row_sum(x: Var, mask: np.ndarray) -> Var:
    """Per-row sum over the last axis, counting only positions where mask holds."""
    weights = mask.astype(x.value.dtype)
    out = Var((x.value * weights).sum(axis=-1), (x,))
    out.backward_fn = lambda g: _accum(x, g[..., None] * weights)
    return out


def add_all(terms: Sequence[Var]) -> Var:
    acc = terms[0]
    for term in terms[1:]:
        acc = add(acc, term)
    return acc
