"""Minimal reverse-mode autodiff over numpy arrays.

Covers exactly the operations the models need: dense affine maps, GRU
nonlinearities, row gather/scatter, pooling, and masked log-softmax.
Everything is float64; graphs are rebuilt per forward pass.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from kgconv.errors import DimensionError

# When True, ops skip recording parents/backward closures (forward-only).
_NO_GRAD = False


class no_grad:
    """Context manager: build no backward graph inside (faster forwards)."""

    def __enter__(self):
        global _NO_GRAD
        self._prev = _NO_GRAD
        _NO_GRAD = True
        return self

    def __exit__(self, *exc):
        global _NO_GRAD
        _NO_GRAD = self._prev
        return False


class Var:
    """One node of a dynamically built computation graph."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        if _NO_GRAD:
            self._parents: tuple[Var, ...] = ()
            self._backward: Callable[[np.ndarray], None] | None = None
        else:
            self._parents = parents
            self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Var(shape={self.data.shape})"


def leaf(data) -> Var:
    return Var(np.asarray(data, dtype=np.float64))


def zeros(shape) -> Var:
    return Var(np.zeros(shape, dtype=np.float64))


def backward(root: Var) -> None:
    """Accumulate gradients of `root` (scalar) into every reachable node."""
    if root.data.ndim != 0:
        raise DimensionError("backward() expects a scalar root")
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    for node in order:
        node.grad = np.zeros_like(node.data)
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


def _accum(v: Var, g: np.ndarray) -> None:
    if v.grad is None:
        v.grad = np.zeros_like(v.data)
    v.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce gradient `g` back to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def add(a: Var, b: Var) -> Var:
    out_data = a.data + b.data
    if _NO_GRAD:
        return Var(out_data)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return Var(out_data, (a, b), bwd)


def sub(a: Var, b: Var) -> Var:
    out_data = a.data - b.data
    if _NO_GRAD:
        return Var(out_data)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, -_unbroadcast(g, b.data.shape))

    return Var(out_data, (a, b), bwd)


def mul(a: Var, b: Var) -> Var:
    out_data = a.data * b.data
    if _NO_GRAD:
        return Var(out_data)

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return Var(out_data, (a, b), bwd)


def scale(a: Var, c: float) -> Var:
    if _NO_GRAD:
        return Var(a.data * c)

    def bwd(g):
        _accum(a, g * c)

    return Var(a.data * c, (a,), bwd)


def matmul(a: Var, b: Var) -> Var:
    if _NO_GRAD:
        return Var(a.data @ b.data)
    if a.data.ndim == 1 and b.data.ndim == 2:
        out_data = a.data @ b.data

        def bwd(g):
            _accum(a, g @ b.data.T)
            _accum(b, np.outer(a.data, g))

    elif a.data.ndim == 2 and b.data.ndim == 2:
        out_data = a.data @ b.data

        def bwd(g):
            _accum(a, g @ b.data.T)
            _accum(b, a.data.T @ g)

    elif a.data.ndim == 2 and b.data.ndim == 1:
        out_data = a.data @ b.data

        def bwd(g):
            _accum(a, np.outer(g, b.data))
            _accum(b, a.data.T @ g)

    else:
        raise DimensionError(f"matmul on shapes {a.data.shape} x {b.data.shape}")
    return Var(out_data, (a, b), bwd)


def dot(a: Var, b: Var) -> Var:
    if a.data.shape != b.data.shape or a.data.ndim != 1:
        raise DimensionError(f"dot on shapes {a.data.shape}, {b.data.shape}")
    out_data = a.data @ b.data
    if _NO_GRAD:
        return Var(out_data)

    def bwd(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return Var(out_data, (a, b), bwd)


def sigmoid(a: Var) -> Var:
    out_data = 1.0 / (1.0 + np.exp(-a.data))
    if _NO_GRAD:
        return Var(out_data)

    def bwd(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return Var(out_data, (a,), bwd)


def tanh(a: Var) -> Var:
    out_data = np.tanh(a.data)
    if _NO_GRAD:
        return Var(out_data)

    def bwd(g):
        _accum(a, g * (1.0 - out_data * out_data))

    return Var(out_data, (a,), bwd)


def maximum(a: Var, b: Var) -> Var:
    """Elementwise max; ties route the gradient to `a`."""
    take_a = a.data >= b.data
    out_data = np.where(take_a, a.data, b.data)
    if _NO_GRAD:
        return Var(out_data)

    def bwd(g):
        _accum(a, _unbroadcast(g * take_a, a.data.shape))
        _accum(b, _unbroadcast(g * ~take_a, b.data.shape))

    return Var(out_data, (a, b), bwd)


def concat(vs: Sequence[Var]) -> Var:
    """Concatenate 1-D vectors."""
    vs = list(vs)
    out_data = np.concatenate([v.data for v in vs])
    if _NO_GRAD:
        return Var(out_data)
    offsets = np.cumsum([0] + [v.data.shape[0] for v in vs])

    def bwd(g):
        for v, lo, hi in zip(vs, offsets[:-1], offsets[1:]):
            _accum(v, g[lo:hi])

    return Var(out_data, tuple(vs), bwd)


def stack_rows(vs: Sequence[Var]) -> Var:
    """Stack 1-D vectors into a matrix, one per row."""
    vs = list(vs)
    out_data = np.stack([v.data for v in vs])
    if _NO_GRAD:
        return Var(out_data)

    def bwd(g):
        for i, v in enumerate(vs):
            _accum(v, g[i])

    return Var(out_data, tuple(vs), bwd)


def stack_scalars(vs: Sequence[Var]) -> Var:
    vs = list(vs)
    out_data = np.array([v.data for v in vs], dtype=np.float64)
    if _NO_GRAD:
        return Var(out_data)

    def bwd(g):
        for i, v in enumerate(vs):
            _accum(v, g[i])

    return Var(out_data, tuple(vs), bwd)


def vstack(ms: Sequence[Var]) -> Var:
    """Concatenate matrices along the row dimension."""
    ms = list(ms)
    out_data = np.concatenate([m.data for m in ms], axis=0)
    if _NO_GRAD:
        return Var(out_data)
    offsets = np.cumsum([0] + [m.data.shape[0] for m in ms])

    def bwd(g):
        for m, lo, hi in zip(ms, offsets[:-1], offsets[1:]):
            _accum(m, g[lo:hi])

    return Var(out_data, tuple(ms), bwd)


def row(m: Var, i: int) -> Var:
    out_data = m.data[i]
    if _NO_GRAD:
        return Var(out_data)

    def bwd(g):
        full = np.zeros_like(m.data)
        full[i] = g
        _accum(m, full)

    return Var(out_data, (m,), bwd)


def gather_rows(m: Var, idx) -> Var:
    idx = np.asarray(idx, dtype=np.intp)
    out_data = m.data[idx]
    if _NO_GRAD:
        return Var(out_data)

    def bwd(g):
        full = np.zeros_like(m.data)
        np.add.at(full, idx, g)
        _accum(m, full)

    return Var(out_data, (m,), bwd)


def gather(v: Var, idx) -> Var:
    idx = np.asarray(idx, dtype=np.intp)
    out_data = v.data[idx]
    if _NO_GRAD:
        return Var(out_data)

    def bwd(g):
        full = np.zeros_like(v.data)
        np.add.at(full, idx, g)
        _accum(v, full)

    return Var(out_data, (v,), bwd)


def segment_sum(m: Var, seg, n: int) -> Var:
    """Sum rows of `m` into `n` buckets given by `seg` (one id per row)."""
    seg = np.asarray(seg, dtype=np.intp)
    out_data = np.zeros((n, m.data.shape[1]), dtype=np.float64)
    np.add.at(out_data, seg, m.data)
    if _NO_GRAD:
        return Var(out_data)

    def bwd(g):
        _accum(m, g[seg])

    return Var(out_data, (m,), bwd)


def scale_rows(m: Var, w) -> Var:
    """Multiply each row of `m` by a constant coefficient (no grad for `w`)."""
    w = np.asarray(w, dtype=np.float64).reshape(-1, 1)
    if _NO_GRAD:
        return Var(m.data * w)

    def bwd(g):
        _accum(m, g * w)

    return Var(m.data * w, (m,), bwd)


def mean_rows(m: Var) -> Var:
    if m.data.shape[0] == 0:
        raise DimensionError("mean_rows of an empty matrix")
    k = m.data.shape[0]
    out_data = m.data.mean(axis=0)
    if _NO_GRAD:
        return Var(out_data)

    def bwd(g):
        _accum(m, np.tile(g / k, (k, 1)))

    return Var(out_data, (m,), bwd)


def max_rows(m: Var) -> Var:
    """Column-wise max over rows; gradient routed to the first argmax row."""
    if m.data.shape[0] == 0:
        raise DimensionError("max_rows of an empty matrix")
    arg = np.argmax(m.data, axis=0)
    out_data = m.data[arg, np.arange(m.data.shape[1])]
    if _NO_GRAD:
        return Var(out_data)

    def bwd(g):
        full = np.zeros_like(m.data)
        full[arg, np.arange(m.data.shape[1])] = g
        _accum(m, full)

    return Var(out_data, (m,), bwd)


def vsum(v: Var) -> Var:
    out_data = np.asarray(v.data.sum())
    if _NO_GRAD:
        return Var(out_data)

    def bwd(g):
        _accum(v, np.full_like(v.data, float(g)))

    return Var(out_data, (v,), bwd)


def neg(a: Var) -> Var:
    if _NO_GRAD:
        return Var(-a.data)

    def bwd(g):
        _accum(a, -g)

    return Var(-a.data, (a,), bwd)


def log_softmax(v: Var) -> Var:
    if v.data.ndim != 1:
        raise DimensionError("log_softmax expects a vector")
    m = v.data.max()
    shifted = v.data - m
    lse = m + np.log(np.exp(shifted).sum())
    out_data = v.data - lse
    if _NO_GRAD:
        return Var(out_data)
    soft = np.exp(out_data)

    def bwd(g):
        _accum(v, g - soft * g.sum())

    return Var(out_data, (v,), bwd)
