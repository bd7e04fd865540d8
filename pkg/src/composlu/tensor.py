"""Reverse-mode automatic differentiation over float64 numpy arrays.

A Tensor wraps a value array and a gradient array of the same shape. Every
operation records its parent tensors and a backward closure; calling
``backward()`` on a scalar walks the recorded nodes in reverse creation
order, which is a valid topological order because parents are always
created before their children. The walk order is deterministic, so repeated
backward passes over the same graph accumulate bit-identical gradients.

Graphs are cheap throwaway objects: build, backward, discard. Inference
code should wrap model calls in ``no_grad()`` to skip recording.
"""

from __future__ import annotations

import itertools
from typing import Optional, Sequence

import numpy as np

from .errors import ShapeError

_NODE_IDS = itertools.count()
_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    __slots__ = ("data", "_grad", "node_id", "op", "parents", "_backward")

    def __init__(self, data, parents=(), backward=None, op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self._grad: Optional[np.ndarray] = None
        self.node_id = next(_NODE_IDS)
        self.op = op
        self.parents: tuple = parents
        self._backward = backward

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        if self._grad is not None:
            self._grad[...] = 0.0

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), op="detach")

    def item(self) -> float:
        return float(self.data)

    def backward(self):
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar root, got shape {self.shape}")
        nodes = []
        seen = set()
        stack = [self]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(t.parents)
        nodes.sort(key=lambda t: t.node_id)
        self.grad[...] = 1.0
        for t in reversed(nodes):
            if t._backward is not None:
                t._backward(t.grad)

    # convenience arithmetic
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else shift(self, float(other))

    def __radd__(self, other):
        return shift(self, float(other))

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else shift(self, -float(other))

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, op={self.op!r}, id={self.node_id})"


def tensor(data) -> Tensor:
    return Tensor(data)


def make_op(data, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    """Wrap an op result; records the node only while grads are enabled.

    ``backward`` receives the output gradient and must accumulate (+=) into
    each parent's ``.grad``.
    """
    if _GRAD_ENABLED:
        return Tensor(data, parents=tuple(parents), backward=backward, op=op)
    return Tensor(data, op=op)


def graph_nodes(root: Tensor):
    """All nodes reachable from ``root``, sorted by creation order."""
    nodes = []
    seen = set()
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t.parents)
    return sorted(nodes, key=lambda t: t.node_id)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def backward(g):
        a.grad[...] += _unbroadcast(g, a.shape)
        b.grad[...] += _unbroadcast(g, b.shape)

    return make_op(out_data, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data

    def backward(g):
        a.grad[...] += _unbroadcast(g, a.shape)
        b.grad[...] -= _unbroadcast(g, b.shape)

    return make_op(out_data, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def backward(g):
        a.grad[...] += _unbroadcast(g * b.data, a.shape)
        b.grad[...] += _unbroadcast(g * a.data, b.shape)

    return make_op(out_data, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    def backward(g):
        a.grad[...] += c * g

    return make_op(a.data * c, (a,), backward, "scale")


def shift(a: Tensor, c: float) -> Tensor:
    def backward(g):
        a.grad[...] += g

    return make_op(a.data + c, (a,), backward, "shift")


def mul_array(a: Tensor, arr: np.ndarray) -> Tensor:
    """Elementwise product with a constant array (no gradient to ``arr``)."""
    def backward(g):
        a.grad[...] += _unbroadcast(g * arr, a.shape)

    return make_op(a.data * arr, (a,), backward, "mul_array")


def add_array(a: Tensor, arr: np.ndarray) -> Tensor:
    """Sum with a constant array (positional encodings and the like)."""
    def backward(g):
        a.grad[...] += _unbroadcast(g, a.shape)

    return make_op(a.data + arr, (a,), backward, "add_array")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {tuple(a.shape)} @ {tuple(b.shape)}")
    out_data = a.data @ b.data

    def backward(g):
        a.grad[...] += g @ b.data.T
        b.grad[...] += a.data.T @ g

    return make_op(out_data, (a, b), backward, "matmul")


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul over a leading axis: [H,m,k] @ [H,k,n] -> [H,m,n]."""
    if a.data.ndim != 3 or b.data.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"bmm shape mismatch: {tuple(a.shape)} @ {tuple(b.shape)}")
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        a.grad[...] += np.matmul(g, b.data.swapaxes(-1, -2))
        b.grad[...] += np.matmul(a.data.swapaxes(-1, -2), g)

    return make_op(out_data, (a, b), backward, "bmm")


def transpose(a: Tensor, axes=None) -> Tensor:
    out_data = np.transpose(a.data, axes)
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)

    def backward(g):
        a.grad[...] += np.transpose(g, inv)

    return make_op(out_data, (a,), backward, "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    out_data = np.reshape(a.data, shape)
    orig = a.data.shape

    def backward(g):
        a.grad[...] += np.reshape(g, orig)

    return make_op(out_data, (a,), backward, "reshape")


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out_data = a.data[idx]

    def backward(g):
        a.grad[idx] += g

    return make_op(out_data, (a,), backward, "narrow")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(g):
        off = 0
        for t, s in zip(tensors, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(off, off + s)
            t.grad[...] += g[tuple(idx)]
            off += s

    return make_op(out_data, tuple(tensors), backward, "concat")


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0)

    def backward(g):
        a.grad[...] += g * (a.data > 0.0)

    return make_op(out_data, (a,), backward, "relu")


def sum_all(a: Tensor) -> Tensor:
    def backward(g):
        a.grad[...] += g

    return make_op(a.data.sum(), (a,), backward, "sum_all")


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def backward(g):
        a.grad[...] += g / n

    return make_op(a.data.mean(), (a,), backward, "mean_all")


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    out_data = table.data[ids]

    def backward(g):
        np.add.at(table.grad, ids, g)

    return make_op(out_data, (table,), backward, "embedding_lookup")


def logsumexp(a: Tensor, axis: int) -> Tensor:
    if a.data.shape[axis] == 0:
        raise ShapeError(f"logsumexp over empty axis {axis} of shape {tuple(a.shape)}")
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out_data = np.squeeze(m + np.log(s), axis=axis)

    def backward(g):
        soft = e / s
        a.grad[...] += soft * np.expand_dims(g, axis)

    return make_op(out_data, (a,), backward, "logsumexp")


def log_softmax(a: Tensor) -> Tensor:
    """Log-softmax over the last axis."""
    m = a.data.max(axis=-1, keepdims=True)
    z = a.data - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out_data = z - lse

    def backward(g):
        a.grad[...] += g - np.exp(out_data) * g.sum(axis=-1, keepdims=True)

    return make_op(out_data, (a,), backward, "log_softmax")


def masked_softmax(a: Tensor, mask: np.ndarray):
    """Softmax over the last axis with a boolean keep-mask.

    Masked positions receive zero weight. Rows whose mask is entirely False
    fall back to uniform weights over all keys and contribute no gradient;
    the number of such rows is returned as a diagnostic.
    """
    mb = np.broadcast_to(np.asarray(mask, dtype=bool), a.data.shape)
    row_ok = mb.any(axis=-1)
    neg = np.where(mb, a.data, -np.inf)
    safe = np.where(row_ok[..., None], neg, 0.0)
    m = safe.max(axis=-1, keepdims=True)
    e = np.exp(safe - m)
    p = e / e.sum(axis=-1, keepdims=True)
    n_fallback = int((~row_ok).sum())

    def backward(g):
        dx = p * (g - (g * p).sum(axis=-1, keepdims=True))
        if n_fallback:
            dx = np.where(row_ok[..., None], dx, 0.0)
        a.grad[...] += dx

    return make_op(p, (a,), backward, "masked_softmax"), n_fallback


def softmax_cross_entropy(logits: Tensor, targets, ignore_index: int = -100) -> Tensor:
    """Mean negative log-softmax of the target class per row.

    Rows whose target equals ``ignore_index`` contribute neither loss nor
    gradient. All targets ignored yields a zero-loss constant.
    """
    t = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or t.shape != (logits.shape[0],):
        raise ShapeError(
            f"cross entropy needs [n,V] logits and n targets, got {tuple(logits.shape)} and {t.shape}"
        )
    v = logits.shape[1]
    live = t != ignore_index
    if np.any((t[live] < 0) | (t[live] >= v)):
        bad = t[live][(t[live] < 0) | (t[live] >= v)][0]
        raise IndexError(f"target {bad} out of range for vocabulary of size {v}")
    n_live = int(live.sum())
    m = logits.data.max(axis=-1, keepdims=True)
    z = logits.data - m
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    if n_live == 0:
        return make_op(np.float64(0.0), (logits,), lambda g: None, "softmax_cross_entropy")
    rows = np.nonzero(live)[0]
    loss = -logp[rows, t[rows]].mean()

    def backward(g):
        d = np.exp(logp[rows])
        d[np.arange(len(rows)), t[rows]] -= 1.0
        logits.grad[rows] += d * (g / n_live)

    return make_op(np.float64(loss), (logits,), backward, "softmax_cross_entropy")


def dropout(a: Tensor, p: float, rng: Optional[np.random.Generator], train: bool) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not train or p <= 0.0:
        return a
    keep = (rng.random(a.data.shape) >= p) / (1.0 - p)
    return mul_array(a, keep)
