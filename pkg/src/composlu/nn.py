"""Neural layers built on the autodiff engine: linear/norm/embedding
primitives, multi-head attention, and the pre-norm transformer blocks used
by every sub-network.

Parameters are float64, initialized uniformly in +-sqrt(6/(fan_in+fan_out))
from the seeded generator handed to each constructor; biases start at zero.
Dropout draws from counter-based streams so a fixed seed reproduces a run
exactly regardless of how many times other streams were consumed.
"""

from __future__ import annotations

import hashlib
import math
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Tensor


def uniform_init(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape))


def sinusoid_table(n: int, dm: int) -> np.ndarray:
    pos = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(0, dm, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, i / dm)
    table = np.zeros((n, dm))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : dm - dm // 2])
    return table


def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))


class Module:
    """Minimal container: children and parameters are discovered by walking
    instance attributes in insertion order, so parameter paths and traversal
    order are deterministic."""

    training: bool = False

    def named_parameters(self, prefix: str = ""):
        out = []
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Tensor):
                out.append((path, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(path + "."))
            elif isinstance(value, list) and value and all(isinstance(v, Module) for v in value):
                for k, sub in enumerate(value):
                    out.extend(sub.named_parameters(f"{path}.{k}."))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def set_train(self, flag: bool):
        self.training = flag
        for value in vars(self).values():
            if isinstance(value, Module):
                value.set_train(flag)
            elif isinstance(value, list):
                for v in value:
                    if isinstance(v, Module):
                        v.set_train(flag)


def _stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.blake2s(text.encode(), digest_size=8).digest(), "little")


class DropoutStream:
    """Hands out dropout units with stable per-unit random streams.

    Units are numbered in construction order within a namespace; the mask
    for call ``c`` of unit ``u`` comes from ``default_rng((seed, h(ns), u, c))``,
    independent of every other stream.
    """

    def __init__(self, seed: int, namespace: str):
        self.seed = int(seed)
        self.ns = _stable_hash(namespace)
        self._next = 0

    def make(self, p: float) -> "Dropout":
        unit = self._next
        self._next += 1
        return Dropout(p, self.seed, self.ns, unit)


class Dropout(Module):
    def __init__(self, p: float, seed: int, ns: int, unit: int):
        self.p = float(p)
        self._key = (seed, ns, unit)
        self.calls = 0

    def __call__(self, x: Tensor) -> Tensor:
        if not self.training or self.p <= 0.0:
            return x
        rng = np.random.default_rng((*self._key, self.calls))
        self.calls += 1
        return T.dropout(x, self.p, rng, train=True)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.w = uniform_init(rng, n_in, n_out, (n_in, n_out))
        self.b = Tensor(np.zeros(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.w), self.b)


class LayerNorm(Module):
    """Normalizes the last axis; epsilon 1e-5."""

    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones(dim))
        self.bias = Tensor(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        eps = self.eps
        mu = x.data.mean(axis=-1, keepdims=True)
        d = x.data - mu
        var = (d * d).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xh = d * inv
        out_data = xh * self.gain.data + self.bias.data
        gain, bias = self.gain, self.bias
        n = x.data.shape[-1]

        def backward(g):
            dxh = g * gain.data
            gain.grad[...] += (g * xh).reshape(-1, n).sum(axis=0)
            bias.grad[...] += g.reshape(-1, n).sum(axis=0)
            x.grad[...] += inv * (
                dxh
                - dxh.mean(axis=-1, keepdims=True)
                - xh * (dxh * xh).mean(axis=-1, keepdims=True)
            )

        return T.make_op(out_data, (x, gain, bias), backward, "layer_norm")


class Embedding(Module):
    def __init__(self, n_vocab: int, dm: int, rng: np.random.Generator):
        self.table = uniform_init(rng, n_vocab, dm, (n_vocab, dm))
        self._scale = math.sqrt(dm)

    def __call__(self, ids) -> Tensor:
        return T.scale(T.embedding_lookup(self.table, ids), self._scale)


class MultiHeadAttention(Module):
    """Scaled dot-product attention with per-head projections.

    ``mask`` is a boolean keep-mask of shape [Lq, Lk]; fully masked query
    rows fall back to uniform attention and are counted in
    ``last_fallback_rows`` instead of producing NaNs.
    """

    def __init__(self, dm: int, heads: int, rng: np.random.Generator):
        if dm % heads != 0:
            raise ConfigError(f"model dim {dm} not divisible by {heads} heads")
        self.dm = dm
        self.heads = heads
        self.dh = dm // heads
        self.wq = Linear(dm, dm, rng)
        self.wk = Linear(dm, dm, rng)
        self.wv = Linear(dm, dm, rng)
        self.wo = Linear(dm, dm, rng)
        self.last_fallback_rows = 0

    def __call__(self, q_in: Tensor, k_in: Tensor, v_in: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        lq, lk = q_in.shape[0], k_in.shape[0]
        if mask is None:
            mask = np.ones((lq, lk), dtype=bool)
        q = self.wq(q_in)
        k = self.wk(k_in)
        v = self.wv(v_in)
        qh = T.transpose(T.reshape(q, (lq, self.heads, self.dh)), (1, 0, 2))
        kh = T.transpose(T.reshape(k, (lk, self.heads, self.dh)), (1, 0, 2))
        vh = T.transpose(T.reshape(v, (lk, self.heads, self.dh)), (1, 0, 2))
        scores = T.scale(T.bmm(qh, T.transpose(kh, (0, 2, 1))), 1.0 / math.sqrt(self.dh))
        weights, n_fallback = T.masked_softmax(scores, mask[None, :, :])
        self.last_fallback_rows = n_fallback
        ctx = T.reshape(T.transpose(T.bmm(weights, vh), (1, 0, 2)), (lq, self.dm))
        return self.wo(ctx)


class FeedForward(Module):
    def __init__(self, dm: int, d_ff: int, rng: np.random.Generator):
        self.lin1 = Linear(dm, d_ff, rng)
        self.lin2 = Linear(d_ff, dm, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(T.relu(self.lin1(x)))


class EncoderLayer(Module):
    """Pre-norm self-attention block."""

    def __init__(self, dm: int, heads: int, d_ff: int, p: float, rng, drops: DropoutStream):
        self.norm1 = LayerNorm(dm)
        self.attn = MultiHeadAttention(dm, heads, rng)
        self.drop1 = drops.make(p)
        self.norm2 = LayerNorm(dm)
        self.ff = FeedForward(dm, d_ff, rng)
        self.drop2 = drops.make(p)

    def __call__(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        h = self.norm1(x)
        x = T.add(x, self.drop1(self.attn(h, h, h, mask)))
        x = T.add(x, self.drop2(self.ff(self.norm2(x))))
        return x


class DecoderLayer(Module):
    """Pre-norm block: causal self-attention, cross-attention, feed-forward."""

    def __init__(self, dm: int, heads: int, d_ff: int, p: float, rng, drops: DropoutStream):
        self.norm1 = LayerNorm(dm)
        self.self_attn = MultiHeadAttention(dm, heads, rng)
        self.drop1 = drops.make(p)
        self.norm2 = LayerNorm(dm)
        self.cross_attn = MultiHeadAttention(dm, heads, rng)
        self.drop2 = drops.make(p)
        self.norm3 = LayerNorm(dm)
        self.ff = FeedForward(dm, d_ff, rng)
        self.drop3 = drops.make(p)

    def __call__(self, x: Tensor, memory: Tensor, self_mask: np.ndarray) -> Tensor:
        h = self.norm1(x)
        x = T.add(x, self.drop1(self.self_attn(h, h, h, self_mask)))
        h = self.norm2(x)
        x = T.add(x, self.drop2(self.cross_attn(h, memory, memory)))
        x = T.add(x, self.drop3(self.ff(self.norm3(x))))
        return x


class CrossEncoderLayer(Module):
    """Pre-norm block: self-attention then optional cross-attention to a
    second memory sequence (the speech-attention sublayer)."""

    def __init__(self, dm: int, heads: int, d_ff: int, p: float, rng, drops: DropoutStream,
                 cross: bool):
        self.norm1 = LayerNorm(dm)
        self.self_attn = MultiHeadAttention(dm, heads, rng)
        self.drop1 = drops.make(p)
        self.cross = cross
        if cross:
            self.norm_x = LayerNorm(dm)
            self.cross_attn = MultiHeadAttention(dm, heads, rng)
            self.drop_x = drops.make(p)
        self.norm2 = LayerNorm(dm)
        self.ff = FeedForward(dm, d_ff, rng)
        self.drop2 = drops.make(p)

    def __call__(self, x: Tensor, memory: Optional[Tensor]) -> Tensor:
        h = self.norm1(x)
        x = T.add(x, self.drop1(self.self_attn(h, h, h)))
        if self.cross:
            h = self.norm_x(x)
            x = T.add(x, self.drop_x(self.cross_attn(h, memory, memory)))
        x = T.add(x, self.drop2(self.ff(self.norm2(x))))
        return x
