"""Linear-chain CRF over per-position tag emissions.

Scores a tag sequence as start[y_1] + sum_l em[l, y_l] +
sum_{l>=2} trans[y_{l-1}, y_l] + end[y_N]. The log-partition runs the
forward recursion in log space; its gradient is the exact unary/pairwise
marginals obtained by the forward-backward recursions, so both losses here
are single autodiff nodes backed by the kernels module.

Transitions, start and end scores are all learned, initialized to zero, and
unconstrained: malformed BIO output is legal here and repaired downstream.
Viterbi is exact (output length is known) and breaks ties toward the lower
tag index at every backpointer.
"""

from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np

from . import kernels
from .errors import ShapeError
from .nn import Module
from .tensor import Tensor, make_op, sub


class CrfParams(Module):
    def __init__(self, n_tags: int):
        self.transitions = Tensor(np.zeros((n_tags, n_tags)))
        self.start = Tensor(np.zeros(n_tags))
        self.end = Tensor(np.zeros(n_tags))
        self.n_tags = n_tags


def _check(em: Tensor, params: CrfParams, tags=None):
    if em.data.ndim != 2 or em.shape[1] != params.n_tags:
        raise ShapeError(f"emissions {tuple(em.shape)} vs {params.n_tags} tags")
    if em.shape[0] < 1:
        raise ShapeError("emissions need at least one position")
    if tags is not None:
        t = np.asarray(tags, dtype=np.int64)
        if t.shape != (em.shape[0],):
            raise ShapeError(f"{t.shape[0] if t.ndim else 0} tags for {em.shape[0]} positions")
        if np.any((t < 0) | (t >= params.n_tags)):
            raise ShapeError(f"tag index out of range for {params.n_tags} tags")
        return t
    return None


def sequence_score(em: Tensor, params: CrfParams, tags: Sequence[int]) -> Tensor:
    t = _check(em, params, tags)
    n = em.shape[0]
    trans, start, end = params.transitions, params.start, params.end
    val = start.data[t[0]] + em.data[np.arange(n), t].sum() + end.data[t[-1]]
    if n > 1:
        val += trans.data[t[:-1], t[1:]].sum()

    def backward(g):
        g = float(g)
        np.add.at(em.grad, (np.arange(n), t), g)
        start.grad[t[0]] += g
        end.grad[t[-1]] += g
        if n > 1:
            np.add.at(trans.grad, (t[:-1], t[1:]), g)

    return make_op(np.float64(val), (em, trans, start, end), backward, "crf_sequence_score")


def log_partition(em: Tensor, params: CrfParams) -> Tensor:
    _check(em, params)
    trans, start, end = params.transitions, params.start, params.end
    logz, alphas = kernels.crf_forward(em.data, trans.data, start.data, end.data)

    def backward(g):
        g = float(g)
        betas = kernels.crf_backward(em.data, trans.data, end.data)
        unary = np.exp(alphas + betas - logz)  # P(y_l = j)
        em.grad[...] += g * unary
        start.grad[...] += g * unary[0]
        end.grad[...] += g * unary[-1]
        n = em.shape[0]
        if n > 1:
            pair = np.exp(
                alphas[:-1, :, None]
                + trans.data[None, :, :]
                + (em.data[1:] + betas[1:])[:, None, :]
                - logz
            )
            trans.grad[...] += g * pair.sum(axis=0)

    return make_op(np.float64(logz), (em, trans, start, end), backward, "crf_log_partition")


def nll_loss(em: Tensor, params: CrfParams, tags: Sequence[int]) -> Tensor:
    """-log P(tags | emissions); gradient w.r.t. emissions is
    (marginal - gold indicator)."""
    return sub(log_partition(em, params), sequence_score(em, params, tags))


def viterbi_decode(em, params: CrfParams) -> Tuple[List[int], float]:
    """Exact argmax tag sequence and its score."""
    data = em.data if isinstance(em, Tensor) else np.asarray(em, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != params.n_tags:
        raise ShapeError(f"emissions {data.shape} vs {params.n_tags} tags")
    path, score = kernels.viterbi(
        np.ascontiguousarray(data), params.transitions.data, params.start.data, params.end.data
    )
    return [int(i) for i in path], float(score)


def sequence_log_likelihood(em, params: CrfParams, tags: Sequence[int]) -> float:
    """log P(tags | emissions) <= 0; graph-free."""
    data = em.data if isinstance(em, Tensor) else np.asarray(em, dtype=np.float64)
    t = np.asarray(tags, dtype=np.int64)
    n = data.shape[0]
    score = params.start.data[t[0]] + data[np.arange(n), t].sum() + params.end.data[t[-1]]
    if n > 1:
        score += params.transitions.data[t[:-1], t[1:]].sum()
    logz, _ = kernels.crf_forward(
        np.ascontiguousarray(data), params.transitions.data, params.start.data, params.end.data
    )
    return float(score - logz)


def brute_force_log_partition(em: np.ndarray, trans: np.ndarray, start: np.ndarray,
                              end: np.ndarray) -> float:
    """Exhaustive enumeration over all |L|^N paths. Test oracle; also the
    reference the acceptance suite holds the recursion to."""
    n, k = em.shape
    paths = np.indices((k,) * n).reshape(n, -1).T  # [k^n, n]
    scores = start[paths[:, 0]] + end[paths[:, -1]] + em[np.arange(n), paths].sum(axis=1)
    if n > 1:
        scores += trans[paths[:, :-1], paths[:, 1:]].sum(axis=1)
    m = scores.max()
    return float(m + np.log(np.exp(scores - m).sum()))


def brute_force_viterbi(em: np.ndarray, trans: np.ndarray, start: np.ndarray,
                        end: np.ndarray) -> Tuple[List[int], float]:
    """Exhaustive argmax; first (lexicographically smallest) path wins ties."""
    n, k = em.shape
    paths = np.indices((k,) * n).reshape(n, -1).T
    scores = start[paths[:, 0]] + end[paths[:, -1]] + em[np.arange(n), paths].sum(axis=1)
    if n > 1:
        scores += trans[paths[:, :-1], paths[:, 1:]].sum(axis=1)
    best = int(scores.argmax())
    return [int(i) for i in paths[best]], float(scores[best])
