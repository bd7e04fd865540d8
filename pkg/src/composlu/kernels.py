"""Hot numeric kernels: chain-structured dynamic programs that dominate
training and scoring time.

Each kernel exists twice: a numba ``@njit`` build of the loop form and a
vectorized pure-numpy form. The active path is chosen at import time by the
``COMPOSLU_NUMBA`` environment variable ("0"/"false"/"off" forces the numpy
path); when numba is not importable the numpy path is used regardless.
Both paths are always importable by name so tests and the benchmark in
``benchmarks/bench_kernels.py`` can compare them directly.

All kernels take contiguous float64 / int64 arrays and are pure functions.
"""

from __future__ import annotations

import os

import numpy as np

_env = os.environ.get("COMPOSLU_NUMBA", "1").strip().lower()
WANT_NUMBA = _env not in ("0", "false", "off", "no")

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on bare installs
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(fn):
            return fn

        return deco


USING_NUMBA = WANT_NUMBA and HAVE_NUMBA


# ---------------------------------------------------------------------------
# Loop forms (numba-compiled when available)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _crf_forward_loop(em, trans, start, end):
    n, k = em.shape
    alphas = np.empty((n, k))
    for j in range(k):
        alphas[0, j] = start[j] + em[0, j]
    for l in range(1, n):
        for j in range(k):
            m = alphas[l - 1, 0] + trans[0, j]
            for i in range(1, k):
                v = alphas[l - 1, i] + trans[i, j]
                if v > m:
                    m = v
            s = 0.0
            for i in range(k):
                s += np.exp(alphas[l - 1, i] + trans[i, j] - m)
            alphas[l, j] = em[l, j] + m + np.log(s)
    m = alphas[n - 1, 0] + end[0]
    for j in range(1, k):
        v = alphas[n - 1, j] + end[j]
        if v > m:
            m = v
    s = 0.0
    for j in range(k):
        s += np.exp(alphas[n - 1, j] + end[j] - m)
    return m + np.log(s), alphas


@njit(cache=True)
def _crf_backward_loop(em, trans, end):
    n, k = em.shape
    betas = np.empty((n, k))
    for i in range(k):
        betas[n - 1, i] = end[i]
    for l in range(n - 2, -1, -1):
        for i in range(k):
            m = trans[i, 0] + em[l + 1, 0] + betas[l + 1, 0]
            for j in range(1, k):
                v = trans[i, j] + em[l + 1, j] + betas[l + 1, j]
                if v > m:
                    m = v
            s = 0.0
            for j in range(k):
                s += np.exp(trans[i, j] + em[l + 1, j] + betas[l + 1, j] - m)
            betas[l, i] = m + np.log(s)
    return betas


@njit(cache=True)
def _viterbi_loop(em, trans, start, end):
    n, k = em.shape
    delta = np.empty((n, k))
    bp = np.zeros((n, k), dtype=np.int64)
    for j in range(k):
        delta[0, j] = start[j] + em[0, j]
    for l in range(1, n):
        for j in range(k):
            best = delta[l - 1, 0] + trans[0, j]
            arg = 0
            for i in range(1, k):
                v = delta[l - 1, i] + trans[i, j]
                if v > best:  # strict: ties keep the lower tag index
                    best = v
                    arg = i
            delta[l, j] = em[l, j] + best
            bp[l, j] = arg
    best = delta[n - 1, 0] + end[0]
    arg = 0
    for j in range(1, k):
        v = delta[n - 1, j] + end[j]
        if v > best:
            best = v
            arg = j
    path = np.empty(n, dtype=np.int64)
    path[n - 1] = arg
    for l in range(n - 1, 0, -1):
        path[l - 1] = bp[l, path[l]]
    return path, best


@njit(cache=True)
def _edit_distance_loop(a, b):
    # Tie preference: substitution/match, then deletion, then insertion.
    m, n = a.shape[0], b.shape[0]
    cost = np.empty((m + 1, n + 1), dtype=np.int64)
    subs = np.zeros((m + 1, n + 1), dtype=np.int64)
    ins = np.zeros((m + 1, n + 1), dtype=np.int64)
    dels = np.zeros((m + 1, n + 1), dtype=np.int64)
    for i in range(m + 1):
        cost[i, 0] = i
        dels[i, 0] = i
    for j in range(n + 1):
        cost[0, j] = j
        ins[0, j] = j
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            hit = 0 if a[i - 1] == b[j - 1] else 1
            c_diag = cost[i - 1, j - 1] + hit
            c_del = cost[i - 1, j] + 1
            c_ins = cost[i, j - 1] + 1
            if c_diag <= c_del and c_diag <= c_ins:
                cost[i, j] = c_diag
                subs[i, j] = subs[i - 1, j - 1] + hit
                ins[i, j] = ins[i - 1, j - 1]
                dels[i, j] = dels[i - 1, j - 1]
            elif c_del <= c_ins:
                cost[i, j] = c_del
                subs[i, j] = subs[i - 1, j]
                ins[i, j] = ins[i - 1, j]
                dels[i, j] = dels[i - 1, j] + 1
            else:
                cost[i, j] = c_ins
                subs[i, j] = subs[i, j - 1]
                ins[i, j] = ins[i, j - 1] + 1
                dels[i, j] = dels[i, j - 1]
    return subs[m, n], ins[m, n], dels[m, n]


# ---------------------------------------------------------------------------
# Pure-numpy forms
# ---------------------------------------------------------------------------


def _lse(v, axis):
    m = v.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(v - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def crf_forward_numpy(em, trans, start, end):
    n, _ = em.shape
    alphas = np.empty_like(em)
    alphas[0] = start + em[0]
    for l in range(1, n):
        alphas[l] = em[l] + _lse(alphas[l - 1][:, None] + trans, axis=0)
    return float(_lse(alphas[-1] + end, axis=0)), alphas


def crf_backward_numpy(em, trans, end):
    n, _ = em.shape
    betas = np.empty_like(em)
    betas[-1] = end
    for l in range(n - 2, -1, -1):
        betas[l] = _lse(trans + (em[l + 1] + betas[l + 1])[None, :], axis=1)
    return betas


def viterbi_numpy(em, trans, start, end):
    n, k = em.shape
    delta = np.empty_like(em)
    bp = np.zeros((n, k), dtype=np.int64)
    delta[0] = start + em[0]
    for l in range(1, n):
        v = delta[l - 1][:, None] + trans
        bp[l] = v.argmax(axis=0)  # first max: ties keep the lower tag index
        delta[l] = em[l] + v[bp[l], np.arange(k)]
    final = delta[-1] + end
    arg = int(final.argmax())
    path = np.empty(n, dtype=np.int64)
    path[-1] = arg
    for l in range(n - 1, 0, -1):
        path[l - 1] = bp[l, path[l]]
    return path, float(final[arg])


def edit_distance_numpy(a, b):
    m, n = len(a), len(b)
    cost = np.empty((m + 1, n + 1), dtype=np.int64)
    subs = np.zeros((m + 1, n + 1), dtype=np.int64)
    ins = np.zeros((m + 1, n + 1), dtype=np.int64)
    dels = np.zeros((m + 1, n + 1), dtype=np.int64)
    cost[:, 0] = np.arange(m + 1)
    dels[:, 0] = np.arange(m + 1)
    cost[0, :] = np.arange(n + 1)
    ins[0, :] = np.arange(n + 1)
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            hit = 0 if a[i - 1] == b[j - 1] else 1
            c_diag = cost[i - 1, j - 1] + hit
            c_del = cost[i - 1, j] + 1
            c_ins = cost[i, j - 1] + 1
            if c_diag <= c_del and c_diag <= c_ins:
                cost[i, j] = c_diag
                subs[i, j] = subs[i - 1, j - 1] + hit
                ins[i, j] = ins[i - 1, j - 1]
                dels[i, j] = dels[i - 1, j - 1]
            elif c_del <= c_ins:
                cost[i, j] = c_del
                subs[i, j] = subs[i - 1, j]
                ins[i, j] = ins[i - 1, j]
                dels[i, j] = dels[i - 1, j] + 1
            else:
                cost[i, j] = c_ins
                subs[i, j] = subs[i, j - 1]
                ins[i, j] = ins[i, j - 1] + 1
                dels[i, j] = dels[i, j - 1]
    return int(subs[m, n]), int(ins[m, n]), int(dels[m, n])


# numba builds of the loop forms (None when numba is unavailable)
crf_forward_numba = _crf_forward_loop if HAVE_NUMBA else None
crf_backward_numba = _crf_backward_loop if HAVE_NUMBA else None
viterbi_numba = _viterbi_loop if HAVE_NUMBA else None
edit_distance_numba = _edit_distance_loop if HAVE_NUMBA else None

if USING_NUMBA:
    crf_forward = _crf_forward_loop
    crf_backward = _crf_backward_loop
    viterbi = _viterbi_loop
    edit_distance_counts = _edit_distance_loop
else:
    crf_forward = crf_forward_numpy
    crf_backward = crf_backward_numpy
    viterbi = viterbi_numpy
    edit_distance_counts = edit_distance_numpy
