"""Hot segment/scatter kernels over CSR neighbor lists.

Every kernel exists twice: a numba ``@njit`` version and a pure-numpy
fallback. The active implementation is chosen once at import time; set
``GEOGNN_DISABLE_NUMBA=1`` (or install without numba) to force the numpy
path. ``benchmarks/bench_kernels.py`` compares the two.

Conventions: ``values`` is float64 and C-contiguous, ``offsets`` is the
int64 CSR row-offset array of length n+1, ``anchors`` maps each edge slot
to its owning row (``anchors[e] == i`` for ``offsets[i] <= e < offsets[i+1]``).
All kernels are single-threaded and deterministic.
"""

import os

import numpy as np

_DISABLED = os.environ.get("GEOGNN_DISABLE_NUMBA", "").strip() not in ("", "0")

try:
    if _DISABLED:
        raise ImportError("numba disabled via GEOGNN_DISABLE_NUMBA")
    from numba import njit

    NUMBA_ENABLED = True
except ImportError:
    njit = None
    NUMBA_ENABLED = False


# ---------------------------------------------------------------------------
# pure numpy implementations


def segment_sum_numpy(values, offsets):
    """Sum edge rows into their owning node row: out[i] = sum of values[offsets[i]:offsets[i+1]]."""
    n = offsets.shape[0] - 1
    out = np.zeros((n,) + values.shape[1:], dtype=values.dtype)
    anchors = np.repeat(np.arange(n), np.diff(offsets))
    np.add.at(out, anchors, values)
    return out


def scatter_add_rows_numpy(out, idx, values):
    """out[idx[e]] += values[e], duplicates accumulated."""
    np.add.at(out, idx, values)
    return out


def segment_softmax_numpy(scores, offsets):
    """Max-subtracted softmax within each CSR segment. Empty segments stay empty."""
    n = offsets.shape[0] - 1
    anchors = np.repeat(np.arange(n), np.diff(offsets))
    seg_max = np.full(n, -np.inf)
    np.maximum.at(seg_max, anchors, scores)
    shifted = np.exp(scores - seg_max[anchors])
    denom = np.zeros(n)
    np.add.at(denom, anchors, shifted)
    return shifted / denom[anchors]


def segment_softmax_backward_numpy(weights, grad, offsets):
    """VJP of segment_softmax: ds = w * (g - sum_seg(w * g))."""
    n = offsets.shape[0] - 1
    anchors = np.repeat(np.arange(n), np.diff(offsets))
    dot = np.zeros(n)
    np.add.at(dot, anchors, weights * grad)
    return weights * (grad - dot[anchors])


# ---------------------------------------------------------------------------
# numba implementations

if NUMBA_ENABLED:

    @njit(cache=True)
    def _segment_sum_nb(values, offsets, out):
        for i in range(offsets.shape[0] - 1):
            for e in range(offsets[i], offsets[i + 1]):
                for d in range(values.shape[1]):
                    out[i, d] += values[e, d]
        return out

    @njit(cache=True)
    def _scatter_add_rows_nb(out, idx, values):
        for e in range(idx.shape[0]):
            row = idx[e]
            for d in range(values.shape[1]):
                out[row, d] += values[e, d]
        return out

    @njit(cache=True)
    def _segment_softmax_nb(scores, offsets, out):
        for i in range(offsets.shape[0] - 1):
            lo, hi = offsets[i], offsets[i + 1]
            if hi == lo:
                continue
            m = scores[lo]
            for e in range(lo + 1, hi):
                if scores[e] > m:
                    m = scores[e]
            denom = 0.0
            for e in range(lo, hi):
                out[e] = np.exp(scores[e] - m)
                denom += out[e]
            for e in range(lo, hi):
                out[e] /= denom
        return out

    @njit(cache=True)
    def _segment_softmax_backward_nb(weights, grad, offsets, out):
        for i in range(offsets.shape[0] - 1):
            lo, hi = offsets[i], offsets[i + 1]
            dot = 0.0
            for e in range(lo, hi):
                dot += weights[e] * grad[e]
            for e in range(lo, hi):
                out[e] = weights[e] * (grad[e] - dot)
        return out

    def segment_sum_numba(values, offsets):
        out = np.zeros((offsets.shape[0] - 1, values.shape[1]), dtype=values.dtype)
        return _segment_sum_nb(np.ascontiguousarray(values), offsets, out)

    def scatter_add_rows_numba(out, idx, values):
        return _scatter_add_rows_nb(out, idx, np.ascontiguousarray(values))

    def segment_softmax_numba(scores, offsets):
        out = np.empty_like(scores)
        return _segment_softmax_nb(scores, offsets, out)

    def segment_softmax_backward_numba(weights, grad, offsets):
        out = np.empty_like(weights)
        return _segment_softmax_backward_nb(weights, grad, offsets, out)

    segment_sum = segment_sum_numba
    scatter_add_rows = scatter_add_rows_numba
    segment_softmax = segment_softmax_numba
    segment_softmax_backward = segment_softmax_backward_numba
else:
    segment_sum = segment_sum_numpy
    scatter_add_rows = scatter_add_rows_numpy
    segment_softmax = segment_softmax_numpy
    segment_softmax_backward = segment_softmax_backward_numpy
