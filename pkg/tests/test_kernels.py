import numpy as np
import pytest

from geognn import kernels


def random_segments(rng, n_rows, max_deg, d=None):
    counts = rng.integers(0, max_deg + 1, n_rows)
    offsets = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    slots = int(offsets[-1])
    values = rng.normal(size=(slots, d)) if d else rng.normal(size=slots)
    return offsets, values


def brute_segment_sum(values, offsets):
    out = np.zeros((len(offsets) - 1, values.shape[1]))
    for i in range(len(offsets) - 1):
        out[i] = values[offsets[i]:offsets[i + 1]].sum(axis=0)
    return out


def brute_segment_softmax(scores, offsets):
    out = np.zeros_like(scores)
    for i in range(len(offsets) - 1):
        seg = scores[offsets[i]:offsets[i + 1]]
        if seg.size == 0:
            continue
        e = np.exp(seg - seg.max())
        out[offsets[i]:offsets[i + 1]] = e / e.sum()
    return out


ACTIVE = [
    ("active", kernels.segment_sum, kernels.segment_softmax,
     kernels.segment_softmax_backward, kernels.scatter_add_rows),
    ("numpy", kernels.segment_sum_numpy, kernels.segment_softmax_numpy,
     kernels.segment_softmax_backward_numpy, kernels.scatter_add_rows_numpy),
]


@pytest.mark.parametrize("label,ssum,smax,smax_bwd,scatter", ACTIVE)
def test_segment_sum_matches_brute(label, ssum, smax, smax_bwd, scatter):
    rng = np.random.default_rng(0)
    for trial in range(20):
        offsets, values = random_segments(rng, 30, 6, d=5)
        got = ssum(values, offsets)
        assert np.allclose(got, brute_segment_sum(values, offsets), atol=1e-12)


@pytest.mark.parametrize("label,ssum,smax,smax_bwd,scatter", ACTIVE)
def test_segment_softmax_matches_brute(label, ssum, smax, smax_bwd, scatter):
    rng = np.random.default_rng(1)
    for trial in range(20):
        offsets, scores = random_segments(rng, 30, 6)
        got = smax(scores, offsets)
        assert np.allclose(got, brute_segment_softmax(scores, offsets), atol=1e-12)
        # weights in each nonempty segment sum to 1
        sums = brute_segment_sum(got.reshape(-1, 1), offsets).ravel()
        deg = np.diff(offsets)
        assert np.allclose(sums[deg > 0], 1.0, atol=1e-12)


@pytest.mark.parametrize("label,ssum,smax,smax_bwd,scatter", ACTIVE)
def test_segment_softmax_backward_fd(label, ssum, smax, smax_bwd, scatter):
    # jacobian-vector product against central differences
    rng = np.random.default_rng(2)
    for trial in range(5):
        offsets, scores = random_segments(rng, 10, 5)
        if scores.size == 0:
            continue
        g = rng.normal(size=scores.shape)
        w = smax(scores, offsets)
        got = smax_bwd(w, g, offsets)
        h = 1e-6
        fd = np.zeros_like(scores)
        for j in range(scores.size):
            up, down = scores.copy(), scores.copy()
            up[j] += h
            down[j] -= h
            fd[j] = (np.dot(smax(up, offsets), g) - np.dot(smax(down, offsets), g)) / (2 * h)
        assert np.max(np.abs(got - fd)) < 1e-7


@pytest.mark.parametrize("label,ssum,smax,smax_bwd,scatter", ACTIVE)
def test_scatter_add_rows(label, ssum, smax, smax_bwd, scatter):
    rng = np.random.default_rng(3)
    out = np.zeros((6, 3))
    idx = np.array([0, 2, 2, 5, 0], dtype=np.int64)
    values = rng.normal(size=(5, 3))
    scatter(out, idx, values)
    want = np.zeros((6, 3))
    for i, j in enumerate(idx):
        want[j] += values[i]
    assert np.allclose(out, want, atol=1e-12)


def test_paths_agree():
    if kernels.segment_sum is kernels.segment_sum_numpy:
        pytest.skip("jit path not active")
    rng = np.random.default_rng(4)
    offsets, values = random_segments(rng, 40, 8, d=7)
    _, scores = random_segments(rng, 40, 8)
    offsets2, scores = random_segments(rng, 40, 8)
    assert np.allclose(
        kernels.segment_sum(values, offsets),
        kernels.segment_sum_numpy(values, offsets), atol=1e-12)
    assert np.allclose(
        kernels.segment_softmax(scores, offsets2),
        kernels.segment_softmax_numpy(scores, offsets2), atol=1e-12)
    w = kernels.segment_softmax_numpy(scores, offsets2)
    g = rng.normal(size=scores.shape)
    assert np.allclose(
        kernels.segment_softmax_backward(w, g, offsets2),
        kernels.segment_softmax_backward_numpy(w, g, offsets2), atol=1e-12)
