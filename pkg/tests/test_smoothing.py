import numpy as np
import pytest

from geognn import kernels
from geognn.errors import DegenerateInputError, ValidationError
from geognn.graph import build_csr
from geognn.smoothing import (
    AggregatorKind,
    cosine_attention_weights,
    smooth,
)


def two_node_graph():
    return build_csr([(0, 1)], 2, add_self_loops=True)


X2 = np.array([[1.0, 0.0], [0.0, 1.0]])


def random_graph(rng, n, p=0.3):
    coin = rng.random((n, n))
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if coin[i, j] < p]
    return build_csr(edges, n, add_self_loops=True)


def test_mean_two_node():
    trace = smooth(X2, two_node_graph(), AggregatorKind.parse("mean"), 1)
    assert np.allclose(trace.snapshots[1][0], [0.5, 0.5], atol=1e-12)


def test_laplacian_two_node():
    # both degrees 2 with self-loops, so D^{-1/2}(A+I)D^{-1/2} averages
    trace = smooth(X2, two_node_graph(), AggregatorKind.parse("laplacian"), 1)
    assert np.allclose(trace.snapshots[1][0], [0.5, 0.5], atol=1e-12)


def test_geodesic_two_node_hand_value():
    kind = AggregatorKind.parse("geodesic", tau=1.0, alpha=1.0)
    trace = smooth(X2, two_node_graph(), kind, 1)
    assert np.allclose(trace.snapshots[1][0], [0.9121, 0.4100], atol=1e-4)
    assert np.allclose(trace.snapshots[1][1], [0.4100, 0.9121], atol=1e-4)


def test_self_loops_only_fixed_point():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 3))
    g = build_csr([], 5, add_self_loops=True)
    for name in ("mean", "laplacian", "attention"):
        trace = smooth(x, g, AggregatorKind.parse(name), 3)
        for snap in trace:
            assert np.allclose(snap, x, atol=1e-12)
    trace = smooth(x, g, AggregatorKind.parse("geodesic"), 3)
    unit = x / np.linalg.norm(x, axis=1, keepdims=True)
    for snap in trace:
        assert np.allclose(snap, unit, atol=1e-12)


def test_snapshot_zero_is_input():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(8, 4))
    g = random_graph(rng, 8)
    trace = smooth(x, g, AggregatorKind.parse("mean"), 2)
    assert np.array_equal(trace.snapshots[0], x)
    assert len(trace) == 3


def test_attention_weights_sum_to_one():
    rng = np.random.default_rng(2)
    for trial in range(5):
        x = rng.normal(size=(12, 6))
        g = random_graph(rng, 12)
        w = cosine_attention_weights(x, g, tau=1.0)
        sums = kernels.segment_sum_numpy(w.reshape(-1, 1), g.row_offsets).ravel()
        assert np.max(np.abs(sums - 1.0)) < 1e-12


def test_attention_uniform_at_huge_tau():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(10, 5))
    g = random_graph(rng, 10)
    w = cosine_attention_weights(x, g, tau=1e6)
    uniform = 1.0 / g.degrees()[g.anchors]
    assert np.max(np.abs(w - uniform)) < 1e-5


def random_orthogonal(rng, d):
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    return q


def test_linear_orthogonal_equivariance():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(15, 6))
    g = random_graph(rng, 15)
    q = random_orthogonal(rng, 6)
    for name in ("mean", "laplacian"):
        kind = AggregatorKind.parse(name)
        a = smooth(x @ q.T, g, kind, 3)
        b = smooth(x, g, kind, 3)
        for sa, sb in zip(a, b):
            assert np.max(np.abs(sa - sb @ q.T)) < 1e-9


def test_geodesic_orthogonal_equivariance():
    # orthogonal maps are sphere isometries, so the whole pipeline commutes
    rng = np.random.default_rng(5)
    x = rng.normal(size=(15, 6))
    g = random_graph(rng, 15)
    q = random_orthogonal(rng, 6)
    for name in ("attention", "geodesic"):
        kind = AggregatorKind.parse(name, tau=0.7, alpha=0.9)
        a = smooth(x @ q.T, g, kind, 3)
        b = smooth(x, g, kind, 3)
        for sa, sb in zip(a, b):
            assert np.max(np.abs(sa - sb @ q.T)) < 1e-6


def test_geodesic_rows_stay_unit():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(30, 8))
    g = random_graph(rng, 30)
    trace = smooth(x, g, AggregatorKind.parse("geodesic", tau=0.5, alpha=1.0), 4)
    for snap in trace:
        assert np.max(np.abs(np.linalg.norm(snap, axis=1) - 1.0)) < 1e-6


def test_zero_row_rejected_for_sphere_schemes():
    x = np.array([[1.0, 0.0], [0.0, 0.0]])
    g = two_node_graph()
    for name in ("attention", "geodesic"):
        with pytest.raises(DegenerateInputError) as err:
            smooth(x, g, AggregatorKind.parse(name), 1)
        assert "1" in str(err.value)  # names the offending node


def test_kind_validation():
    with pytest.raises(ValidationError):
        AggregatorKind.parse("mean", tau=0.0)
    with pytest.raises(ValidationError):
        AggregatorKind.parse("geodesic", alpha=-0.1)
    with pytest.raises(ValidationError):
        AggregatorKind.parse("median")
    with pytest.raises(ValidationError):
        smooth(X2, two_node_graph(), AggregatorKind.parse("mean"), 0)
