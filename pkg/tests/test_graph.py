import numpy as np
import pytest

from geognn.errors import SamplingExhaustedError, ValidationError
from geognn.graph import (
    build_csr,
    message_passing_graph,
    pair_codes,
    sample_negative_pairs,
    split_edges,
)


def test_build_single_edge_with_self_loops():
    g = build_csr([(0, 1)], 2, add_self_loops=True)
    assert list(g.neighbors(0)) == [0, 1]
    assert list(g.neighbors(1)) == [0, 1]
    assert g.has_self_loops


def test_build_empty_isolated():
    g = build_csr([], 3, add_self_loops=True)
    for i in range(3):
        assert list(g.neighbors(i)) == [i]


def test_build_triangle_degrees():
    g = build_csr([(0, 1), (1, 2), (2, 0)], 3, add_self_loops=False)
    assert np.all(g.degrees() == 2)
    assert not g.has_self_loops


def test_build_dedup_and_sort():
    g = build_csr([(0, 2), (2, 0), (0, 2), (0, 1)], 3, add_self_loops=False)
    assert list(g.neighbors(0)) == [1, 2]


def test_build_out_of_range():
    with pytest.raises(ValidationError):
        build_csr([(0, 5)], 3)


def test_self_loop_count():
    g = build_csr([(0, 1), (1, 2)], 4, add_self_loops=True)
    loops = sum(1 for i in range(4) if i in g.neighbors(i))
    assert loops == 4


def test_csr_round_trip():
    rng = np.random.default_rng(0)
    edges = rng.integers(0, 20, size=(40, 2))
    edges = edges[edges[:, 0] != edges[:, 1]]
    g = build_csr(edges, 20, add_self_loops=False)
    g2 = build_csr(g.edge_list(), 20, add_self_loops=False)
    assert np.array_equal(g.row_offsets, g2.row_offsets)
    assert np.array_equal(g.col_indices, g2.col_indices)


def test_pair_codes_canonical():
    codes = pair_codes([(3, 1), (1, 3), (0, 2)], 10)
    assert codes[0] == codes[1] == 13
    assert codes[2] == 2


def test_split_sizes_and_disjoint():
    rng = np.random.default_rng(1)
    edges = [(i, j) for i in range(12) for j in range(i + 1, 12)
             if rng.random() < 0.5]
    g = build_csr(edges, 12, add_self_loops=False)
    m = g.edge_list().shape[0]
    split = split_edges(g, ratios=(0.6, 0.2, 0.2), neg_per_pos=2, seed=0)
    assert len(split.train) == int(np.floor(0.6 * m))
    assert len(split.train) + len(split.val) + len(split.test) == m
    all_pos = {tuple(e) for e in g.edge_list()}
    seen = set()
    for part in (split.train, split.val, split.test):
        for e in part:
            t = (min(e), max(e))
            assert t in all_pos
            assert t not in seen
            seen.add(t)
    # negatives never collide with any positive or self-pair
    for negs in (split.neg_train, split.neg_val, split.neg_test):
        for u, v in negs.reshape(-1, 2):
            assert u != v
            assert (min(u, v), max(u, v)) not in all_pos


def test_split_ten_edges_exact():
    edges = [(0, i) for i in range(1, 11)]
    g = build_csr(edges, 20, add_self_loops=False)
    split = split_edges(g, seed=3)
    assert (len(split.train), len(split.val), len(split.test)) == (6, 2, 2)


def test_split_too_few_edges():
    g = build_csr([(0, 1), (1, 2)], 4, add_self_loops=False)
    with pytest.raises(ValidationError):
        split_edges(g)


def test_split_deterministic():
    edges = [(i, (i + 1) % 15) for i in range(15)]
    g = build_csr(edges, 15, add_self_loops=False)
    a = split_edges(g, seed=7)
    b = split_edges(g, seed=7)
    assert np.array_equal(a.train, b.train)
    assert np.array_equal(a.neg_test, b.neg_test)


def test_complete_graph_sampling_exhausted():
    edges = [(i, j) for i in range(4) for j in range(i + 1, 4)]
    g = build_csr(edges, 4, add_self_loops=False)
    with pytest.raises(SamplingExhaustedError):
        split_edges(g, ratios=(0.6, 0.2, 0.2), neg_per_pos=1, seed=0)


def test_sample_negative_pairs_accepts_codes_or_set():
    rng = np.random.default_rng(2)
    forbidden_set = {(0, 1), (1, 2)}
    forbidden_set.update((i, i) for i in range(30))
    out = sample_negative_pairs(30, 200, forbidden_set, rng)
    assert out.shape == (200, 2)
    codes = np.sort(pair_codes(np.array([(0, 1), (1, 2)] + [(i, i) for i in range(30)]), 30))
    out2 = sample_negative_pairs(30, 200, codes, np.random.default_rng(2))
    assert np.array_equal(out, out2)
    for u, v in out:
        assert u != v and (min(u, v), max(u, v)) not in forbidden_set


def test_message_passing_graph_excludes_held_out():
    rng = np.random.default_rng(3)
    edges = [(i, j) for i in range(14) for j in range(i + 1, 14)
             if rng.random() < 0.4]
    g = build_csr(edges, 14, add_self_loops=False)
    split = split_edges(g, seed=0)
    mp = message_passing_graph(split, 14)
    assert mp.has_self_loops
    mp_edges = {tuple(e) for e in mp.edge_list()}
    train = {(min(u, v), max(u, v)) for u, v in split.train}
    assert mp_edges == train
    for u, v in np.concatenate([split.val, split.test]):
        assert (min(u, v), max(u, v)) not in mp_edges
