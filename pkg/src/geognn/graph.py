"""CSR graph storage, neighbor iteration, and edge splits for link prediction."""

from dataclasses import dataclass, field

import numpy as np

from .errors import SamplingExhaustedError, ValidationError


@dataclass(frozen=True)
class Graph:
    """Immutable CSR adjacency. Neighbor lists are sorted and deduplicated.

    anchors[e] gives the owning row of edge slot e; it is redundant with
    row_offsets but precomputed because every aggregation kernel needs it.
    """

    n: int
    row_offsets: np.ndarray  # int64, shape (n+1,)
    col_indices: np.ndarray  # int64, shape (num_slots,)
    has_self_loops: bool
    anchors: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self, "anchors", np.repeat(np.arange(self.n), np.diff(self.row_offsets))
        )

    def neighbors(self, i):
        return self.col_indices[self.row_offsets[i] : self.row_offsets[i + 1]]

    def degrees(self):
        return np.diff(self.row_offsets)

    @property
    def num_slots(self):
        return int(self.col_indices.shape[0])

    def edge_list(self):
        """Unique undirected pairs (u < v), self-loops excluded."""
        u, v = self.anchors, self.col_indices
        keep = u < v
        return np.stack([u[keep], v[keep]], axis=1)

    def edge_set(self):
        """Set of canonical (min,max) pairs incl. self-pairs, for membership tests."""
        u, v = self.anchors, self.col_indices
        return set(zip(np.minimum(u, v).tolist(), np.maximum(u, v).tolist()))


def build_csr(edge_list, n, add_self_loops=True, symmetrize=True):
    """Build a Graph from (u, v) pairs.

    Duplicates are collapsed, neighbor lists sorted ascending. With
    symmetrize=True every (u, v) also contributes (v, u); self-loops are
    appended once per node when requested.
    """
    edges = np.asarray(list(edge_list), dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise ValidationError(
            f"edge endpoint out of range [0, {n}): found {edges.min()}..{edges.max()}"
        )
    src, dst = edges[:, 0], edges[:, 1]
    if symmetrize:
        src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
    if add_self_loops:
        loop = np.arange(n, dtype=np.int64)
        src, dst = np.concatenate([src, loop]), np.concatenate([dst, loop])
    else:
        keep = src != dst
        # directed self-pairs in the input are only kept via the flag
        src, dst = src[keep], dst[keep]
    pairs = np.unique(np.stack([src, dst], axis=1), axis=0) if src.size else np.zeros((0, 2), np.int64)
    counts = np.bincount(pairs[:, 0], minlength=n)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return Graph(
        n=n,
        row_offsets=offsets,
        col_indices=pairs[:, 1].copy(),
        has_self_loops=add_self_loops,
    )


@dataclass(frozen=True)
class EdgeSplit:
    """Disjoint train/val/test positive edges plus per-split sampled negatives.

    Positives are canonical undirected pairs (u < v). Negatives are grouped
    per positive: negatives[split] has shape (P, neg_per_pos, 2) and never
    collides with any positive edge or self-pair of the full graph.
    """

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    neg_train: np.ndarray
    neg_val: np.ndarray
    neg_test: np.ndarray
    seed: int
    neg_per_pos: int

    def positives(self, split):
        return {"train": self.train, "val": self.val, "test": self.test}[split]

    def negatives(self, split):
        return {"train": self.neg_train, "val": self.neg_val, "test": self.neg_test}[split]


def pair_codes(pairs, n):
    """Canonical (min, max) pairs packed as min * n + max, for fast lookup."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    return lo * n + hi


def sample_negative_pairs(n, count, forbidden, rng, max_factor=100):
    """Uniformly sample `count` node pairs (u != v) avoiding `forbidden`.

    `forbidden` is either a set of canonical (min, max) tuples or a sorted
    int64 code array from pair_codes. Rejection sampling in vectorized
    batches; raises SamplingExhaustedError once attempts exceed
    max_factor * count (near-complete graphs).
    """
    if isinstance(forbidden, np.ndarray):
        codes = forbidden
    else:
        codes = np.sort(
            np.fromiter(
                (int(a) * n + int(b) for a, b in forbidden),
                dtype=np.int64,
                count=len(forbidden),
            )
        )
    out = np.empty((count, 2), dtype=np.int64)
    got = 0
    attempts = 0
    budget = max(1, max_factor * count)
    while got < count:
        draw = max((count - got) * 2, 64)
        attempts += draw
        if attempts > budget + draw:
            raise SamplingExhaustedError(
                f"negative sampling exhausted after {attempts} attempts for {count} pairs"
            )
        u = rng.integers(0, n, draw)
        v = rng.integers(0, n, draw)
        lo = np.minimum(u, v)
        hi = np.maximum(u, v)
        cand = lo * n + hi
        pos = np.searchsorted(codes, cand)
        hit = np.zeros(draw, dtype=bool)
        inside = pos < codes.size
        hit[inside] = codes[pos[inside]] == cand[inside]
        keep = (u != v) & ~hit
        lo, hi = lo[keep], hi[keep]
        take = min(lo.size, count - got)
        out[got : got + take, 0] = lo[:take]
        out[got : got + take, 1] = hi[:take]
        got += take
    return out


def split_edges(graph, ratios=(0.6, 0.2, 0.2), neg_per_pos=1, seed=0):
    """Shuffle undirected positives and partition by `ratios`; sample negatives.

    The train/val/test boundaries are floor(|E| * cumulative ratio), so each
    split size matches its ratio within one edge. Negatives are rejected
    against the *full* edge set (and self-pairs), so no negative of any split
    is a true edge anywhere.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError(f"split ratios must sum to 1, got {ratios}")
    positives = graph.edge_list()
    m = positives.shape[0]
    if neg_per_pos > 0 and m == graph.n * (graph.n - 1) // 2:
        # complete graph: no non-edge exists, so no negative can ever be drawn
        raise SamplingExhaustedError(
            f"graph on {graph.n} nodes is complete; no negative pairs exist"
        )
    if m < 10:
        raise ValidationError(f"need at least 10 undirected edges to split, got {m}")
    rng = np.random.default_rng(seed)
    positives = positives[rng.permutation(m)]
    n_train = int(np.floor(ratios[0] * m))
    n_val = int(np.floor((ratios[0] + ratios[1]) * m)) - n_train
    train = positives[:n_train]
    val = positives[n_train : n_train + n_val]
    test = positives[n_train + n_val :]

    forbidden = graph.edge_set()
    forbidden.update((i, i) for i in range(graph.n))
    negs = {}
    for name, pos in (("train", train), ("val", val), ("test", test)):
        flat = sample_negative_pairs(graph.n, pos.shape[0] * neg_per_pos, forbidden, rng)
        negs[name] = flat.reshape(pos.shape[0], neg_per_pos, 2)
    return EdgeSplit(
        train=train,
        val=val,
        test=test,
        neg_train=negs["train"],
        neg_val=negs["val"],
        neg_test=negs["test"],
        seed=seed,
        neg_per_pos=neg_per_pos,
    )


def message_passing_graph(split, n):
    """Training-time graph: train positives only, symmetrized, with self-loops."""
    return build_csr(split.train, n, add_self_loops=True, symmetrize=True)
