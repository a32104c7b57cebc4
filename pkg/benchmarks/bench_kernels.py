"""Timing harness for the segment kernels: jit path vs numpy fallback.

Run with defaults, or sweep sizes:

    python3 benchmarks/bench_kernels.py --nodes 20000 --avg-degree 16

The numpy fallbacks are always importable, so both paths are timed in one
process whenever the jit path is active (GEOGNN_DISABLE_NUMBA unset).
"""

import argparse
import timeit

import numpy as np

from geognn import kernels
from geognn.graph import build_csr
from geognn.smoothing import AggregatorKind, smooth


def random_graph(rng, n, avg_degree):
    m = n * avg_degree // 2
    edges = rng.integers(0, n, size=(m, 2))
    edges = edges[edges[:, 0] != edges[:, 1]]
    return build_csr(edges, n, add_self_loops=True)


def bench(label, fn, repeats):
    fn()  # warm up (jit compile on first call)
    best = min(timeit.repeat(fn, number=1, repeat=repeats))
    print(f"  {label:<28s} {best * 1e3:9.3f} ms")
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--nodes", type=int, default=20000)
    parser.add_argument("--avg-degree", type=int, default=16)
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    graph = random_graph(rng, args.nodes, args.avg_degree)
    slots = graph.num_slots
    values = rng.normal(size=(slots, args.dim))
    scores = rng.normal(size=slots)
    offsets = graph.row_offsets
    print(f"graph: n={graph.n} slots={slots} dim={args.dim}")

    jit_active = kernels.segment_sum is not kernels.segment_sum_numpy
    pairs = [
        ("segment_sum", lambda: kernels.segment_sum(values, offsets),
         lambda: kernels.segment_sum_numpy(values, offsets)),
        ("segment_softmax", lambda: kernels.segment_softmax(scores, offsets),
         lambda: kernels.segment_softmax_numpy(scores, offsets)),
    ]
    weights = kernels.segment_softmax_numpy(scores, offsets)
    grad = rng.normal(size=slots)
    pairs.append(
        ("segment_softmax_backward",
         lambda: kernels.segment_softmax_backward(weights, grad, offsets),
         lambda: kernels.segment_softmax_backward_numpy(weights, grad, offsets))
    )

    for name, active, fallback in pairs:
        print(name)
        if jit_active:
            fast = bench("jit", active, args.repeats)
            slow = bench("numpy fallback", fallback, args.repeats)
            print(f"  {'speedup':<28s} {slow / fast:9.2f} x")
        else:
            bench("numpy (jit disabled/absent)", fallback, args.repeats)

    x = rng.normal(size=(graph.n, args.dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    kind = AggregatorKind.parse("geodesic", tau=1.0, alpha=1.0)
    print("geodesic smooth (2 layers, active path)")
    bench("end to end", lambda: smooth(x, graph, kind, 2), args.repeats)


if __name__ == "__main__":
    main()
