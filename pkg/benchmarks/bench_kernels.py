#!/usr/bin/env python3
"""Benchmark the nearest-row kernel: compiled extension vs numpy fallback.

Measures single-threaded privatization throughput at realistic scale
(|V|=50k, d=300 by default), the worker-scaling behavior, and the
agreement of both backends' replacement decisions. BLAS threading is
pinned to 1 so the numbers reflect one core per worker.

Usage: python benchmarks/bench_kernels.py [--vocab 50000] [--dim 300]
"""

import argparse
import time

import numpy as np

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # fall back to trusting the environment
    from contextlib import contextmanager

    @contextmanager
    def threadpool_limits(limits):
        yield


from privtext import _nn_numpy, kernels
from privtext.embeddings import EmbeddingMatrix
from privtext.mechanism import MechanismParams, privatize_corpus


def build_matrix(n_vocab: int, dim: int, seed: int = 0) -> EmbeddingMatrix:
    rng = np.random.default_rng(seed)
    return EmbeddingMatrix(tuple(f"w{i:06d}" for i in range(n_vocab)),
                           rng.standard_normal((n_vocab, dim)))


def bench_backend(impl, matrix, queries, dtype, repeats=3) -> float:
    vectors = matrix.rows(dtype)
    sqnorms = matrix.sqnorms(dtype)
    q = queries.astype(dtype)
    impl.nearest_rows(vectors, sqnorms, q[:32])  # warm-up
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        impl.nearest_rows(vectors, sqnorms, q)
        best = min(best, time.perf_counter() - start)
    return len(q) / best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--vocab", type=int, default=50_000)
    parser.add_argument("--dim", type=int, default=300)
    parser.add_argument("--queries", type=int, default=2048)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    print(f"selected backend at import: {kernels.BACKEND}")
    matrix = build_matrix(args.vocab, args.dim, args.seed)
    rng = np.random.default_rng(args.seed + 1)
    queries = (matrix.vectors[rng.integers(0, args.vocab, args.queries)]
               + rng.standard_normal((args.queries, args.dim)) * 0.5)

    backends = [("numpy-fallback", _nn_numpy)]
    if kernels.BACKEND == "compiled":
        from privtext import _nn_kernel
        backends.insert(0, ("compiled", _nn_kernel))

    with threadpool_limits(limits=1):
        for dtype, label in ((np.float64, "f8"), (np.float32, "f4")):
            rates = {}
            for name, impl in backends:
                rates[name] = bench_backend(impl, matrix, queries, dtype)
                print(f"  {label} {name:16s}: {rates[name]:8.0f} queries/s "
                      "(1 thread)")
            if len(rates) == 2:
                ratio = rates["compiled"] / rates["numpy-fallback"]
                print(f"  {label} compiled/numpy speedup: x{ratio:.2f}")

    # agreement of decisions between the two backends
    if len(backends) == 2:
        idx_a = backends[0][1].nearest_rows(matrix.rows(np.float32),
                                            matrix.sqnorms(np.float32),
                                            queries.astype(np.float32))
        idx_b = backends[1][1].nearest_rows(matrix.rows(np.float32),
                                            matrix.sqnorms(np.float32),
                                            queries.astype(np.float32))
        print(f"  backend decision agreement: {(idx_a == idx_b).mean():.6f}")

    # end-to-end privatization throughput (noise + search), 1 vs 8 workers
    params = MechanismParams(eta=float(args.dim) / 12.0, seed=args.seed)
    sequences = [list(rng.integers(0, args.vocab, 512)) for _ in range(8)]
    n_tokens = sum(len(s) for s in sequences)
    with threadpool_limits(limits=1):
        start = time.perf_counter()
        privatize_corpus(sequences, matrix, params, precision="f4")
        single = n_tokens / (time.perf_counter() - start)
        start = time.perf_counter()
        privatize_corpus(sequences, matrix, params, precision="f4", workers=8)
        multi = n_tokens / (time.perf_counter() - start)
    print(f"  privatization: {single:.0f} tokens/s single-threaded, "
          f"{multi:.0f} tokens/s with 8 workers (x{multi / single:.2f})")


if __name__ == "__main__":
    main()
