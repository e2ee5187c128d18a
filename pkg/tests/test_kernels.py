import numpy as np
import pytest

from privtext import _nn_numpy, kernels


def _random_problem(seed, n=5000, d=24, nq=128, dtype=np.float64):
    rng = np.random.default_rng(seed)
    vectors = rng.standard_normal((n, d)).astype(dtype)
    sqnorms = np.einsum("ij,ij->i", vectors, vectors,
                        dtype=np.float64).astype(dtype)
    queries = rng.standard_normal((nq, d)).astype(dtype)
    return vectors, sqnorms, queries


def test_numpy_blocking_matches_unblocked():
    vectors, sqnorms, queries = _random_problem(0)
    full = _nn_numpy.nearest_rows(vectors, sqnorms, queries, block=10**9)
    small = _nn_numpy.nearest_rows(vectors, sqnorms, queries, block=7)
    np.testing.assert_array_equal(full, small)


def test_cross_block_tie_goes_to_lower_index():
    # Identical rows placed in different blocks must resolve to the first.
    vectors = np.zeros((6, 3))
    vectors[1] = [1.0, 2.0, 3.0]
    vectors[4] = [1.0, 2.0, 3.0]
    sqnorms = np.einsum("ij,ij->i", vectors, vectors)
    queries = np.array([[1.0, 2.0, 3.0]])
    assert _nn_numpy.nearest_rows(vectors, sqnorms, queries, block=2)[0] == 1
    if kernels.BACKEND == "compiled":
        from privtext import _nn_kernel
        assert _nn_kernel.nearest_rows(vectors, sqnorms, queries, block=2)[0] == 1


@pytest.mark.skipif(kernels.BACKEND != "compiled",
                    reason="compiled kernel not built")
@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_compiled_matches_numpy_fallback(dtype):
    from privtext import _nn_kernel
    for seed in range(3):
        vectors, sqnorms, queries = _random_problem(seed, dtype=dtype)
        a = _nn_kernel.nearest_rows(vectors, sqnorms, queries, block=1024)
        b = _nn_numpy.nearest_rows(vectors, sqnorms, queries, block=1024)
        np.testing.assert_array_equal(a, b)


def test_single_precision_agrees_with_double():
    v8, s8, q8 = _random_problem(11, n=4000, d=32, nq=512)
    idx8 = kernels.nearest_rows(v8, s8, q8)
    idx4 = kernels.nearest_rows(v8.astype(np.float32), s8.astype(np.float32),
                                q8.astype(np.float32))
    assert (idx8 == idx4).mean() >= 0.999


def test_direct_nearest_matches_kernel():
    vectors, sqnorms, queries = _random_problem(5, n=2000, d=16, nq=32)
    idx = kernels.nearest_rows(vectors, sqnorms, queries)
    for q, i in zip(queries, idx):
        assert kernels.direct_nearest(vectors, q) == i


def test_empty_query_batch():
    vectors, sqnorms, _ = _random_problem(1, n=10, d=4, nq=1)
    out = kernels.nearest_rows(vectors, sqnorms, np.empty((0, 4)))
    assert out.shape == (0,)
