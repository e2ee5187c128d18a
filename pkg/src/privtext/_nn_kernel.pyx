# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled blocked nearest-row kernel.

Same contract and tie-breaking as privtext._nn_numpy.nearest_rows: scores
come from the ||w||^2 - 2<w, q> expansion computed with one BLAS GEMM per
vocabulary block, and the argmin scan updates on strictly smaller scores
so ties resolve to the smallest row index. The fused scan avoids the
per-block argmin/merge temporaries of the numpy path.
"""

import numpy as np

cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm, sgemm

ctypedef fused real:
    float
    double

DEF BLOCK_ROWS = 8192


def nearest_rows(const real[:, ::1] vectors, const real[::1] sqnorms,
                 const real[:, ::1] queries, int block=BLOCK_ROWS):
    """Index of the L2-nearest row of `vectors` for each row of `queries`."""
    cdef Py_ssize_t nv = vectors.shape[0]
    cdef Py_ssize_t d = vectors.shape[1]
    cdef Py_ssize_t nq = queries.shape[0]
    if queries.shape[1] != d:
        raise ValueError("query dimension mismatch")
    if sqnorms.shape[0] != nv:
        raise ValueError("sqnorms length mismatch")

    out = np.empty(nq, dtype=np.int64)
    cdef cnp.int64_t[::1] out_idx = out
    if nq == 0:
        return out

    dtype = np.float32 if real is float else np.float64
    cdef real[::1] best = np.full(nq, np.inf, dtype=dtype)
    # GEMM scratch: scores for one (vocab block x query batch), column-major
    # with the vocab block contiguous per query.
    cdef Py_ssize_t rows = block if block < nv else nv
    cdef real[::1] buf = np.empty(nq * rows, dtype=dtype)

    cdef int m, n = <int> nq, k = <int> d, lda = <int> d, ldb = <int> d
    cdef real alpha = -2.0, beta = 0.0
    cdef Py_ssize_t start = 0, vb, b, v
    cdef real s, bound
    cdef const real* col

    with nogil:
        while start < nv:
            vb = nv - start
            if vb > block:
                vb = block
            m = <int> vb
            # Row-major S (nq, vb) = Q @ W_blk^T is computed as the
            # column-major (vb, nq) product W_blk @ Q via Fortran GEMM.
            if real is double:
                dgemm("T", "N", &m, &n, &k, &alpha,
                      <double*> &vectors[start, 0], &lda,
                      <double*> &queries[0, 0], &ldb, &beta,
                      <double*> &buf[0], &m)
            else:
                sgemm("T", "N", &m, &n, &k, &alpha,
                      <float*> &vectors[start, 0], &lda,
                      <float*> &queries[0, 0], &ldb, &beta,
                      <float*> &buf[0], &m)
            for b in range(nq):
                col = &buf[b * vb]
                bound = best[b]
                for v in range(vb):
                    s = col[v] + sqnorms[start + v]
                    if s < bound:
                        bound = s
                        best[b] = s
                        out_idx[b] = start + v
            start += vb
    return out
