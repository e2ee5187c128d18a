"""Nearest-row kernel dispatch plus slow reference scans.

The compiled kernel is preferred when its extension built; the numpy
fallback implements identical blocking and tie-breaking. Set
PRIVTEXT_NO_EXT=1 before import to force the fallback. The reference
scans exist for cross-checking the fast paths, never for production use.
"""

from __future__ import annotations

import math
import os

import numpy as np

from . import _nn_numpy

if os.environ.get("PRIVTEXT_NO_EXT") == "1":
    _impl = _nn_numpy
    BACKEND = "numpy"
else:
    try:
        from . import _nn_kernel as _impl  # type: ignore[no-redef]
        BACKEND = "compiled"
    except ImportError:
        _impl = _nn_numpy
        BACKEND = "numpy"


def nearest_rows(vectors: np.ndarray, sqnorms: np.ndarray,
                 queries: np.ndarray) -> np.ndarray:
    """Blocked exact argmin_k ||vectors[k] - q|| for each query row."""
    queries = np.ascontiguousarray(queries, dtype=vectors.dtype)
    return _impl.nearest_rows(vectors, sqnorms, queries)


def naive_scan(vectors: np.ndarray, query: np.ndarray) -> tuple[int, float]:
    """Per-row scalar-loop reference; smallest index wins ties."""
    best_idx = 0
    best = math.inf
    q = [float(x) for x in query]
    for i, row in enumerate(vectors):
        acc = 0.0
        for a, b in zip(row, q):
            t = float(a) - b
            acc += t * t
        if acc < best:
            best = acc
            best_idx = i
    return best_idx, math.sqrt(best)


def direct_nearest(vectors: np.ndarray, query: np.ndarray) -> int:
    """Unblocked direct-difference scan (no norm expansion), one query."""
    diff = vectors - query
    d2 = np.einsum("ij,ij->i", diff, diff)
    return int(np.argmin(d2))
