"""Pure-numpy blocked nearest-row kernel (fallback for the compiled one).

Scores use the expansion ||w - q||^2 = ||w||^2 - 2<w, q> + ||q||^2 with the
query term dropped (constant per query), so only one GEMM per vocabulary
block is needed. Ties resolve to the smallest row index: argmin takes the
first occurrence inside a block and the cross-block merge updates on
strictly smaller scores only.
"""

from __future__ import annotations

import numpy as np

BLOCK_ROWS = 8192


def nearest_rows(vectors: np.ndarray, sqnorms: np.ndarray,
                 queries: np.ndarray, block: int = BLOCK_ROWS) -> np.ndarray:
    """Index of the L2-nearest row of `vectors` for each row of `queries`.

    `sqnorms` must be the squared row norms of `vectors`; all three arrays
    share one dtype (float32 or float64).
    """
    nq = queries.shape[0]
    best = np.full(nq, np.inf, dtype=vectors.dtype)
    best_idx = np.zeros(nq, dtype=np.int64)
    take = np.arange(nq)
    for start in range(0, vectors.shape[0], block):
        blk = vectors[start:start + block]
        scores = queries @ blk.T
        scores *= -2.0
        scores += sqnorms[start:start + block][None, :]
        local = np.argmin(scores, axis=1)
        vals = scores[take, local]
        upd = vals < best
        best_idx[upd] = local[upd] + start
        best[upd] = vals[upd]
    return best_idx
