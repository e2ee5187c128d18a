import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from privtext.embeddings import EmbeddingMatrix

# Shared toy vocabularies. TOY3 matches the analytic examples used across
# the mechanism tests; TOY5 spreads five words over distances 1..2 so the
# privacy-bound checks cover several input separations.
TOY3_VECTORS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
TOY5_VECTORS = np.array(
    [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])


@pytest.fixture
def toy3():
    return EmbeddingMatrix(("a", "b", "c"), TOY3_VECTORS.copy())


@pytest.fixture
def toy5():
    return EmbeddingMatrix(("v0", "v1", "v2", "v3", "v4"), TOY5_VECTORS.copy())


@pytest.fixture
def random_matrix():
    def make(n_tokens=100, dim=8, seed=0):
        rng = np.random.default_rng(seed)
        vecs = rng.standard_normal((n_tokens, dim))
        return EmbeddingMatrix(tuple(f"w{i:04d}" for i in range(n_tokens)), vecs)
    return make


def write_embedding_file(path: Path, lines) -> Path:
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
