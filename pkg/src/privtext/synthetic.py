"""Synthetic classification task whose classes a linear rule separates.

Each class owns a disjoint pool of tokens; a class-c token embedding is
isotropic noise plus a +margin/2 offset on coordinate c, so the mean
embedding of a sequence (every sequence draws tokens from one class pool)
lands in well-separated blobs. Useful for convergence and ablation
checks where the ceiling accuracy must be known by construction.
"""

from __future__ import annotations

import numpy as np

from .embeddings import EmbeddingMatrix
from .pipeline import LabeledExample
from .rng import NS_SYNTH, derive_stream


def synthetic_task(n_tokens: int = 200, dim: int = 32,
                   n_examples: int = 2000, seq_len: int = 10,
                   n_classes: int = 2, margin: float = 2.0,
                   seed: int = 0) -> tuple[EmbeddingMatrix, list[LabeledExample]]:
    """Build the embedding matrix and labeled examples for one task draw."""
    if n_tokens % n_classes:
        raise ValueError("n_tokens must divide evenly into classes")
    if dim < n_classes:
        raise ValueError("need at least one dimension per class")
    stream = derive_stream(NS_SYNTH, seed, "embeddings")
    vectors = stream.normal(scale=1.0 / np.sqrt(dim), size=(n_tokens, dim))
    per_class = n_tokens // n_classes
    for c in range(n_classes):
        vectors[c * per_class:(c + 1) * per_class, c] += margin / 2.0
    matrix = EmbeddingMatrix(
        tuple(f"w{i:04d}" for i in range(n_tokens)), vectors)

    stream = derive_stream(NS_SYNTH, seed, "examples")
    labels = stream.integers(0, n_classes, size=n_examples)
    examples = []
    for y in labels:
        pool_start = int(y) * per_class
        picks = stream.integers(pool_start, pool_start + per_class,
                                size=seq_len)
        examples.append(LabeledExample(tuple(int(t) for t in picks), int(y)))
    return matrix, examples
