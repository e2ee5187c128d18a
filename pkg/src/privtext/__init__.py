"""Local-DP text privatization with prompt tuning and attack evaluation."""

from .embeddings import (
    EmbeddingMatrix,
    embed_sequence,
    load_embeddings,
    nearest_token,
)
from .mechanism import (
    MechanismParams,
    estimate_replacement_probability,
    privatize_embedding,
    privatize_sequence,
    privatize_token,
    sample_noise,
)

__version__ = "0.1.0"

__all__ = [
    "EmbeddingMatrix",
    "MechanismParams",
    "embed_sequence",
    "estimate_replacement_probability",
    "load_embeddings",
    "nearest_token",
    "privatize_embedding",
    "privatize_sequence",
    "privatize_token",
    "sample_noise",
    "__version__",
]
