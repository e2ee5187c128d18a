"""Word-embedding store: load a plain-text vector file, query neighbors.

The matrix doubles as the perturbation space for the privatization
mechanism and as the frozen input embeddings of the model, so it is
immutable after load and all queries are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels


class EmbeddingLoadError(ValueError):
    """Problem in an embedding file; `line` is the 1-based offender."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class MalformedLineError(EmbeddingLoadError):
    """Wrong field count, unparseable or non-finite value."""


class DuplicateTokenError(EmbeddingLoadError):
    """The same token appears on more than one line."""


class DimensionMismatchError(ValueError):
    """Query vector width does not match the embedding dimension."""


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Vocabulary of unique tokens with one d-dimensional row per token.

    Row i belongs to ``vocab[i]``. Vectors are float64, C-contiguous and
    write-protected; share freely across threads.
    """

    vocab: tuple[str, ...]
    vectors: np.ndarray
    _index: dict[str, int] = field(repr=False, compare=False, default_factory=dict)
    _cache: dict[str, np.ndarray] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise ValueError("vectors must be a 2D array")
        if len(self.vocab) != vectors.shape[0]:
            raise ValueError(
                f"{len(self.vocab)} tokens but {vectors.shape[0]} vector rows")
        if len(self.vocab) < 2:
            raise ValueError("vocabulary must contain at least 2 tokens")
        if vectors.shape[1] < 1:
            raise ValueError("embedding dimension must be >= 1")
        if not np.isfinite(vectors).all():
            raise ValueError("vectors contain non-finite entries")
        index = {}
        for i, tok in enumerate(self.vocab):
            if tok in index:
                raise DuplicateTokenError(f"duplicate token {tok!r}")
            index[tok] = i
        vectors.flags.writeable = False
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_cache", {})

    def __len__(self) -> int:
        return len(self.vocab)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id_of(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise KeyError(f"token {token!r} not in embedding vocabulary") from None

    def token(self, token_id: int) -> str:
        self.check_ids([token_id])
        return self.vocab[token_id]

    def check_ids(self, token_ids) -> None:
        for t in token_ids:
            if not 0 <= int(t) < len(self.vocab):
                raise IndexError(
                    f"token id {t} out of range [0, {len(self.vocab)})")

    def sqnorms(self, dtype=np.float64) -> np.ndarray:
        """Precomputed squared row norms for the distance kernel."""
        key = f"sqnorms-{np.dtype(dtype).str}"
        if key not in self._cache:
            sq = np.einsum("ij,ij->i", self.vectors, self.vectors)
            arr = sq.astype(dtype)
            arr.flags.writeable = False
            self._cache[key] = arr
        return self._cache[key]

    def rows(self, dtype=np.float64) -> np.ndarray:
        """The vector matrix in the requested precision (cached)."""
        if dtype == np.float64:
            return self.vectors
        key = f"rows-{np.dtype(dtype).str}"
        if key not in self._cache:
            arr = np.ascontiguousarray(self.vectors, dtype=dtype)
            arr.flags.writeable = False
            self._cache[key] = arr
        return self._cache[key]


def load_embeddings(path) -> EmbeddingMatrix:
    """Parse a plain-text vector file: one "token v1 ... vd" record per line.

    An optional first line "count dim" (two integers) is accepted as a
    header and checked against the body. Raises MalformedLineError on
    inconsistent dimensions or unparseable/non-finite values and
    DuplicateTokenError on repeated tokens, each with the line number.
    """
    path = Path(path)
    vocab: list[str] = []
    rows: list[np.ndarray] = []
    seen: dict[str, int] = {}
    dim: int | None = None
    header: tuple[int, int] | None = None
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            fields = line.split(" ")
            if lineno == 1 and len(fields) == 2:
                try:
                    header = (int(fields[0]), int(fields[1]))
                    continue
                except ValueError:
                    pass  # not a header; fall through to record parsing
            if len(fields) < 2 or fields[0] == "":
                raise MalformedLineError(
                    f"expected 'token v1 ... vd', got {line!r}", lineno)
            token = fields[0]
            if token in seen:
                raise DuplicateTokenError(
                    f"duplicate token {token!r} (first seen on line {seen[token]})",
                    lineno)
            try:
                vec = np.array(fields[1:], dtype=np.float64)
            except ValueError:
                raise MalformedLineError(
                    f"unparseable value in {line!r}", lineno) from None
            if not np.isfinite(vec).all():
                raise MalformedLineError("non-finite embedding value", lineno)
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise MalformedLineError(
                    f"dimension {vec.shape[0]} != {dim} of earlier rows", lineno)
            seen[token] = lineno
            vocab.append(token)
            rows.append(vec)
    if not vocab:
        raise EmbeddingLoadError(f"no records in {path}")
    if header is not None:
        count, hdim = header
        if count != len(vocab):
            raise EmbeddingLoadError(
                f"header declares {count} records, file has {len(vocab)}")
        if hdim != dim:
            raise EmbeddingLoadError(
                f"header declares dimension {hdim}, rows have {dim}")
    try:
        return EmbeddingMatrix(tuple(vocab), np.vstack(rows))
    except ValueError as exc:
        raise EmbeddingLoadError(str(exc)) from exc


def nearest_token(query: np.ndarray, matrix: EmbeddingMatrix) -> tuple[int, float]:
    """Exact L2 nearest row: (token id, achieved distance).

    Ties break toward the smallest vocabulary index. Deterministic and
    independent of any seed.
    """
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (matrix.dim,):
        raise DimensionMismatchError(
            f"query shape {q.shape} does not match dimension {matrix.dim}")
    idx = kernels.nearest_rows(matrix.vectors, matrix.sqnorms(), q.reshape(1, -1))[0]
    # Recompute the achieved distance directly so the identity case is exact.
    diff = matrix.vectors[idx] - q
    return int(idx), float(np.sqrt(diff @ diff))


def embed_sequence(token_ids, matrix: EmbeddingMatrix) -> np.ndarray:
    """Stack embedding rows for a token sequence (n x d, n may be 0)."""
    ids = list(token_ids)
    matrix.check_ids(ids)
    if not ids:
        return np.empty((0, matrix.dim), dtype=np.float64)
    return matrix.vectors[np.asarray(ids, dtype=np.intp)]
