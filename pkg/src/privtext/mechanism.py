"""Metric-LDP text privatization: perturb word embeddings, re-snap to words.

The mechanism adds isotropic noise with density proportional to
exp(-eta * ||z||) to a word's embedding and replaces the word by the
vocabulary item nearest to the perturbed point. Noise is built as
z = l * v with magnitude l ~ Gamma(d, 1/eta) and direction v uniform on
the unit sphere, which yields exactly that density. Smaller eta means
more noise and stronger privacy; the mechanism may well return the
original word, so the replacement probability is a measurement, not a
guarantee.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .embeddings import DimensionMismatchError, EmbeddingMatrix
from .rng import NS_NOISE, NS_TRIALS, derive_stream

_DTYPES = {"f8": np.float64, "f4": np.float32}


class ParameterError(ValueError):
    """Invalid mechanism parameter (eta must be positive, metric l2)."""


@dataclass(frozen=True)
class MechanismParams:
    """Privacy parameter eta, master seed, and the (fixed) L2 metric."""

    eta: float
    seed: int
    metric: str = "l2"

    def __post_init__(self):
        if not (self.eta > 0 and np.isfinite(self.eta)):
            raise ParameterError(f"eta must be a positive real, got {self.eta}")
        if self.metric != "l2":
            raise ParameterError(f"unsupported metric {self.metric!r}")


@dataclass(frozen=True)
class NoiseSample:
    """One draw: magnitude l >= 0, unit direction v, and z = l * v."""

    magnitude: float
    direction: np.ndarray
    vector: np.ndarray


def noise_stream(params: MechanismParams, seq_index: int) -> np.random.Generator:
    """Noise generator for one sequence; independent across sequences."""
    return derive_stream(NS_NOISE, params.seed, seq_index)


def sample_noise(d: int, params: MechanismParams,
                 stream: np.random.Generator) -> NoiseSample:
    """Draw one noise vector with density proportional to exp(-eta ||z||)."""
    if d < 1:
        raise ParameterError(f"dimension must be >= 1, got {d}")
    magnitude = float(stream.gamma(shape=d, scale=1.0 / params.eta))
    raw = stream.standard_normal(d)
    norm = float(np.sqrt(raw @ raw))
    while norm == 0.0:  # probability-zero guard
        raw = stream.standard_normal(d)
        norm = float(np.sqrt(raw @ raw))
    direction = raw / norm
    return NoiseSample(magnitude, direction, magnitude * direction)


def sample_noise_batch(d: int, params: MechanismParams,
                       stream: np.random.Generator, count: int) -> np.ndarray:
    """Vectorized batch of `count` independent noise vectors (count x d).

    Consumes the stream in a fixed order (all magnitudes, then all
    directions), so a given (stream, count) pair always produces the same
    batch. Same law as repeated sample_noise calls.
    """
    if d < 1:
        raise ParameterError(f"dimension must be >= 1, got {d}")
    if count == 0:
        return np.empty((0, d), dtype=np.float64)
    magnitudes = stream.gamma(shape=d, scale=1.0 / params.eta, size=count)
    raw = stream.standard_normal((count, d))
    norms = np.sqrt(np.einsum("ij,ij->i", raw, raw))
    norms[norms == 0.0] = 1.0
    return raw * (magnitudes / norms)[:, None]


def privatize_embedding(x: np.ndarray, params: MechanismParams,
                        stream: np.random.Generator) -> np.ndarray:
    """Perturbed embedding x + z."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatchError("expected a 1-D embedding vector")
    return x + sample_noise(x.shape[0], params, stream).vector


def privatize_token(token_id: int, matrix: EmbeddingMatrix,
                    params: MechanismParams,
                    stream: np.random.Generator) -> int:
    """Perturb one token's embedding and return the nearest word's id."""
    matrix.check_ids([token_id])
    query = privatize_embedding(matrix.vectors[token_id], params, stream)
    idx = kernels.nearest_rows(matrix.vectors, matrix.sqnorms(),
                               query.reshape(1, -1))
    return int(idx[0])


def privatize_sequence(token_ids, matrix: EmbeddingMatrix,
                       params: MechanismParams, seq_index: int = 0,
                       precision: str = "f8") -> list[int]:
    """Privatize every position independently with fresh noise.

    The noise stream is keyed by (seed, seq_index) and consumed in
    position order, so sequences can be processed concurrently and in any
    order with bit-identical results. Noise is always drawn in double
    precision; precision="f4" switches only the distance search to the
    single-precision bulk path.
    """
    ids = list(token_ids)
    matrix.check_ids(ids)
    if not ids:
        return []
    noise = sample_noise_batch(matrix.dim, params,
                               noise_stream(params, seq_index), len(ids))
    queries = matrix.vectors[np.asarray(ids, dtype=np.intp)] + noise
    dtype = _DTYPES[precision]
    idx = kernels.nearest_rows(matrix.rows(dtype), matrix.sqnorms(dtype),
                               queries.astype(dtype, copy=False))
    return [int(i) for i in idx]


def privatize_corpus(sequences, matrix: EmbeddingMatrix,
                     params: MechanismParams, precision: str = "f8",
                     workers: int = 1, first_index: int = 0) -> list[list[int]]:
    """Privatize a corpus; sequence i uses stream index first_index + i.

    With workers > 1 the sequences are privatized concurrently; per-
    sequence stream keying makes the output independent of scheduling.
    """
    seqs = list(sequences)
    if workers <= 1:
        return [privatize_sequence(s, matrix, params, first_index + i, precision)
                for i, s in enumerate(seqs)]
    out: list[list[int]] = [[] for _ in seqs]

    def work(i):
        out[i] = privatize_sequence(seqs[i], matrix, params,
                                    first_index + i, precision)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(work, range(len(seqs))))
    return out


def estimate_replacement_probability(corpus, matrix: EmbeddingMatrix,
                                     params: MechanismParams, trials: int = 1,
                                     precision: str = "f8") -> float:
    """Fraction of (token, trial) events where the output word changed.

    Trial 0 uses the same stream indices as privatize_corpus on the same
    corpus, so a single-trial estimate reproduces an actual privatization
    run exactly.
    """
    seqs = [list(s) for s in corpus]
    if not seqs or all(len(s) == 0 for s in seqs):
        raise ValueError("corpus must contain at least one token")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    events = 0
    changed = 0
    for t in range(trials):
        base = t * len(seqs)
        for i, seq in enumerate(seqs):
            priv = privatize_sequence(seq, matrix, params, base + i, precision)
            events += len(seq)
            changed += sum(1 for a, b in zip(seq, priv) if a != b)
    return changed / events


def replacement_distribution(token_id: int, matrix: EmbeddingMatrix,
                             params: MechanismParams, trials: int,
                             precision: str = "f8") -> np.ndarray:
    """Empirical output-word distribution over `trials` mechanism draws.

    Runs the deployed noise and distance kernels on a vectorized stream
    keyed by (seed, token); intended for measurement and calibration.
    """
    matrix.check_ids([token_id])
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    stream = derive_stream(NS_TRIALS, params.seed, token_id)
    dtype = _DTYPES[precision]
    counts = np.zeros(len(matrix), dtype=np.int64)
    chunk = 200_000
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        noise = sample_noise_batch(matrix.dim, params, stream, n)
        queries = matrix.vectors[token_id] + noise
        idx = kernels.nearest_rows(matrix.rows(dtype), matrix.sqnorms(dtype),
                                   queries.astype(dtype, copy=False))
        counts += np.bincount(idx, minlength=len(matrix))
        done += n
    return counts / trials
