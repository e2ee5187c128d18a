"""Dataset preparation for training on privatized text.

A run fixes a reconstruction vocabulary (the most frequent in-vocabulary
corpus tokens) and one or more plain-token sequences drawn from it. Each
training input gets a plain-token sequence prepended and the whole thing
privatized in one shot; the reconstruction targets are always the
original, un-privatized plain tokens. The dataset is privatized once,
before training, never re-noised per epoch.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingMatrix
from .mechanism import MechanismParams, privatize_sequence
from .rng import NS_PLAIN_TOKENS, NS_SPEC_CHOICE, derive_stream

DEFAULT_RECON_VOCAB_SIZE = 7630
DEFAULT_PLAIN_TOKEN_COUNT = 40


class CorpusFormatError(ValueError):
    """Corpus file violates the TSV layout; `line` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class OOVTokenError(ValueError):
    """A corpus token is missing from the embedding vocabulary."""


@dataclass(frozen=True)
class ReconVocab:
    """Ordered reconstruction vocabulary; a subset of the embedding vocab."""

    tokens: tuple[str, ...]
    token_ids: tuple[int, ...]  # embedding ids aligned with `tokens`

    def __post_init__(self):
        if len(self.tokens) < 2:
            raise ValueError("reconstruction vocabulary needs >= 2 tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("reconstruction vocabulary tokens must be unique")
        if len(self.tokens) != len(self.token_ids):
            raise ValueError("tokens and token_ids lengths differ")

    def __len__(self) -> int:
        return len(self.tokens)

    def index_of(self, token: str) -> int:
        try:
            return self.tokens.index(token)
        except ValueError:
            raise KeyError(f"token {token!r} not in reconstruction vocabulary") from None


@dataclass(frozen=True)
class PlainTokenSpec:
    """A fixed plain-token sequence and its reconstruction-target indices."""

    token_ids: tuple[int, ...]      # embedding ids
    recon_indices: tuple[int, ...]  # positions in the reconstruction vocab
    seed: int

    def __post_init__(self):
        if len(self.token_ids) < 1:
            raise ValueError("plain-token sequence must be nonempty")
        if len(self.token_ids) != len(self.recon_indices):
            raise ValueError("token_ids and recon_indices lengths differ")

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass(frozen=True)
class LabeledExample:
    """One task input: token ids plus an integer class label."""

    token_ids: tuple[int, ...]
    label: int

    def __post_init__(self):
        if len(self.token_ids) < 1:
            raise ValueError("example must contain at least one token")
        if self.label < 0:
            raise ValueError(f"label must be nonnegative, got {self.label}")


@dataclass(frozen=True)
class PrivatizedExample:
    """Privatized [plain; input] sequence with its training targets.

    `recon_targets` are the reconstruction-vocabulary indices of the
    ORIGINAL plain tokens; the privatized ones appear only in token_ids.
    Records the (seed, eta) that produced it.
    """

    token_ids: tuple[int, ...]
    plain_count: int
    recon_targets: tuple[int, ...]
    label: int
    seed: int
    eta: float

    def __post_init__(self):
        if self.plain_count != len(self.recon_targets):
            raise ValueError("plain_count must equal the number of targets")
        if len(self.token_ids) <= self.plain_count:
            raise ValueError("privatized sequence has no task tokens")

    @property
    def task_count(self) -> int:
        return len(self.token_ids) - self.plain_count


def build_recon_vocab(corpus, matrix: EmbeddingMatrix,
                      size: int = DEFAULT_RECON_VOCAB_SIZE) -> ReconVocab:
    """The `size` most frequent in-vocabulary corpus tokens.

    Ties break by first occurrence in the corpus, so the result is a pure
    function of (corpus, size).
    """
    counts: Counter[str] = Counter()
    first_seen: dict[str, int] = {}
    pos = 0
    for seq in corpus:
        for tok in seq:
            if tok in matrix:
                counts[tok] += 1
                if tok not in first_seen:
                    first_seen[tok] = pos
            pos += 1
    if not counts:
        raise ValueError("corpus has no tokens in the embedding vocabulary")
    if size < 2:
        raise ValueError(f"vocabulary size must be >= 2, got {size}")
    if size > len(counts):
        raise ValueError(
            f"requested vocabulary of {size} tokens but only {len(counts)} "
            "distinct corpus tokens are in the embedding vocabulary")
    ranked = sorted(counts, key=lambda t: (-counts[t], first_seen[t]))[:size]
    return ReconVocab(tuple(ranked), tuple(matrix.id_of(t) for t in ranked))


def generate_plain_tokens(m: int, vocab: ReconVocab, seed: int,
                          spec_index: int = 0) -> PlainTokenSpec:
    """Draw m tokens uniformly with replacement from the recon vocabulary."""
    if m < 1:
        raise ValueError(f"plain-token length must be >= 1, got {m}")
    stream = derive_stream(NS_PLAIN_TOKENS, seed, spec_index)
    picks = stream.integers(0, len(vocab), size=m)
    return PlainTokenSpec(
        token_ids=tuple(vocab.token_ids[j] for j in picks),
        recon_indices=tuple(int(j) for j in picks),
        seed=seed,
    )


def prepare_example(example: LabeledExample, spec: PlainTokenSpec,
                    matrix: EmbeddingMatrix, params: MechanismParams,
                    seq_index: int = 0) -> PrivatizedExample:
    """Prepend plain tokens, privatize the whole sequence once."""
    combined = list(spec.token_ids) + list(example.token_ids)
    privatized = privatize_sequence(combined, matrix, params, seq_index)
    return PrivatizedExample(
        token_ids=tuple(privatized),
        plain_count=len(spec),
        recon_targets=spec.recon_indices,
        label=example.label,
        seed=params.seed,
        eta=params.eta,
    )


def prepare_dataset(examples, specs, matrix: EmbeddingMatrix,
                    params: MechanismParams,
                    first_index: int = 0) -> list[PrivatizedExample]:
    """Privatize a full training set; example i uses stream first_index + i.

    `specs` is one PlainTokenSpec or a pool; with a pool, each example is
    paired with a seed-determined random member. Passing None trains
    without plain tokens (privatization only, no reconstruction targets).
    """
    examples = list(examples)
    if specs is None:
        out = []
        for i, ex in enumerate(examples):
            privatized = privatize_sequence(ex.token_ids, matrix, params,
                                            first_index + i)
            out.append(PrivatizedExample(
                token_ids=tuple(privatized), plain_count=0, recon_targets=(),
                label=ex.label, seed=params.seed, eta=params.eta))
        return out
    if isinstance(specs, PlainTokenSpec):
        specs = [specs]
    specs = list(specs)
    if not specs:
        raise ValueError("at least one plain-token spec is required")
    if len(specs) == 1:
        choices = np.zeros(len(examples), dtype=np.intp)
    else:
        stream = derive_stream(NS_SPEC_CHOICE, params.seed)
        choices = stream.integers(0, len(specs), size=len(examples))
    return [prepare_example(ex, specs[choices[i]], matrix, params,
                            first_index + i)
            for i, ex in enumerate(examples)]


def prepare_inference_input(token_ids, matrix: EmbeddingMatrix,
                            params: MechanismParams,
                            seq_index: int = 0) -> list[int]:
    """Privatize an inference input; no plain tokens are attached."""
    return privatize_sequence(token_ids, matrix, params, seq_index)


@dataclass(frozen=True)
class CorpusRow:
    """One corpus record: class label, private attributes, surface tokens."""

    label: int
    attributes: tuple[int, ...]
    tokens: tuple[str, ...]


def read_corpus(path, n_attributes: int = 0) -> list[CorpusRow]:
    """Read a UTF-8 TSV corpus: "label TAB [attr TAB ...] text".

    Text is whitespace-tokenized into opaque surface strings.
    """
    rows = []
    expected = 2 + n_attributes
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != expected:
                raise CorpusFormatError(
                    f"expected {expected} tab-separated fields, got {len(fields)}",
                    lineno)
            try:
                label = int(fields[0])
                attrs = tuple(int(f) for f in fields[1:1 + n_attributes])
            except ValueError:
                raise CorpusFormatError(
                    f"non-integer label/attribute in {line!r}", lineno) from None
            tokens = tuple(fields[-1].split())
            if not tokens:
                raise CorpusFormatError("empty text field", lineno)
            rows.append(CorpusRow(label, attrs, tokens))
    if not rows:
        raise CorpusFormatError(f"no records in {path}")
    return rows


def write_corpus(path, rows) -> None:
    """Write CorpusRows back out in the same TSV layout (LF endings)."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fields = [str(row.label), *(str(a) for a in row.attributes),
                      " ".join(row.tokens)]
            fh.write("\t".join(fields) + "\n")


def encode_rows(rows, matrix: EmbeddingMatrix,
                skip_oov: bool = False) -> list[LabeledExample]:
    """Map corpus rows to embedding ids.

    Out-of-vocabulary tokens abort with a diagnostic by default; silent
    substitution would corrupt the privacy accounting. With skip_oov the
    offending tokens are dropped instead (a row losing all its tokens is
    still an error).
    """
    examples = []
    for i, row in enumerate(rows):
        ids = []
        for tok in row.tokens:
            if tok in matrix:
                ids.append(matrix.id_of(tok))
            elif not skip_oov:
                raise OOVTokenError(
                    f"record {i + 1}: token {tok!r} is not in the embedding "
                    "vocabulary (use skip_oov to drop such tokens)")
        if not ids:
            raise OOVTokenError(
                f"record {i + 1}: no in-vocabulary tokens remain")
        examples.append(LabeledExample(tuple(ids), row.label))
    return examples
