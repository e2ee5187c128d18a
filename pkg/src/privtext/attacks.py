"""Simulated adversaries and the empirical-privacy metric.

Two attacks are modeled. Embedding inversion recovers tokens from
privatized embedding rows by exact nearest-neighbor search over the
original embedding space; success counts exact token identity only, so
near-synonyms are failures. Attribute inference trains a 2-layer ReLU
MLP to read private attributes out of exported representations (mean
privatized word embeddings or encoder activations); it never sees the
defended task's labels, only representations and attributes.

Every evaluation is summarized as an AttackReport whose empirical
privacy is exactly one minus the attack success rate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .embeddings import DimensionMismatchError, EmbeddingMatrix
from .model import Adam
from .rng import NS_ATTACK, NS_SPLIT, derive_stream

DEFAULT_ATTACKER_HIDDEN = 768

_REPR_HEADER = "#privtext-representations v1 "


class DegenerateDataError(ValueError):
    """Attacker training data contains fewer than two classes."""


@dataclass(frozen=True)
class AttackReport:
    """Outcome of one attack evaluation; empirical_privacy = 1 - X exactly."""

    kind: str
    eta: float | None
    success_rate: float
    empirical_privacy: float
    n_events: int
    n_successes: int
    seed: int | None
    representation: str | None = None

    def __post_init__(self):
        if self.empirical_privacy != 1.0 - self.success_rate:
            raise ValueError("empirical privacy must equal 1 - success rate")
        if self.n_events < 1:
            raise ValueError("a report needs at least one event")
        if self.n_successes != round(self.success_rate * self.n_events):
            raise ValueError("counts inconsistent with success rate")

    @classmethod
    def from_counts(cls, kind: str, n_successes: int, n_events: int,
                    eta: float | None = None, seed: int | None = None,
                    representation: str | None = None) -> "AttackReport":
        rate = n_successes / n_events
        return cls(kind=kind, eta=eta, success_rate=rate,
                   empirical_privacy=1.0 - rate, n_events=n_events,
                   n_successes=n_successes, seed=seed,
                   representation=representation)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "eta": self.eta,
               "success_rate": self.success_rate,
               "empirical_privacy": self.empirical_privacy,
               "n_events": self.n_events, "n_successes": self.n_successes,
               "seed": self.seed}
        if self.representation is not None:
            out["representation"] = self.representation
        return out


def inversion_attack(vectors: np.ndarray, original_ids, matrix: EmbeddingMatrix,
                     eta: float | None = None,
                     seed: int | None = None) -> AttackReport:
    """Nearest-neighbor decode of privatized embedding rows.

    `vectors` may be perturbed embeddings or embeddings of already
    replaced words; either way each row is snapped to the closest
    vocabulary entry and compared with the original token.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    originals = np.asarray(list(original_ids), dtype=np.int64)
    if vectors.ndim != 2 or vectors.shape[1] != matrix.dim:
        raise DimensionMismatchError(
            f"expected rows of width {matrix.dim}, got {vectors.shape}")
    if vectors.shape[0] != originals.shape[0]:
        raise ValueError(
            f"{vectors.shape[0]} rows but {originals.shape[0]} original tokens")
    if vectors.shape[0] == 0:
        raise ValueError("nothing to attack: no rows")
    recovered = kernels.nearest_rows(matrix.vectors, matrix.sqnorms(), vectors)
    hits = int((recovered == originals).sum())
    return AttackReport.from_counts("inversion", hits, len(originals),
                                    eta=eta, seed=seed)


def mean_representation(vectors) -> np.ndarray:
    """Arithmetic mean row of a nonempty stack of vectors."""
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("need a nonempty 2-D stack of vectors")
    return arr.mean(axis=0)


@dataclass
class AttributeAttacker:
    """2-layer ReLU MLP probing representations for a private attribute."""

    w1: np.ndarray  # (hidden, width)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (classes, hidden)
    b2: np.ndarray  # (classes,)

    @classmethod
    def build(cls, width: int, n_classes: int,
              hidden: int = DEFAULT_ATTACKER_HIDDEN,
              seed: int = 0) -> "AttributeAttacker":
        stream = derive_stream(NS_ATTACK, seed, "init")
        return cls(
            w1=stream.normal(scale=1.0 / math.sqrt(width), size=(hidden, width)),
            b1=np.zeros(hidden),
            w2=stream.normal(scale=1.0 / math.sqrt(hidden), size=(n_classes, hidden)),
            b2=np.zeros(n_classes))

    @property
    def width(self) -> int:
        return self.w1.shape[1]

    def parameters(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def logits(self, reps: np.ndarray) -> np.ndarray:
        hidden = np.maximum(reps @ self.w1.T + self.b1, 0.0)
        return hidden @ self.w2.T + self.b2

    def predict(self, reps: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(reps), axis=1)


def attacker_loss_and_grads(attacker: AttributeAttacker, reps: np.ndarray,
                            labels: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over a batch plus exact gradients."""
    pre = reps @ attacker.w1.T + attacker.b1
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ attacker.w2.T + attacker.b2
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = reps.shape[0]
    loss = float(-logp[np.arange(n), labels].mean())
    d_logits = np.exp(logp)
    d_logits[np.arange(n), labels] -= 1.0
    d_logits /= n
    grads = {
        "w2": d_logits.T @ hidden,
        "b2": d_logits.sum(axis=0),
    }
    d_hidden = d_logits @ attacker.w2
    d_pre = d_hidden * (pre > 0.0)
    grads["w1"] = d_pre.T @ reps
    grads["b1"] = d_pre.sum(axis=0)
    return loss, grads


@dataclass(frozen=True)
class AttackTrainConfig:
    hidden: int = DEFAULT_ATTACKER_HIDDEN
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0


def train_attribute_attacker(reps: np.ndarray, labels,
                             config: AttackTrainConfig = AttackTrainConfig()
                             ) -> AttributeAttacker:
    """Fit the MLP by Adam on cross-entropy; deterministic per seed."""
    reps = np.asarray(reps, dtype=np.float64)
    labels = np.asarray(list(labels), dtype=np.int64)
    if reps.ndim != 2 or reps.shape[0] != labels.shape[0]:
        raise ValueError("representations and labels must align")
    classes = np.unique(labels)
    if classes.size < 2:
        raise DegenerateDataError(
            f"attacker needs >= 2 attribute classes, got {classes.size}")
    if labels.min() < 0:
        raise ValueError("attribute labels must be nonnegative integers")
    n_classes = int(labels.max()) + 1
    attacker = AttributeAttacker.build(reps.shape[1], n_classes,
                                       hidden=config.hidden, seed=config.seed)
    params = attacker.parameters()
    opt = Adam(params, config.learning_rate)
    for epoch in range(1, config.epochs + 1):
        order = derive_stream(NS_ATTACK, config.seed, "shuffle",
                              epoch).permutation(len(labels))
        for start in range(0, len(labels), config.batch_size):
            idx = order[start:start + config.batch_size]
            _, grads = attacker_loss_and_grads(attacker, reps[idx], labels[idx])
            opt.step(params, grads)
    return attacker


def attribute_attack_eval(attacker: AttributeAttacker, reps: np.ndarray,
                          labels, eta: float | None = None,
                          seed: int | None = None,
                          representation: str | None = None) -> AttackReport:
    """Held-out attack accuracy, reported as empirical privacy 1 - X."""
    reps = np.asarray(reps, dtype=np.float64)
    labels = np.asarray(list(labels), dtype=np.int64)
    if reps.ndim != 2 or reps.shape[1] != attacker.width:
        raise DimensionMismatchError(
            f"attacker expects width {attacker.width}, got {reps.shape}")
    if reps.shape[0] != labels.shape[0] or reps.shape[0] == 0:
        raise ValueError("representations and labels must align and be nonempty")
    hits = int((attacker.predict(reps) == labels).sum())
    return AttackReport.from_counts("attribute", hits, len(labels), eta=eta,
                                    seed=seed, representation=representation)


def split_indices(count: int, holdout_fraction: float,
                  seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic train/held-out index split."""
    if not 0.0 < holdout_fraction < 1.0:
        raise ValueError("holdout fraction must be in (0, 1)")
    order = derive_stream(NS_SPLIT, seed).permutation(count)
    n_test = max(1, int(round(count * holdout_fraction)))
    return np.sort(order[n_test:]), np.sort(order[:n_test])


def write_representations(path, reps: np.ndarray, attributes: np.ndarray,
                          meta: dict) -> None:
    """Structured-text export: id TAB attr,attr TAB v1 v2 ... per line.

    Holds only representations and private attributes; task labels are
    deliberately not part of the schema.
    """
    reps = np.asarray(reps, dtype=np.float64)
    attributes = np.asarray(attributes, dtype=np.int64)
    if attributes.ndim == 1:
        attributes = attributes[:, None]
    if reps.shape[0] != attributes.shape[0]:
        raise ValueError("representations and attributes must align")
    header = _REPR_HEADER + json.dumps(meta, sort_keys=True,
                                       separators=(",", ":"))
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for i in range(reps.shape[0]):
            attrs = ",".join(str(a) for a in attributes[i])
            values = " ".join(repr(float(v)) for v in reps[i])
            fh.write(f"{i}\t{attrs}\t{values}\n")


def read_representations(path) -> tuple[np.ndarray, np.ndarray, dict]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(_REPR_HEADER):
        raise ValueError(f"{path}: not a representation export")
    meta = json.loads(lines[0][len(_REPR_HEADER):])
    reps = []
    attrs = []
    for line in lines[1:]:
        if not line:
            continue
        _, attr_field, value_field = line.split("\t")
        attrs.append([int(a) for a in attr_field.split(",")])
        reps.append([float(v) for v in value_field.split(" ")])
    return (np.asarray(reps, dtype=np.float64),
            np.asarray(attrs, dtype=np.int64), meta)
