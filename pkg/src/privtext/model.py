"""Desk-scale prompt-tuned classifier with a token-reconstruction head.

The encoder is a single frozen, randomly initialized self-attention block
(with residual) followed by a frozen tanh feed-forward (with residual):
a fixed nonlinear mixer through which the trainable prompt influences
every position, standing in for a pretrained backbone. Trainable pieces
are the prompt, the two-layer reconstruction head, and the task head;
gradients are exact reverse-mode over this fixed graph, written out by
hand (no autodiff tape).

Inputs are privatized [plain; task] sequences. The first block of
activations feeds the reconstruction head (predict the original plain
tokens), the rest are mean-pooled into the task classifier, and the two
cross-entropies are summed unweighted. The reconstruction head is unused
at inference and can be discarded without changing predictions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .embeddings import EmbeddingMatrix
from .mechanism import MechanismParams
from .pipeline import PrivatizedExample
from .rng import NS_MODEL_INIT, NS_SHUFFLE, derive_stream
from .serialize import load_container, save_container

DEFAULT_PROMPT_LENGTH = 10
DEFAULT_RECON_HIDDEN = 96


class NumericError(RuntimeError):
    """Training diverged: a loss or update stopped being finite."""


class StaleTraceError(RuntimeError):
    """Trace was produced by an earlier version of the model parameters."""


@lru_cache(maxsize=8)
def _position_table(length: int, dim: int) -> np.ndarray:
    """Sinusoidal position encodings, cached read-only."""
    table = np.zeros((max(length, 1), dim))
    pos = np.arange(max(length, 1))[:, None]
    idx = np.arange(0, dim, 2)[None, :]
    angles = pos / np.power(10000.0, idx / dim)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, : dim // 2])
    table.flags.writeable = False
    return table


def _softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


@dataclass
class PromptModel:
    """Trainable prompt and heads around a frozen encoder.

    Frozen pieces (embeddings, attention and feed-forward maps) are
    write-protected and never receive gradients.
    """

    embeddings: EmbeddingMatrix
    prompt: np.ndarray                 # (N, h) trainable
    wq: np.ndarray                     # (h, h) frozen
    wk: np.ndarray                     # (h, h) frozen
    wv: np.ndarray                     # (h, h) frozen
    wf: np.ndarray                     # (h, h) frozen
    w1: np.ndarray                     # (|T|, c) trainable
    w2: np.ndarray                     # (c, h) trainable
    w_task: np.ndarray                 # (|C|, h) trainable
    b_task: np.ndarray                 # (|C|,) trainable
    init_seed: int = 0
    trained_plain_count: int = 0
    version: int = field(default=0, compare=False)

    @classmethod
    def build(cls, matrix: EmbeddingMatrix, recon_size: int, n_classes: int,
              prompt_length: int = DEFAULT_PROMPT_LENGTH,
              recon_hidden: int = DEFAULT_RECON_HIDDEN,
              seed: int = 0) -> "PromptModel":
        if prompt_length < 1 or recon_hidden < 1:
            raise ValueError("prompt length and recon hidden size must be >= 1")
        if recon_size < 1 or n_classes < 1:
            raise ValueError("recon vocabulary and class count must be >= 1")
        h = matrix.dim
        stream = derive_stream(NS_MODEL_INIT, seed)
        scale = 1.0 / math.sqrt(h)
        frozen = [stream.normal(scale=scale, size=(h, h)) for _ in range(4)]
        for w in frozen:
            w.flags.writeable = False
        prompt = stream.normal(scale=scale, size=(prompt_length, h))
        w2 = stream.normal(scale=scale, size=(recon_hidden, h))
        w1 = stream.normal(scale=1.0 / math.sqrt(recon_hidden),
                           size=(recon_size, recon_hidden))
        return cls(embeddings=matrix, prompt=prompt,
                   wq=frozen[0], wk=frozen[1], wv=frozen[2], wf=frozen[3],
                   w1=w1, w2=w2,
                   w_task=np.zeros((n_classes, h)), b_task=np.zeros(n_classes),
                   init_seed=seed)

    @property
    def hidden(self) -> int:
        return self.embeddings.dim

    @property
    def prompt_length(self) -> int:
        return self.prompt.shape[0]

    @property
    def recon_size(self) -> int:
        return self.w1.shape[0]

    @property
    def recon_hidden(self) -> int:
        return self.w1.shape[1]

    @property
    def n_classes(self) -> int:
        return self.w_task.shape[0]

    def trainable(self) -> dict[str, np.ndarray]:
        """The tunable parameters, in a fixed order."""
        return {"prompt": self.prompt, "w1": self.w1, "w2": self.w2,
                "w_task": self.w_task, "b_task": self.b_task}

    def drop_reconstruction_head(self) -> "PromptModel":
        """Copy without w1/w2; predictions are unchanged by construction."""
        return PromptModel(
            embeddings=self.embeddings, prompt=self.prompt.copy(),
            wq=self.wq, wk=self.wk, wv=self.wv, wf=self.wf,
            w1=np.zeros((1, 1)), w2=np.zeros((1, self.hidden)),
            w_task=self.w_task.copy(), b_task=self.b_task.copy(),
            init_seed=self.init_seed,
            trained_plain_count=self.trained_plain_count,
            version=self.version)


def param_count(model: PromptModel) -> int:
    """Trainable parameter count: N*h + |T|*c + c*h + |C|*h + |C|."""
    return sum(arr.size for arr in model.trainable().values())


@dataclass
class ForwardTrace:
    """All intermediates of one forward pass (consumed by backward)."""

    token_ids: tuple[int, ...]
    plain_count: int
    u0: np.ndarray
    att_q: np.ndarray
    att_k: np.ndarray
    att_v: np.ndarray
    att_weights: np.ndarray
    u1: np.ndarray
    ff_act: np.ndarray
    activations: np.ndarray        # all m+n post-encoder rows
    recon_logits: np.ndarray       # (m, |T|)
    recon_probs: np.ndarray
    pooled: np.ndarray
    task_logits: np.ndarray
    task_probs: np.ndarray
    model_version: int

    @property
    def task_count(self) -> int:
        return len(self.token_ids) - self.plain_count


def forward_tokens(model: PromptModel, token_ids, plain_count: int,
                   position_offset: int = 0) -> ForwardTrace:
    """Run the frozen encoder and both heads over [prompt; sequence].

    position_offset shifts the sequence rows' position indices; inference
    without plain tokens passes the trained plain-token count so the task
    block keeps the positional geometry it was trained with.
    """
    ids = tuple(int(t) for t in token_ids)
    m = plain_count
    if m < 0 or m > len(ids):
        raise ValueError(f"plain_count {m} out of range for {len(ids)} tokens")
    if len(ids) - m < 1:
        raise ValueError("sequence needs at least one task token")
    model.embeddings.check_ids(ids)
    h = model.hidden
    z = model.embeddings.vectors[np.asarray(ids, dtype=np.intp)]
    npos = model.prompt_length
    table = _position_table(npos + position_offset + len(ids), h)
    u0 = np.vstack([model.prompt, z])
    u0 = u0 + np.vstack([table[:npos],
                         table[npos + position_offset:
                               npos + position_offset + len(ids)]])
    att_q = u0 @ model.wq
    att_k = u0 @ model.wk
    att_v = u0 @ model.wv
    scores = (att_q @ att_k.T) / math.sqrt(h)
    att = _softmax(scores, axis=1)
    u1 = u0 + att @ att_v
    ff = np.tanh(u1 @ model.wf)
    u2 = u1 + ff
    g = u2[model.prompt_length:]
    recon_logits = (g[:m] @ model.w2.T) @ model.w1.T
    pooled = g[m:].mean(axis=0)
    task_logits = model.w_task @ pooled + model.b_task
    return ForwardTrace(
        token_ids=ids, plain_count=m, u0=u0, att_q=att_q, att_k=att_k,
        att_v=att_v, att_weights=att, u1=u1, ff_act=ff, activations=g,
        recon_logits=recon_logits, recon_probs=_softmax(recon_logits, axis=1),
        pooled=pooled, task_logits=task_logits,
        task_probs=_softmax(task_logits), model_version=model.version)


def forward(model: PromptModel, example: PrivatizedExample) -> ForwardTrace:
    return forward_tokens(model, example.token_ids, example.plain_count)


def recon_loss(trace: ForwardTrace, targets) -> float:
    """Summed cross-entropy of the original plain tokens; 0 when m = 0."""
    targets = [int(t) for t in targets]
    if len(targets) != trace.plain_count:
        raise ValueError(
            f"{len(targets)} targets for {trace.plain_count} plain tokens")
    if not targets:
        return 0.0
    size = trace.recon_logits.shape[1]
    for j in targets:
        if not 0 <= j < size:
            raise IndexError(f"target index {j} outside vocabulary of {size}")
    logp = _log_softmax(trace.recon_logits, axis=1)
    return float(-logp[np.arange(len(targets)), targets].sum())


def task_loss(trace: ForwardTrace, label: int) -> float:
    """Cross-entropy of the class label against the task probabilities."""
    n_classes = trace.task_logits.shape[0]
    if not 0 <= label < n_classes:
        raise IndexError(f"label {label} outside [0, {n_classes})")
    return float(-_log_softmax(trace.task_logits)[label])


def total_loss(trace: ForwardTrace, targets, label: int) -> float:
    """Unweighted sum, task term first (fixed summation order)."""
    return task_loss(trace, label) + recon_loss(trace, targets)


@dataclass
class GradientBundle:
    """Gradients for the trainable parameters only (frozen ones get none)."""

    prompt: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    w_task: np.ndarray
    b_task: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"prompt": self.prompt, "w1": self.w1, "w2": self.w2,
                "w_task": self.w_task, "b_task": self.b_task}


def backward(model: PromptModel, trace: ForwardTrace, targets,
             label: int) -> GradientBundle:
    """Exact gradients of total_loss via reverse-mode over the fixed graph."""
    if trace.model_version != model.version:
        raise StaleTraceError(
            "trace was computed for version "
            f"{trace.model_version}, model is at {model.version}")
    m = trace.plain_count
    n = trace.task_count
    npos = model.prompt_length
    h = model.hidden
    targets = [int(t) for t in targets]
    if len(targets) != m:
        raise ValueError(f"{len(targets)} targets for {m} plain tokens")

    # task head: d(cross-entropy softmax logits) = p - y
    d_task_logits = trace.task_probs.copy()
    d_task_logits[label] -= 1.0
    d_w_task = np.outer(d_task_logits, trace.pooled)
    d_b_task = d_task_logits
    d_pooled = model.w_task.T @ d_task_logits

    # reconstruction head
    d_recon_logits = trace.recon_probs.copy()
    if m:
        d_recon_logits[np.arange(m), targets] -= 1.0
    head = model.w1 @ model.w2                      # (|T|, h)
    d_g_rec = d_recon_logits @ head                 # (m, h)
    d_head = d_recon_logits.T @ trace.activations[:m]
    d_w1 = d_head @ model.w2.T
    d_w2 = model.w1.T @ d_head

    # mean pool spreads the task gradient evenly over the last n rows
    d_g = np.vstack([d_g_rec, np.tile(d_pooled / n, (n, 1))])
    d_u2 = np.vstack([np.zeros((npos, h)), d_g])

    # feed-forward residual: u2 = u1 + tanh(u1 @ wf)
    d_pre = d_u2 * (1.0 - trace.ff_act ** 2)
    d_u1 = d_u2 + d_pre @ model.wf.T

    # attention residual: u1 = u0 + att @ v
    d_att = d_u1 @ trace.att_v.T
    d_v = trace.att_weights.T @ d_u1
    att = trace.att_weights
    d_scores = att * (d_att - (d_att * att).sum(axis=1, keepdims=True))
    d_scores /= math.sqrt(h)
    d_q = d_scores @ trace.att_k
    d_k = d_scores.T @ trace.att_q
    d_u0 = d_u1 + d_q @ model.wq.T + d_k @ model.wk.T + d_v @ model.wv.T

    return GradientBundle(prompt=d_u0[:npos], w1=d_w1, w2=d_w2,
                          w_task=d_w_task, b_task=d_b_task)


class Adam:
    """Plain Adam over a named parameter dict, updating in place."""

    def __init__(self, params: dict[str, np.ndarray], learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.first = {k: np.zeros_like(v) for k, v in params.items()}
        self.second = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray],
             grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, p in params.items():
            g = grads[name]
            f = self.first[name]
            s = self.second[name]
            f *= self.beta1
            f += (1.0 - self.beta1) * g
            s *= self.beta2
            s += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (f / bc1) / (np.sqrt(s / bc2) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("learning rate, batch size, epochs must be positive")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    task_loss: float
    recon_loss: float
    task_accuracy: float
    recon_accuracy: float | None  # None when training without plain tokens

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "task_loss": self.task_loss,
                "rec_loss": self.recon_loss, "task_acc": self.task_accuracy,
                "rec_acc": self.recon_accuracy}


def evaluate(model: PromptModel, dataset) -> EpochStats:
    """Mean losses and accuracies of the current model over a dataset."""
    t_sum = r_sum = 0.0
    t_hits = 0
    r_hits = r_events = 0
    for ex in dataset:
        trace = forward(model, ex)
        t_sum += task_loss(trace, ex.label)
        r_sum += recon_loss(trace, ex.recon_targets)
        t_hits += int(np.argmax(trace.task_probs) == ex.label)
        if ex.plain_count:
            pred = np.argmax(trace.recon_probs, axis=1)
            r_hits += int((pred == np.asarray(ex.recon_targets)).sum())
            r_events += ex.plain_count
    count = len(dataset)
    return EpochStats(
        epoch=0, task_loss=t_sum / count, recon_loss=r_sum / count,
        task_accuracy=t_hits / count,
        recon_accuracy=(r_hits / r_events) if r_events else None)


def train(model: PromptModel, dataset, config: TrainConfig,
          on_epoch=None) -> list[EpochStats]:
    """Adam on the trainable parameters; deterministic given the seed.

    Batches accumulate example gradients serially in shuffle order, so a
    fixed (dataset, config, model seed) reproduces bit-identical weights.
    Frozen encoder/embedding weights are never touched. Raises
    NumericError the moment a loss stops being finite; `on_epoch` (if
    given) receives each EpochStats as it completes, so partial logs
    survive a later abort.
    """
    examples = list(dataset)
    if not examples:
        raise ValueError("training dataset is empty")
    plain_counts = {ex.plain_count for ex in examples}
    if len(plain_counts) != 1:
        raise ValueError(f"mixed plain-token counts in dataset: {plain_counts}")
    for ex in examples:
        if not 0 <= ex.label < model.n_classes:
            raise ValueError(f"label {ex.label} outside model classes")
    model.trained_plain_count = plain_counts.pop()
    params = model.trainable()
    opt = Adam(params, config.learning_rate, config.beta1, config.beta2,
               config.adam_eps)
    log: list[EpochStats] = []
    for epoch in range(1, config.epochs + 1):
        order = derive_stream(NS_SHUFFLE, config.seed, epoch).permutation(
            len(examples))
        for start in range(0, len(examples), config.batch_size):
            batch = [examples[i] for i in order[start:start + config.batch_size]]
            sums = {k: np.zeros_like(v) for k, v in params.items()}
            for ex in batch:
                trace = forward(model, ex)
                loss = total_loss(trace, ex.recon_targets, ex.label)
                if not math.isfinite(loss):
                    raise NumericError(
                        f"non-finite loss {loss} at epoch {epoch}, "
                        f"batch starting {start}")
                grads = backward(model, trace, ex.recon_targets, ex.label)
                for k, g in grads.as_dict().items():
                    sums[k] += g
            for k in sums:
                sums[k] /= len(batch)
            opt.step(params, sums)
            model.version += 1
        stats = evaluate(model, examples)
        stats = EpochStats(epoch, stats.task_loss, stats.recon_loss,
                           stats.task_accuracy, stats.recon_accuracy)
        log.append(stats)
        if on_epoch is not None:
            on_epoch(stats)
    return log


def predict(model: PromptModel, token_ids, matrix: EmbeddingMatrix,
            params: MechanismParams, seq_index: int = 0) -> int:
    """Privatize an input (no plain tokens), run the encoder, argmax class.

    The reconstruction head plays no part here; dropping it gives the
    same label. The task block's positions stay at the offset the model
    was trained with.
    """
    from .mechanism import privatize_sequence  # local to avoid cycle at import
    privatized = privatize_sequence(token_ids, matrix, params, seq_index)
    trace = forward_tokens(model, privatized, plain_count=0,
                           position_offset=model.trained_plain_count)
    return int(np.argmax(trace.task_probs))


def save_checkpoint(model: PromptModel, path, extra_meta: dict | None = None) -> None:
    """Versioned binary checkpoint; loading restores bit-identical behavior."""
    arrays = {"prompt": model.prompt, "wq": model.wq, "wk": model.wk,
              "wv": model.wv, "wf": model.wf, "w1": model.w1, "w2": model.w2,
              "w_task": model.w_task, "b_task": model.b_task,
              "emb_vectors": model.embeddings.vectors}
    meta = {"kind": "privtext-checkpoint", "checkpoint_version": 1,
            "vocab": list(model.embeddings.vocab),
            "init_seed": model.init_seed,
            "trained_plain_count": model.trained_plain_count,
            "update_count": model.version,
            "extra": extra_meta or {}}
    save_container(path, arrays, meta)


def load_checkpoint(path) -> PromptModel:
    arrays, meta = load_container(path)
    if meta.get("kind") != "privtext-checkpoint":
        raise ValueError(f"{path}: not a model checkpoint")
    matrix = EmbeddingMatrix(tuple(meta["vocab"]), arrays["emb_vectors"])
    for name in ("wq", "wk", "wv", "wf"):
        arrays[name].flags.writeable = False
    return PromptModel(
        embeddings=matrix, prompt=arrays["prompt"], wq=arrays["wq"],
        wk=arrays["wk"], wv=arrays["wv"], wf=arrays["wf"], w1=arrays["w1"],
        w2=arrays["w2"], w_task=arrays["w_task"], b_task=arrays["b_task"],
        init_seed=meta["init_seed"],
        trained_plain_count=meta["trained_plain_count"],
        version=meta["update_count"])
