"""Batch CLI: privatize corpora, train, run attacks, consolidate reports.

Workflow mirrors how a data owner would use the package: privatize
locally, train on the privatized data, measure attack success, read one
summary. All randomness funnels through the single --seed; artifacts
embed (eta, seed, config hash) and identical configurations write
byte-identical files.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attacks import (
    AttackTrainConfig,
    attribute_attack_eval,
    inversion_attack,
    read_representations,
    split_indices,
    train_attribute_attacker,
    write_representations,
)
from .embeddings import EmbeddingLoadError, embed_sequence, load_embeddings
from .mechanism import (
    MechanismParams,
    ParameterError,
    privatize_corpus,
)
from .model import (
    NumericError,
    PromptModel,
    TrainConfig,
    forward_tokens,
    load_checkpoint,
    param_count,
    save_checkpoint,
    train,
)
from .pipeline import (
    DEFAULT_PLAIN_TOKEN_COUNT,
    DEFAULT_RECON_VOCAB_SIZE,
    CorpusFormatError,
    CorpusRow,
    OOVTokenError,
    build_recon_vocab,
    encode_rows,
    generate_plain_tokens,
    prepare_dataset,
    read_corpus,
    write_corpus,
)
from .serialize import canonical_json, config_hash, read_json, write_json

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

DATA_ERRORS = (EmbeddingLoadError, CorpusFormatError, OOVTokenError, OSError)


class UsageError(Exception):
    """Bad flags, bad config values, or missing referenced files."""


@dataclass
class RunConfig:
    """Resolved experiment knobs; every field has a default."""

    embeddings: str | None = None
    corpus: str | None = None
    out: str | None = None
    representations: str | None = None
    eta: float = 100.0
    seed: int = 0
    plain_token_length: int = DEFAULT_PLAIN_TOKEN_COUNT
    prompt_length: int = 10
    recon_hidden: int = 96
    recon_vocab: int = DEFAULT_RECON_VOCAB_SIZE
    num_plain_specs: int = 1
    no_reconstruction: bool = False
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 4
    attack: str = "inversion"
    eta_sweep: tuple[float, ...] = ()
    skip_oov: bool = False
    attributes: int = 0
    attribute_index: int = 0
    precision: str = "f8"
    workers: int = 1
    export_representations: str = "none"
    attacker_hidden: int = 768
    attacker_epochs: int = 30
    attacker_learning_rate: float = 1e-3
    holdout_fraction: float = 0.2

    def digest(self) -> str:
        # Equal hashes must mean byte-identical artifacts: drop the
        # output directory (no bearing on results) and replace input
        # paths by digests of their contents (location-independent).
        payload = dataclasses.asdict(self)
        payload.pop("out")
        for name in ("embeddings", "corpus", "representations"):
            value = payload[name]
            if value is not None and Path(value).exists():
                payload[name] = hashlib.sha256(
                    Path(value).read_bytes()).hexdigest()
        return config_hash(payload)


_BOOL_FIELDS = {"no_reconstruction", "skip_oov"}


def parse_config_file(path: Path) -> dict[str, str]:
    """Flat "key = value" config; '#' starts a comment."""
    values = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(),
                                 start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _coerce(name: str, value: str):
    field_types = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    if name not in field_types:
        raise UsageError(f"unknown config key {name!r}")
    if name in _BOOL_FIELDS:
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise UsageError(f"{name}: expected a boolean, got {value!r}")
    if name == "eta_sweep":
        return tuple(float(v) for v in value.split(",") if v)
    try:
        if name in ("eta", "learning_rate", "attacker_learning_rate",
                    "holdout_fraction"):
            return float(value)
        if name in ("embeddings", "corpus", "out", "representations", "attack",
                    "precision", "export_representations"):
            return value
        return int(value)
    except ValueError:
        raise UsageError(f"{name}: cannot parse {value!r}") from None


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file {path} does not exist")
        for key, value in parse_config_file(path).items():
            setattr(cfg, key, _coerce(key, value))
    for field in dataclasses.fields(RunConfig):
        flag_value = getattr(args, field.name, None)
        if flag_value is not None:
            setattr(cfg, field.name, flag_value)
    _validate(cfg, command=args.command)
    return cfg


def _validate(cfg: RunConfig, command: str) -> None:
    if cfg.eta <= 0 or any(e <= 0 for e in cfg.eta_sweep):
        raise UsageError("eta must be positive")
    if cfg.precision not in ("f8", "f4"):
        raise UsageError("precision must be f8 or f4")
    if cfg.attack not in ("inversion", "attribute", "both"):
        raise UsageError("attack must be inversion, attribute, or both")
    if cfg.export_representations not in ("none", "embeddings", "activations"):
        raise UsageError("export_representations must be none, embeddings, "
                         "or activations")
    positives = ("plain_token_length", "prompt_length", "recon_hidden",
                 "recon_vocab", "num_plain_specs", "batch_size", "epochs",
                 "workers", "attacker_hidden", "attacker_epochs")
    for name in positives:
        if getattr(cfg, name) < 1:
            raise UsageError(f"{name} must be >= 1")
    if cfg.learning_rate <= 0 or cfg.attacker_learning_rate <= 0:
        raise UsageError("learning rates must be positive")
    if not 0.0 < cfg.holdout_fraction < 1.0:
        raise UsageError("holdout_fraction must be in (0, 1)")
    needs = {"privatize": ("embeddings", "corpus", "out"),
             "train": ("embeddings", "corpus", "out"),
             "attack": ("out",),
             "report": ("out",)}
    for name in needs[command]:
        if getattr(cfg, name) is None:
            raise UsageError(f"--{name} is required for {command}")
    for name in ("embeddings", "corpus", "representations"):
        value = getattr(cfg, name)
        if value is not None and not Path(value).exists():
            raise UsageError(f"--{name} file {value} does not exist")


def _mechanism(cfg: RunConfig, eta: float | None = None) -> MechanismParams:
    try:
        return MechanismParams(eta=cfg.eta if eta is None else eta,
                               seed=cfg.seed)
    except ParameterError as exc:
        raise UsageError(str(exc)) from exc


def _stamp(cfg: RunConfig, payload: dict) -> dict:
    payload.update({"eta": cfg.eta, "seed": cfg.seed,
                    "config_hash": cfg.digest()})
    return payload


def _load_inputs(cfg: RunConfig):
    matrix = load_embeddings(cfg.embeddings)
    rows = read_corpus(cfg.corpus, n_attributes=cfg.attributes)
    examples = encode_rows(rows, matrix, skip_oov=cfg.skip_oov)
    return matrix, rows, examples


def cmd_privatize(cfg: RunConfig) -> int:
    matrix, rows, examples = _load_inputs(cfg)
    params = _mechanism(cfg)
    sequences = [ex.token_ids for ex in examples]
    privatized = privatize_corpus(sequences, matrix, params,
                                  precision=cfg.precision,
                                  workers=cfg.workers)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_rows = [CorpusRow(row.label, row.attributes,
                          tuple(matrix.vocab[t] for t in priv))
                for row, priv in zip(rows, privatized)]
    write_corpus(out_dir / "privatized.tsv", out_rows)
    n_tokens = sum(len(s) for s in sequences)
    n_replaced = sum(a != b for seq, priv in zip(sequences, privatized)
                     for a, b in zip(seq, priv))
    write_json(out_dir / "privatize_stats.json", _stamp(cfg, {
        "n_sequences": len(sequences),
        "n_tokens": n_tokens,
        "n_replaced": n_replaced,
        "replacement_probability": n_replaced / n_tokens,
    }))
    if cfg.export_representations == "embeddings":
        _export_embedding_representations(cfg, matrix, rows, privatized,
                                          out_dir)
    elif cfg.export_representations == "activations":
        raise UsageError("activation export requires a trained model; "
                         "use the train command")
    return EXIT_OK


def _export_embedding_representations(cfg, matrix, rows, privatized, out_dir):
    if cfg.attributes < 1:
        raise UsageError("representation export needs --attributes >= 1")
    reps = np.stack([embed_sequence(priv, matrix).mean(axis=0)
                     for priv in privatized])
    attrs = np.array([row.attributes for row in rows], dtype=np.int64)
    write_representations(out_dir / "representations.tsv", reps, attrs,
                          _stamp(cfg, {"kind": "embeddings"}))


def cmd_train(cfg: RunConfig) -> int:
    matrix, rows, examples = _load_inputs(cfg)
    params = _mechanism(cfg)
    n_classes = max(ex.label for ex in examples) + 1
    if n_classes < 2:
        raise UsageError("training needs at least two label classes")

    corpus_tokens = [row.tokens for row in rows]
    available = len({t for row in rows for t in row.tokens if t in matrix})
    recon_size = min(cfg.recon_vocab, available)
    if recon_size < cfg.recon_vocab:
        print(f"note: reconstruction vocabulary clamped to {recon_size} "
              f"(corpus has only {available} usable distinct tokens)",
              file=sys.stderr)
    vocab = build_recon_vocab(corpus_tokens, matrix, size=recon_size)
    if cfg.no_reconstruction:
        specs = None
    else:
        specs = [generate_plain_tokens(cfg.plain_token_length, vocab,
                                       cfg.seed, spec_index=i)
                 for i in range(cfg.num_plain_specs)]
    dataset = prepare_dataset(examples, specs, matrix, params)

    model = PromptModel.build(matrix, recon_size=len(vocab),
                              n_classes=n_classes,
                              prompt_length=cfg.prompt_length,
                              recon_hidden=cfg.recon_hidden, seed=cfg.seed)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "run_config.json",
               _stamp(cfg, {"config": dataclasses.asdict(cfg),
                            "n_classes": n_classes,
                            "recon_vocab_effective": len(vocab),
                            "params_count": param_count(model)}))
    metrics_path = out_dir / "metrics.jsonl"
    train_cfg = TrainConfig(learning_rate=cfg.learning_rate,
                            batch_size=cfg.batch_size, epochs=cfg.epochs,
                            seed=cfg.seed)
    with metrics_path.open("w", encoding="utf-8", newline="\n") as fh:
        try:
            train(model, dataset, train_cfg,
                  on_epoch=lambda s: _append_jsonl(fh, s.to_dict()))
        except NumericError:
            fh.flush()  # keep the epochs that did complete
            raise
    save_checkpoint(model, out_dir / "checkpoint.ptx",
                    extra_meta=_stamp(cfg, {}))
    if cfg.export_representations == "activations":
        _export_activation_representations(cfg, model, rows, dataset, out_dir)
    elif cfg.export_representations == "embeddings":
        privatized = [ex.token_ids[ex.plain_count:] for ex in dataset]
        _export_embedding_representations(cfg, matrix, rows, privatized,
                                          out_dir)
    return EXIT_OK


def _append_jsonl(fh, record: dict) -> None:
    fh.write(canonical_json(record) + "\n")
    fh.flush()


def _export_activation_representations(cfg, model, rows, dataset, out_dir):
    if cfg.attributes < 1:
        raise UsageError("representation export needs --attributes >= 1")
    reps = np.stack([
        forward_tokens(model, ex.token_ids, ex.plain_count)
        .activations.mean(axis=0)
        for ex in dataset])
    attrs = np.array([row.attributes for row in rows], dtype=np.int64)
    write_representations(out_dir / "representations.tsv", reps, attrs,
                          _stamp(cfg, {"kind": "activations"}))


def cmd_attack(cfg: RunConfig) -> int:
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.attack in ("inversion", "both"):
        if cfg.embeddings is None or cfg.corpus is None:
            raise UsageError("inversion attack needs --embeddings and --corpus")
        _run_inversion(cfg, out_dir)
    if cfg.attack in ("attribute", "both"):
        if cfg.representations is None:
            raise UsageError("attribute attack needs --representations "
                             "(export one with privatize/train)")
        _run_attribute(cfg, out_dir)
    return EXIT_OK


def _run_inversion(cfg: RunConfig, out_dir: Path) -> None:
    matrix, _, examples = _load_inputs(cfg)
    sequences = [ex.token_ids for ex in examples]
    etas = cfg.eta_sweep or (cfg.eta,)
    for eta in etas:
        params = _mechanism(cfg, eta)
        privatized = privatize_corpus(sequences, matrix, params,
                                      precision=cfg.precision,
                                      workers=cfg.workers)
        flat_priv = [t for seq in privatized for t in seq]
        flat_orig = [t for seq in sequences for t in seq]
        report = inversion_attack(embed_sequence(flat_priv, matrix),
                                  flat_orig, matrix, eta=eta, seed=cfg.seed)
        payload = report.to_dict()
        payload["config_hash"] = cfg.digest()
        write_json(out_dir / f"attack_inversion_eta{eta:g}.json", payload)


def _run_attribute(cfg: RunConfig, out_dir: Path) -> None:
    reps, attrs, meta = read_representations(cfg.representations)
    if not 0 <= cfg.attribute_index < attrs.shape[1]:
        raise UsageError(f"attribute_index {cfg.attribute_index} out of range "
                         f"for {attrs.shape[1]} attribute columns")
    labels = attrs[:, cfg.attribute_index]
    train_idx, test_idx = split_indices(len(labels), cfg.holdout_fraction,
                                        cfg.seed)
    attacker = train_attribute_attacker(
        reps[train_idx], labels[train_idx],
        AttackTrainConfig(hidden=cfg.attacker_hidden,
                          learning_rate=cfg.attacker_learning_rate,
                          epochs=cfg.attacker_epochs, seed=cfg.seed))
    report = attribute_attack_eval(
        attacker, reps[test_idx], labels[test_idx],
        eta=meta.get("eta"), seed=cfg.seed,
        representation=meta.get("kind"))
    payload = report.to_dict()
    payload["config_hash"] = cfg.digest()
    payload["attribute_index"] = cfg.attribute_index
    write_json(out_dir / "attack_attribute.json", payload)


def cmd_report(cfg: RunConfig) -> int:
    run_dir = Path(cfg.out)
    summary = {"eta": None, "seed": None, "config_hash": None,
               "replacement_probability": None, "task_accuracy": None,
               "empirical_privacy_inversion": None,
               "empirical_privacy_attribute": None, "params_count": None}
    missing = []

    stats_path = run_dir / "privatize_stats.json"
    if stats_path.exists():
        stats = read_json(stats_path)
        summary["replacement_probability"] = stats["replacement_probability"]
        for key in ("eta", "seed", "config_hash"):
            summary[key] = stats[key]
    else:
        missing.append(stats_path.name)

    metrics_path = run_dir / "metrics.jsonl"
    if metrics_path.exists():
        lines = [line for line in
                 metrics_path.read_text(encoding="utf-8").splitlines() if line]
        if lines:
            summary["task_accuracy"] = json.loads(lines[-1])["task_acc"]
    else:
        missing.append(metrics_path.name)

    config_path = run_dir / "run_config.json"
    if config_path.exists():
        run_config = read_json(config_path)
        for key in ("eta", "seed", "config_hash"):
            if summary[key] is None:
                summary[key] = run_config[key]

    checkpoint_path = run_dir / "checkpoint.ptx"
    if checkpoint_path.exists():
        summary["params_count"] = param_count(load_checkpoint(checkpoint_path))
    else:
        missing.append(checkpoint_path.name)

    inversions = sorted(run_dir.glob("attack_inversion_eta*.json"))
    if inversions:
        reports = [read_json(p) for p in inversions]
        chosen = next((r for r in reports if r["eta"] == summary["eta"]),
                      reports[0])
        summary["empirical_privacy_inversion"] = chosen["empirical_privacy"]
        if summary["eta"] is None:
            summary["eta"] = chosen["eta"]
    else:
        missing.append("attack_inversion_eta*.json")

    attribute_path = run_dir / "attack_attribute.json"
    if attribute_path.exists():
        summary["empirical_privacy_attribute"] = (
            read_json(attribute_path)["empirical_privacy"])
    else:
        missing.append(attribute_path.name)

    summary["missing"] = missing
    write_json(run_dir / "report.json", summary)
    print(canonical_json(summary))
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="privtext",
                     description="Privatize text locally, tune a model on "
                                 "the privatized data, and measure attacks.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("privatize", "write a privatized copy of a corpus plus stats"),
            ("train", "privatize-then-train; writes checkpoint and metrics"),
            ("attack", "run simulated attacks and write reports"),
            ("report", "consolidate a run directory into one summary")):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", help="flat key=value config file")
        cmd.add_argument("--embeddings", help="plain-text word vector file")
        cmd.add_argument("--corpus", help="TSV corpus: label TAB text")
        cmd.add_argument("--out", help="output (run) directory")
        cmd.add_argument("--eta", type=float, help="privacy parameter")
        cmd.add_argument("--seed", type=int, help="master seed")
        cmd.add_argument("--skip-oov", action="store_const", const=True,
                         dest="skip_oov", help="drop out-of-vocabulary tokens")
        cmd.add_argument("--attributes", type=int,
                         help="number of attribute columns in the corpus")
        cmd.add_argument("--precision", choices=("f8", "f4"))
        cmd.add_argument("--workers", type=int)
        if name in ("privatize", "train"):
            cmd.add_argument("--export-representations",
                             choices=("none", "embeddings", "activations"),
                             dest="export_representations")
        if name == "train":
            cmd.add_argument("--plain-token-length", type=int,
                             dest="plain_token_length")
            cmd.add_argument("--prompt-length", type=int, dest="prompt_length")
            cmd.add_argument("--recon-hidden", type=int, dest="recon_hidden")
            cmd.add_argument("--recon-vocab", type=int, dest="recon_vocab")
            cmd.add_argument("--num-plain-specs", type=int,
                             dest="num_plain_specs")
            cmd.add_argument("--no-reconstruction", action="store_const",
                             const=True, dest="no_reconstruction",
                             help="train the task head only (no plain tokens)")
            cmd.add_argument("--learning-rate", type=float,
                             dest="learning_rate")
            cmd.add_argument("--batch-size", type=int, dest="batch_size")
            cmd.add_argument("--epochs", type=int)
        if name == "attack":
            cmd.add_argument("--attack", choices=("inversion", "attribute",
                                                  "both"))
            cmd.add_argument("--eta-sweep", dest="eta_sweep",
                             type=lambda s: tuple(float(v) for v in
                                                  s.split(",") if v),
                             help="comma-separated eta list, one report each")
            cmd.add_argument("--representations",
                             help="representation export to attack")
            cmd.add_argument("--attribute-index", type=int,
                             dest="attribute_index")
            cmd.add_argument("--attacker-hidden", type=int,
                             dest="attacker_hidden")
            cmd.add_argument("--attacker-epochs", type=int,
                             dest="attacker_epochs")
            cmd.add_argument("--holdout-fraction", type=float,
                             dest="holdout_fraction")
    return parser


COMMANDS = {"privatize": cmd_privatize, "train": cmd_train,
            "attack": cmd_attack, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, ParameterError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
