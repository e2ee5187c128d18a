import json
from pathlib import Path

import numpy as np
import pytest

from privtext.cli import (
    EXIT_DATA,
    EXIT_OK,
    EXIT_USAGE,
    RunConfig,
    main,
)
from privtext.model import load_checkpoint, param_count
from privtext.serialize import read_json


@pytest.fixture
def workspace(tmp_path):
    """A small embedding file plus task and attribute corpora."""
    rng = np.random.default_rng(42)
    n_tokens, dim = 40, 8
    tokens = [f"tok{i:02d}" for i in range(n_tokens)]
    lines = []
    for i, tok in enumerate(tokens):
        values = " ".join(repr(float(v)) for v in rng.standard_normal(dim))
        lines.append(f"{tok} {values}")
    emb = tmp_path / "vectors.txt"
    emb.write_text("\n".join(lines) + "\n", encoding="utf-8")

    corpus_lines = []
    attr_lines = []
    for i in range(24):
        label = i % 2
        toks = " ".join(tokens[(i * 3 + j) % n_tokens] for j in range(6))
        corpus_lines.append(f"{label}\t{toks}")
        attr_lines.append(f"{label}\t{i % 2}\t{toks}")
    corpus = tmp_path / "corpus.tsv"
    corpus.write_text("\n".join(corpus_lines) + "\n", encoding="utf-8")
    attr_corpus = tmp_path / "attr_corpus.tsv"
    attr_corpus.write_text("\n".join(attr_lines) + "\n", encoding="utf-8")
    return tmp_path, emb, corpus, attr_corpus


def run(args):
    return main([str(a) for a in args])


class TestPrivatize:
    def test_huge_eta_is_identity(self, workspace):
        root, emb, corpus, _ = workspace
        out = root / "run_id"
        assert run(["privatize", "--embeddings", emb, "--corpus", corpus,
                    "--eta", "1e9", "--seed", "1", "--out", out]) == EXIT_OK
        priv = (out / "privatized.tsv").read_text(encoding="utf-8")
        assert priv == corpus.read_text(encoding="utf-8")
        stats = read_json(out / "privatize_stats.json")
        assert stats["replacement_probability"] == 0.0

    def test_runs_are_byte_identical(self, workspace):
        root, emb, corpus, _ = workspace
        outs = []
        for name in ("a", "b"):
            out = root / name
            assert run(["privatize", "--embeddings", emb, "--corpus", corpus,
                        "--eta", "2.5", "--seed", "7", "--out", out]) == EXIT_OK
            outs.append(out)
        for fname in ("privatized.tsv", "privatize_stats.json"):
            assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()

    def test_stats_match_api_estimate(self, workspace):
        from privtext.embeddings import load_embeddings
        from privtext.mechanism import (MechanismParams,
                                        estimate_replacement_probability)
        from privtext.pipeline import encode_rows, read_corpus

        root, emb, corpus, _ = workspace
        out = root / "run_s"
        assert run(["privatize", "--embeddings", emb, "--corpus", corpus,
                    "--eta", "2.5", "--seed", "7", "--out", out]) == EXIT_OK
        stats = read_json(out / "privatize_stats.json")
        matrix = load_embeddings(emb)
        rows = encode_rows(read_corpus(corpus), matrix)
        est = estimate_replacement_probability(
            [r.token_ids for r in rows], matrix, MechanismParams(2.5, 7),
            trials=1)
        assert stats["replacement_probability"] == est

    def test_artifacts_embed_provenance(self, workspace):
        root, emb, corpus, _ = workspace
        out = root / "run_p"
        run(["privatize", "--embeddings", emb, "--corpus", corpus,
             "--eta", "3", "--seed", "9", "--out", out])
        stats = read_json(out / "privatize_stats.json")
        assert stats["eta"] == 3.0
        assert stats["seed"] == 9
        assert len(stats["config_hash"]) == 64

    def test_inputs_never_mutated(self, workspace):
        root, emb, corpus, _ = workspace
        before = (emb.read_bytes(), corpus.read_bytes())
        run(["privatize", "--embeddings", emb, "--corpus", corpus,
             "--eta", "1", "--seed", "0", "--out", root / "run_m"])
        assert (emb.read_bytes(), corpus.read_bytes()) == before

    def test_oov_token_is_a_data_error(self, workspace, tmp_path):
        root, emb, _, _ = workspace
        bad = tmp_path / "bad.tsv"
        bad.write_text("1\ttok01 marsupial\n", encoding="utf-8")
        code = run(["privatize", "--embeddings", emb, "--corpus", bad,
                    "--eta", "1", "--out", root / "run_o"])
        assert code == EXIT_DATA
        code = run(["privatize", "--embeddings", emb, "--corpus", bad,
                    "--eta", "1", "--out", root / "run_o2", "--skip-oov"])
        assert code == EXIT_OK


class TestTrain:
    def train_args(self, emb, corpus, out, extra=()):
        return ["train", "--embeddings", emb, "--corpus", corpus,
                "--eta", "1e9", "--seed", "3", "--out", out,
                "--recon-vocab", "20", "--plain-token-length", "5",
                "--prompt-length", "3", "--recon-hidden", "8",
                "--epochs", "2", "--batch-size", "8", *extra]

    def test_writes_checkpoint_and_metrics(self, workspace):
        root, emb, corpus, _ = workspace
        out = root / "train_a"
        assert run(self.train_args(emb, corpus, out)) == EXIT_OK
        assert (out / "checkpoint.ptx").exists()
        lines = (out / "metrics.jsonl").read_text(encoding="utf-8").splitlines()
        assert len(lines) == 2
        record = json.loads(lines[-1])
        assert set(record) == {"epoch", "task_loss", "rec_loss", "task_acc",
                               "rec_acc"}

    def test_deterministic_outputs(self, workspace):
        root, emb, corpus, _ = workspace
        outs = []
        for name in ("t1", "t2"):
            out = root / name
            assert run(self.train_args(emb, corpus, out)) == EXIT_OK
            outs.append(out)
        for fname in ("checkpoint.ptx", "metrics.jsonl"):
            assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()
        # run_config records everything including the out dir; all other
        # fields must agree
        a = read_json(outs[0] / "run_config.json")
        b = read_json(outs[1] / "run_config.json")
        a["config"].pop("out"), b["config"].pop("out")
        assert a == b

    def test_no_reconstruction_flag(self, workspace):
        root, emb, corpus, _ = workspace
        out = root / "train_nr"
        assert run(self.train_args(emb, corpus, out,
                                   ["--no-reconstruction"])) == EXIT_OK
        record = json.loads(
            (out / "metrics.jsonl").read_text(encoding="utf-8").splitlines()[-1])
        assert record["rec_acc"] is None
        assert record["rec_loss"] == 0.0

    def test_activation_export(self, workspace):
        root, emb, _, attr_corpus = workspace
        out = root / "train_x"
        args = self.train_args(emb, attr_corpus, out,
                               ["--attributes", "1",
                                "--export-representations", "activations"])
        assert run(args) == EXIT_OK
        assert (out / "representations.tsv").exists()


class TestAttack:
    def test_inversion_zero_noise_has_no_privacy(self, workspace):
        root, emb, corpus, _ = workspace
        out = root / "atk0"
        assert run(["attack", "--attack", "inversion", "--embeddings", emb,
                    "--corpus", corpus, "--eta", "1e9", "--seed", "5",
                    "--out", out]) == EXIT_OK
        report = read_json(out / "attack_inversion_eta1e+09.json")
        assert report["success_rate"] == 1.0
        assert report["empirical_privacy"] == 0.0
        assert report["eta"] == 1e9
        assert report["seed"] == 5

    def test_eta_sweep_writes_one_report_each(self, workspace):
        root, emb, corpus, _ = workspace
        out = root / "atk_sweep"
        assert run(["attack", "--attack", "inversion", "--embeddings", emb,
                    "--corpus", corpus, "--eta-sweep", "0.5,2,8",
                    "--seed", "5", "--out", out]) == EXIT_OK
        reports = sorted(out.glob("attack_inversion_eta*.json"))
        assert len(reports) == 3
        by_eta = {read_json(p)["eta"]: read_json(p)["empirical_privacy"]
                  for p in reports}
        assert by_eta[0.5] >= by_eta[8.0] - 0.02  # more noise, more privacy

    def test_attribute_attack_from_export(self, workspace):
        root, emb, _, attr_corpus = workspace
        priv_out = root / "nopriv"
        assert run(["privatize", "--embeddings", emb, "--corpus", attr_corpus,
                    "--eta", "4", "--seed", "2", "--out", priv_out,
                    "--attributes", "1",
                    "--export-representations", "embeddings"]) == EXIT_OK
        out = root / "atk_attr"
        assert run(["attack", "--attack", "attribute",
                    "--representations", priv_out / "representations.tsv",
                    "--seed", "2", "--attacker-hidden", "16",
                    "--attacker-epochs", "4", "--out", out]) == EXIT_OK
        report = read_json(out / "attack_attribute.json")
        assert report["kind"] == "attribute"
        assert report["representation"] == "embeddings"
        assert report["empirical_privacy"] == 1.0 - report["success_rate"]

    def test_attribute_attack_without_export_is_usage_error(self, workspace):
        root, _, _, _ = workspace
        code = run(["attack", "--attack", "attribute", "--out", root / "x"])
        assert code == EXIT_USAGE


class TestReport:
    def test_full_run_is_consolidated(self, workspace):
        root, emb, corpus, _ = workspace
        out = root / "full"
        run(["privatize", "--embeddings", emb, "--corpus", corpus,
             "--eta", "4", "--seed", "3", "--out", out])
        run(TestTrain().train_args(emb, corpus, out)[:1]
            + TestTrain().train_args(emb, corpus, out)[1:])
        run(["attack", "--attack", "inversion", "--embeddings", emb,
             "--corpus", corpus, "--eta", "4", "--seed", "3", "--out", out])
        assert run(["report", "--out", out]) == EXIT_OK
        summary = read_json(out / "report.json")
        assert summary["replacement_probability"] is not None
        assert summary["task_accuracy"] is not None
        assert summary["empirical_privacy_inversion"] is not None
        assert summary["params_count"] == param_count(
            load_checkpoint(out / "checkpoint.ptx"))
        assert "attack_attribute.json" in summary["missing"]

    def test_partial_run_reports_nulls(self, workspace, capsys):
        root, _, _, _ = workspace
        out = root / "empty_run"
        out.mkdir()
        assert run(["report", "--out", out]) == EXIT_OK
        summary = json.loads(capsys.readouterr().out)
        assert summary["empirical_privacy_inversion"] is None
        assert summary["task_accuracy"] is None
        assert len(summary["missing"]) >= 3


class TestConfigAndExitCodes:
    def test_missing_required_flag(self):
        assert run(["privatize", "--eta", "2"]) == EXIT_USAGE

    def test_nonpositive_eta(self, workspace):
        root, emb, corpus, _ = workspace
        assert run(["privatize", "--embeddings", emb, "--corpus", corpus,
                    "--eta", "0", "--out", root / "x"]) == EXIT_USAGE

    def test_nonexistent_input_file(self, workspace):
        root, emb, _, _ = workspace
        assert run(["privatize", "--embeddings", emb,
                    "--corpus", root / "ghost.tsv", "--eta", "1",
                    "--out", root / "x"]) == EXIT_USAGE

    def test_malformed_corpus_is_data_error(self, workspace, tmp_path):
        root, emb, _, _ = workspace
        bad = tmp_path / "bad.tsv"
        bad.write_text("not-an-int\tsome text\n", encoding="utf-8")
        assert run(["privatize", "--embeddings", emb, "--corpus", bad,
                    "--eta", "1", "--out", root / "x"]) == EXIT_DATA

    def test_unknown_subcommand(self):
        assert run(["frobnicate"]) == EXIT_USAGE

    def test_config_file_with_flag_override(self, workspace, tmp_path):
        root, emb, corpus, _ = workspace
        conf = tmp_path / "run.conf"
        conf.write_text(
            f"embeddings = {emb}\ncorpus = {corpus}\n"
            "eta = 1e9\nseed = 4  # master seed\n", encoding="utf-8")
        out = root / "conf_run"
        assert run(["privatize", "--config", conf, "--out", out,
                    "--seed", "11"]) == EXIT_OK
        stats = read_json(out / "privatize_stats.json")
        assert stats["eta"] == 1e9  # from file
        assert stats["seed"] == 11  # flag wins

    def test_bad_config_key_rejected(self, workspace, tmp_path):
        root, emb, corpus, _ = workspace
        conf = tmp_path / "run.conf"
        conf.write_text("etaa = 3\n", encoding="utf-8")
        assert run(["privatize", "--config", conf, "--embeddings", emb,
                    "--corpus", corpus, "--out", root / "x"]) == EXIT_USAGE

    def test_defaults_match_documented_values(self):
        cfg = RunConfig()
        assert cfg.plain_token_length == 40
        assert cfg.prompt_length == 10
        assert cfg.recon_hidden == 96
        assert cfg.recon_vocab == 7630
