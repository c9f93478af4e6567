import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from kgconv.cli import main
from kgconv.synthetic import write_inputs


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """Raw synthetic inputs + a prepared workdir + tiny trained checkpoints."""
    root = tmp_path_factory.mktemp("pipeline")
    data = root / "data"
    write_inputs(data, n_train=12, n_valid=8, n_test=8, conv_len=6)
    work = root / "work"
    base = [
        "--workdir", str(work),
        "--data.conversations", str(data),
        "--data.triplets", str(data / "triplets.tsv"),
        "--data.pos_lexicon", str(data / "pos_lexicon.tsv"),
        "--data.stopwords", str(data / "stopwords.txt"),
        "--data.keyword_min_count", "1",
    ]
    tiny = ["--model.d1", "8", "--model.d2", "8", "--model.d", "8",
            "--train.epochs", "2", "--train.batch_size", "16",
            "--train.lr", "0.003"]
    assert main(["prepare", *base]) == 0
    assert main(["train-predictor", *base, *tiny]) == 0
    assert main(["train-matcher", *base, *tiny]) == 0
    return data, work, base, tiny


class TestPrepare:
    def test_artifacts_written(self, pipeline_dir):
        _, work, _, _ = pipeline_dir
        for name in ("vocab.txt", "keyword_vocab.tsv", "stats.json", "graph.tsv",
                     "pool.jsonl", "train.conv.jsonl", "prepare.stats.json"):
            assert (work / name).exists(), name
        stats = json.loads((work / "prepare.stats.json").read_text())
        assert stats["train_conversations"] == 12
        # words absent from the tiny corpus filter their triplets out
        assert 10 <= stats["graph_nodes"] <= 30

    def test_manifest_written_with_hashes(self, pipeline_dir):
        data, work, _, _ = pipeline_dir
        manifest = json.loads((work / "manifests/prepare.json").read_text())
        assert manifest["command"] == "prepare"
        assert str(data / "train.jsonl") in manifest["input_hashes"]
        assert all(len(h) == 64 for h in manifest["input_hashes"].values())

    def test_missing_artifact_message_names_file(self, tmp_path, capsys):
        rc = main(["eval-predictor", "--workdir", str(tmp_path)])
        assert rc == 1
        err = capsys.readouterr().err
        assert "vocab.txt" in err


class TestEval:
    def test_eval_predictor_prints_metric_rows(self, pipeline_dir, capsys):
        _, work, base, tiny = pipeline_dir
        assert main(["eval-predictor", *base, *tiny, "--split", "test"]) == 0
        out = capsys.readouterr().out
        lines = [l for l in out.strip().splitlines() if "\t" in l]
        names = [l.split("\t")[0] for l in lines]
        assert names == ["R@1", "R@3", "R@5", "P@1"]
        for line in lines:
            name, value, n = line.split("\t")
            assert 0.0 <= float(value) <= 1.0 and int(n) > 0
        report = json.loads((work / "reports/predictor.test.json").read_text())
        assert "checkpoint_sha256" in report and "seed" in report

    def test_eval_matcher_prints_metric_rows(self, pipeline_dir, capsys):
        _, work, base, tiny = pipeline_dir
        assert main(["eval-matcher", *base, *tiny, "--split", "test"]) == 0
        out = capsys.readouterr().out
        names = [l.split("\t")[0] for l in out.strip().splitlines() if "\t" in l]
        assert names == ["R@1", "R@3", "R@5", "MRR"]


class TestSelfplay:
    def test_summary_columns(self, pipeline_dir, capsys):
        _, work, base, tiny = pipeline_dir
        assert main(["selfplay", *base, *tiny, "--sim.n", "3",
                     "--sim.max_agent_turns", "2", "--sim.pool_size", "30"]) == 0
        tsv = (work / "selfplay/summary.tsv").read_text().splitlines()
        assert tsv[0].split("\t") == ["Succ.", "#Turns", "n", "aborted"]
        transcripts = (work / "selfplay/transcripts.jsonl").read_text().splitlines()
        assert len(transcripts) == 3
        rec = json.loads(transcripts[0])
        assert {"target", "success", "transcript", "keyword_trace",
                "distance_trace"} <= set(rec)


class TestPredictRank:
    def test_predict_tsv(self, pipeline_dir, capsys, tmp_path):
        _, work, base, tiny = pipeline_dir
        # use a keyword that survived the tiny corpus so the mask is nonempty
        kw = (work / "keyword_vocab.tsv").read_text().splitlines()[0].split("\t")[0]
        ctx = tmp_path / "ctx.json"
        ctx.write_text(json.dumps({"utterances": [f"the {kw} feels brisk today"]}))
        assert main(["predict", *base, *tiny, "--input", str(ctx)]) == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert 1 <= len(out) <= 3
        for line in out:
            _, p = line.split("\t")
            assert 0.0 < float(p) <= 1.0

    def test_rank_tsv_sorted_by_s(self, pipeline_dir, capsys, tmp_path):
        _, work, base, tiny = pipeline_dir
        inp = tmp_path / "rank.json"
        inp.write_text(json.dumps({
            "context": ["the amber feels brisk today"],
            "candidates": ["the birch looks calm", "a cedar by the river",
                           "walk near the delta"],
        }))
        assert main(["rank", *base, *tiny, "--input", str(inp)]) == 0
        rows = [l.split("\t") for l in capsys.readouterr().out.strip().splitlines()]
        assert len(rows) == 3
        svals = [float(r[3]) for r in rows]
        assert svals == sorted(svals, reverse=True)
        for r in rows:
            assert float(r[3]) == pytest.approx(
                float(r[1]) + 0.01 * float(r[2]), abs=1e-9)


class TestConfigResolution:
    def test_env_override_beats_default_flag_beats_env(self, tmp_path, monkeypatch):
        from kgconv.cli import build_parser
        from kgconv.config import resolve_config
        parser = build_parser()
        monkeypatch.setenv("KGCONV_TRAIN_EPOCHS", "7")
        args = parser.parse_args(["prepare"])
        assert resolve_config(args).train.epochs == 7
        args = parser.parse_args(["prepare", "--train.epochs", "9"])
        assert resolve_config(args).train.epochs == 9

    def test_config_file_lowest_precedence(self, tmp_path, monkeypatch):
        from kgconv.cli import build_parser
        from kgconv.config import resolve_config
        cfg_file = tmp_path / "c.json"
        cfg_file.write_text(json.dumps({"train": {"epochs": 3, "lr": 0.5}}))
        parser = build_parser()
        args = parser.parse_args(["prepare", "--config", str(cfg_file)])
        cfg = resolve_config(args)
        assert cfg.train.epochs == 3 and cfg.train.lr == 0.5
        monkeypatch.setenv("KGCONV_TRAIN_EPOCHS", "4")
        cfg = resolve_config(parser.parse_args(["prepare", "--config", str(cfg_file)]))
        assert cfg.train.epochs == 4

    def test_unknown_flag_usage_error(self):
        proc = subprocess.run(
            [sys.executable, "-m", "kgconv.cli", "prepare", "--no-such-flag"],
            capture_output=True, text=True)
        assert proc.returncode == 2
        assert "usage" in proc.stderr.lower()


class TestReproducibility:
    def test_prepare_byte_identical_outputs(self, tmp_path):
        data = tmp_path / "data"
        write_inputs(data, n_train=6, n_valid=2, n_test=2, conv_len=5)
        outs = []
        for name in ("w1", "w2"):
            work = tmp_path / name
            assert main([
                "prepare", "--workdir", str(work),
                "--data.conversations", str(data),
                "--data.triplets", str(data / "triplets.tsv"),
                "--data.pos_lexicon", str(data / "pos_lexicon.tsv"),
                "--data.stopwords", str(data / "stopwords.txt"),
                "--data.keyword_min_count", "1",
            ]) == 0
            outs.append(b"".join(
                (work / f).read_bytes()
                for f in ("vocab.txt", "keyword_vocab.tsv", "graph.tsv",
                          "pool.jsonl", "train.conv.jsonl", "manifests/prepare.json")))
        assert outs[0] == outs[1]
