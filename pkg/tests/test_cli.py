import json

import pytest

from mgcnet.cli import dispatch, load_checkpoint

SMALL = ["--d", "8", "--epochs", "2", "--batch", "64", "--init-std", "0.1"]


def run(*argv):
    return dispatch([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    assert run("synth", "--preset", "planted_rule", "--n", 300, "--seed", 7, "--out", root / "synth") == 0
    assert run("preprocess", "--input", root / "synth/sessions.jsonl", "--seed", 0, "--out", root / "data") == 0
    assert run("build-graph", "--data", root / "data", "--out", root / "graph") == 0
    assert run("train", "--data", root / "data", "--graph", root / "graph/graph.tsv", "--seed", 1,
               *SMALL, "--out", root / "train") == 0
    return root


def common(root):
    return ["--data", root / "data", "--graph", root / "graph/graph.tsv", "--checkpoint", root / "train/checkpoint.json"]


class TestSynth:
    def test_deterministic(self, tmp_path):
        for name in ("a", "b"):
            assert run("synth", "--preset", "planted_rule", "--n", 500, "--seed", 7, "--out", tmp_path / name) == 0
        assert (tmp_path / "a/sessions.jsonl").read_bytes() == (tmp_path / "b/sessions.jsonl").read_bytes()

    def test_seed_is_mandatory(self, tmp_path, capsys):
        assert run("synth", "--preset", "planted_rule", "--n", 5, "--out", tmp_path) == 2
        assert "--seed" in capsys.readouterr().err


class TestUsage:
    def test_unknown_subcommand(self, capsys):
        assert run("fit") == 2
        assert "usage" in capsys.readouterr().err

    def test_unknown_flag(self, tmp_path):
        assert run("synth", "--preset", "planted_rule", "--n", 5, "--seed", 1, "--bogus", 1, "--out", tmp_path) == 2

    def test_module_error_exits_one(self, tmp_path, capsys):
        assert run("preprocess", "--input", tmp_path / "missing.jsonl", "--out", tmp_path / "o") == 1
        assert "preprocess" in capsys.readouterr().err

    def test_unknown_config_key(self, pipeline, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("dropout = 0.5\n")
        assert run("train", "--data", pipeline / "data", "--graph", pipeline / "graph/graph.tsv", "--seed", 0,
                   "--config", cfg, "--out", tmp_path / "t") == 1


class TestPipeline:
    def test_artifacts(self, pipeline):
        for rel in ("data/items.tsv", "data/behaviors.tsv", "data/train.jsonl", "data/test.jsonl",
                    "graph/graph.tsv", "train/checkpoint.json", "train/train_log.jsonl", "train/log.txt"):
            assert (pipeline / rel).is_file(), rel
        log = [json.loads(x) for x in (pipeline / "train/train_log.jsonl").read_text().splitlines()]
        assert [e["epoch"] for e in log] == [1, 2]

    def test_config_echo(self, pipeline):
        echo = json.loads((pipeline / "train/config.json").read_text())
        assert echo["command"] == "train"
        assert echo["model_config"]["d"] == 8 and echo["model_config"]["seed"] == 1
        assert echo["model_config"]["batch_size"] == 64

    def test_paper_defaults_echo(self, pipeline, tmp_path):
        # zero epochs keeps this fast while exercising flag parsing and the echo
        argv = ["train", "--data", pipeline / "data", "--graph", pipeline / "graph/graph.tsv", "--seed", 0,
                "--gamma", 10, "--d", 128, "--batch", 512, "--epochs", 0, "--out", tmp_path]
        assert run(*argv) == 0
        cfg = json.loads((tmp_path / "config.json").read_text())["model_config"]
        assert (cfg["gamma"], cfg["d"], cfg["batch_size"]) == (10.0, 128, 512)

    def test_config_file_and_flag_precedence(self, pipeline, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("d = 16\nlr = 0.05\n")
        argv = ["train", "--data", pipeline / "data", "--graph", pipeline / "graph/graph.tsv", "--seed", 0,
                "--config", path, "--d", 4, "--epochs", 0, "--out", tmp_path / "t"]
        assert run(*argv) == 0
        cfg = json.loads((tmp_path / "t/config.json").read_text())["model_config"]
        assert cfg["d"] == 4 and cfg["lr"] == 0.05

    def test_eval_writes_reports(self, pipeline, tmp_path):
        assert run("eval", *common(pipeline), "--task", "task1", "--k", 20, "--out", tmp_path) == 0
        report = json.loads((tmp_path / "metrics.json").read_text())
        assert report["K"] == 20 and report["task"] == "task1"
        assert (tmp_path / "metrics.txt").is_file() and (tmp_path / "metrics.csv").is_file()

    def test_eval_is_reproducible(self, pipeline, tmp_path):
        for name in ("a", "b"):
            assert run("eval", *common(pipeline), "--out", tmp_path / name) == 0
        assert (tmp_path / "a/metrics.json").read_bytes() == (tmp_path / "b/metrics.json").read_bytes()

    def test_checkpoint_roundtrip(self, pipeline):
        params, meta = load_checkpoint(pipeline / "train/checkpoint.json")
        assert params["item_emb"].shape[1] == 8 and meta["behaviors"] == ["click", "purchase"]


class TestPredict:
    def session(self, tmp_path, pipeline):
        items = [line.split("\t")[1] for line in (pipeline / "data/items.tsv").read_text().splitlines()]
        path = tmp_path / "s.json"
        path.write_text(json.dumps([[items[0], "click"], [items[1], "click"], ["never-seen", "click"]]))
        return path

    def test_task2_prints_behavior_and_items(self, pipeline, tmp_path, capsys):
        path = self.session(tmp_path, pipeline)
        assert run("predict", *common(pipeline), "--input", path, "--k", 5, "--out", tmp_path / "o") == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0].startswith("next behavior: ")
        assert len(lines) == 6
        pred = json.loads((tmp_path / "o/prediction.json").read_text())
        assert len(pred["items"]) == 5 and pred["scores"] == sorted(pred["scores"], reverse=True)

    def test_task1_needs_next_behavior(self, pipeline, tmp_path):
        path = self.session(tmp_path, pipeline)
        assert run("predict", *common(pipeline), "--input", path, "--task", "task1") == 1
        assert run("predict", *common(pipeline), "--input", path, "--task", "task1", "--next-behavior", "purchase") == 0

    def test_no_known_items(self, pipeline, tmp_path):
        path = tmp_path / "s.json"
        path.write_text(json.dumps([["nope", "click"]]))
        assert run("predict", *common(pipeline), "--input", path) == 1
