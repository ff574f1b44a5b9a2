import json
import os
import re
import sys

import pytest

from dsnt import cli
from dsnt.corpus import load_corpus
from dsnt.fixtures import data_path
from dsnt.treegen import read_treebank

FIXTURE = str(data_path("fixture64.jsonl"))
FAST = {
    "corpus": FIXTURE, "seed": 3, "mil_epochs": 2, "mil_embed_dim": 8, "mil_hidden": 8,
    "parser_epochs": 5, "epochs": 2, "batch": 16, "embed_dim": 8, "word_hidden": 4,
    "edu_hidden": 4, "tree_hidden": 8,
}


def make_config(tmp_path, name="exp.json", **overrides):
    cfg = {**FAST, "out": str(tmp_path / "out"), **overrides}
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path), tmp_path / "out"


def run(*args):
    return cli.main([str(a) for a in args])


STAGES = ["score", "build-treebank", "train-parser", "parse", "train", "predict", "evaluate", "report-bins"]


def snapshot(out):
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())}


def test_pipeline_equals_manual_stages(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    cfg_a, out_a = make_config(tmp_path / "a")
    cfg_b, out_b = make_config(tmp_path / "b")
    assert run("pipeline", "--config", cfg_a) == 0
    for stage in STAGES:
        assert run(stage, "--config", cfg_b, "--model", "dah") == 0, stage
    a, b = snapshot(out_a), snapshot(out_b)
    assert a.keys() == b.keys()
    assert a == b
    for name in ("silver.trees", "parser.ckpt", "model-dah.ckpt", "metrics-dah-test.json", "bins-dah-test.csv"):
        assert name in a


def test_rerun_is_byte_identical(tmp_path):
    cfg, out = make_config(tmp_path)
    assert run("pipeline", "--config", cfg) == 0
    first = snapshot(out)
    assert run("pipeline", "--config", cfg) == 0
    assert snapshot(out) == first


def test_threads_do_not_change_outputs(tmp_path, monkeypatch):
    cfg, out = make_config(tmp_path)
    for stage in ("score", "build-treebank", "train-parser", "parse"):
        assert run(stage, "--config", cfg) == 0
    single = snapshot(out)
    monkeypatch.setenv("DSNT_THREADS", "4")
    for stage in ("score", "build-treebank", "train-parser", "parse"):
        assert run(stage, "--config", cfg) == 0
    assert snapshot(out) == single


def test_treebank_uses_train_split_only(tmp_path):
    cfg, out = make_config(tmp_path)
    for stage in ("score", "build-treebank"):
        assert run(stage, "--config", cfg) == 0
    splits = load_corpus(FIXTURE, seed=3)
    assert set(read_treebank(out / "silver.trees")) == {d.id for d in splits.train}
    assert len(read_treebank(out / "silver.trees")) < 64


def test_evaluate_id_mismatch(tmp_path, capsys):
    cfg, out = make_config(tmp_path)
    out.mkdir()
    (out / "preds-dah-test.jsonl").write_text(json.dumps(
        {"id": "stranger", "probs": [0.2] * 5, "pred": 3, "len": 4}) + "\n")
    assert run("evaluate", "--config", cfg) != 0
    assert "stranger" in capsys.readouterr().err


def test_evaluate_missing_prediction(tmp_path, capsys):
    cfg, out = make_config(tmp_path)
    out.mkdir()
    test_ids = [d.id for d in load_corpus(FIXTURE, seed=3).test]
    lines = [json.dumps({"id": i, "probs": [0.2] * 5, "pred": 3, "len": 4}) for i in test_ids[1:]]
    (out / "preds-dah-test.jsonl").write_text("\n".join(lines) + "\n")
    assert run("evaluate", "--config", cfg) != 0
    assert test_ids[0] in capsys.readouterr().err


def test_han_never_reads_treebank(tmp_path):
    cfg, out = make_config(tmp_path)
    for stage in ("score", "build-treebank", "train-parser", "parse"):
        assert run(stage, "--config", cfg) == 0
    opened = []
    active = [True]

    def hook(event, args):
        # audit hooks cannot be removed, so this one is switched off via ``active``
        if active[0] and event == "open" and isinstance(args[0], (str, bytes, os.PathLike)):
            opened.append(os.fsdecode(args[0]))
    sys.addaudithook(hook)
    try:
        assert run("train", "--config", cfg, "--model", "han") == 0
        assert run("predict", "--config", cfg, "--model", "han") == 0
    finally:
        active[0] = False
    assert not [p for p in opened if p.endswith(".trees")]
    assert any(p.endswith("fixture64.jsonl") for p in opened)
    active[0] = True
    opened.clear()
    try:
        assert run("train", "--config", cfg, "--model", "dah") == 0
    finally:
        active[0] = False
    assert any(p.endswith("parsed.trees") for p in opened)


def test_tune_ensemble(tmp_path, capsys):
    cfg, out = make_config(tmp_path)
    for stage in ("score", "build-treebank", "train-parser", "parse"):
        assert run(stage, "--config", cfg) == 0
    for model in ("han", "dah"):
        assert run("train", "--config", cfg, "--model", model) == 0
        for split in ("dev", "test"):
            assert run("predict", "--config", cfg, "--model", model, "--split", split) == 0
    assert run("tune-ensemble", "--config", cfg, "--metric", "mae") == 0
    rule = json.loads((out / "ensemble-mae.json").read_text())
    assert rule["metric"] == "mae" and rule["short"] == "han" and rule["threshold"] >= 0
    assert (out / "preds-ensemble-mae-test.jsonl").exists()
    assert run("evaluate", "--config", cfg, "--preds", out / "preds-ensemble-mae-test.jsonl") == 0


def test_seed_is_mandatory(tmp_path, capsys):
    cfg, _ = make_config(tmp_path, seed=None)
    assert run("score", "--config", cfg) != 0
    assert "seed" in capsys.readouterr().err
    assert run("score", "--config", cfg, "--seed", "1") == 0


def test_flags_override_config(tmp_path):
    cfg, _ = make_config(tmp_path)
    args = cli.build_parser().parse_args(["train", "--config", cfg, "--model", "han", "--beam", "3",
                                          "--temperature", "0.5", "--bins", "4", "--seed", "9"])
    conf = cli.resolve_config(args)
    assert (conf.model, conf.beam, conf.temperature, conf.bins, conf.seed) == ("han", 3, 0.5, 4, 9)
    assert conf.lr == 0.01 and conf.optimizer == "sgd" and conf.dropout == 0.5


def test_unknown_config_key(tmp_path, capsys):
    cfg, _ = make_config(tmp_path, learning_rate=3)
    assert run("score", "--config", cfg) != 0
    assert "learning_rate" in capsys.readouterr().err


def test_missing_input_named(tmp_path, capsys):
    cfg, out = make_config(tmp_path)
    assert run("build-treebank", "--config", cfg) != 0
    assert "scores.jsonl" in capsys.readouterr().err


def test_pipeline_failure_names_stage(tmp_path, capsys):
    cfg, _ = make_config(tmp_path, scorer="lexicon", lexicon=str(tmp_path / "nope.tsv"))
    assert run("pipeline", "--config", cfg) != 0
    err = capsys.readouterr().err
    assert "stage 'score'" in err and "nope.tsv" in err


def test_lexicon_scorer_and_bins(tmp_path, capsys):
    cfg, out = make_config(tmp_path, scorer="lexicon", lexicon=str(data_path("lexicon.tsv")), bins=3)
    assert run("pipeline", "--config", cfg) == 0
    captured = capsys.readouterr().out
    summary = json.loads(captured.splitlines()[0])
    assert set(summary) >= {"acc", "f1", "mse", "mae"}
    labels = [line.split("\t")[0] for line in captured.splitlines()[1:]]
    assert len(labels) == 3
    assert all(re.fullmatch(r"\d+-\d+ \(\d+\)", lab) for lab in labels)
