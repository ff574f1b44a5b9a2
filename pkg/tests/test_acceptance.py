"""Acceptance suite: one test per criterion, each reported as a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py``; the summary section
"acceptance criteria" lists the verdicts.
"""

import json
import re
import time

import numpy as np
import pytest

from dsnt import autodiff as ad
from dsnt import cli
from dsnt.corpus import Document, load_corpus
from dsnt.evaluation import compute_metrics
from dsnt.ensemble import ensemble_predict, metric_value, tune_threshold
from dsnt.fixtures import data_path, synthetic_corpus
from dsnt.nnet import Model, ModelConfig, TrainConfig, build_vocab, train, tree_lstm
from dsnt.nnet.training import evaluate_accuracy
from dsnt.parser import ParserConfig, oracle_accuracy, oracle_actions, parse, replay, train_parser
from dsnt.rstdep import ROOT, DependencyTree, to_dependency, validate
from dsnt.treegen import (
    SpanScore, aggregate, brute_force_best_tree, build_tree_cky, catalan, format_tree, height,
    parse_tree, random_tree, read_treebank, root_divergence, split_points,
)

from conftest import random_scores, silver_trees
from test_autodiff import cases, projected
from test_nnet import tree_params

criterion = pytest.mark.criterion


@criterion(1, "span aggregation: hand values to 1e-12, closed ranges on 1e5 inputs, < 1 s")
def test_c01_aggregation():
    start = time.perf_counter()
    hand = [
        ((1.0, 0.5), (-1.0, 0.5), (0.0, 0.5)),
        ((0.8, 1.0), (0.8, 0.2), (0.8, 0.6)),
        ((0.5, 0.8), (-0.2, 0.4), (0.32 / 1.2, 0.6)),
        ((0.3, 0.0), (-0.7, 0.0), (-0.2, 0.0)),
    ]
    for left, right, (p, a) in hand:
        got = aggregate(SpanScore(*left), SpanScore(*right))
        assert abs(got.p - p) <= 1e-12 and abs(got.a - a) <= 1e-12
    rng = np.random.default_rng(0)
    P = rng.uniform(-1, 1, (100_000, 2))
    A = rng.uniform(0, 1, (100_000, 2))
    A[::1000] = 0.0
    for k in range(100_000):
        p, a = aggregate(SpanScore(P[k, 0], A[k, 0]), SpanScore(P[k, 1], A[k, 1]))
        assert -1.0 <= p <= 1.0 and 0.0 <= a <= 1.0
    assert time.perf_counter() - start < 1.0


@criterion(2, "beam CKY with B = Catalan(n-1) equals brute force, n <= 8 x 200, < 30 s")
def test_c02_cky_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    for n in range(1, 9):
        for _ in range(200):
            scores = random_scores(rng, n)
            gold = float(rng.choice([-1.0, -0.5, 0.0, 0.5, 1.0]))
            got = build_tree_cky(scores, gold, beam_width=catalan(n - 1))
            want = brute_force_best_tree(scores, gold)
            assert root_divergence(got, scores, gold) == root_divergence(want, scores, gold)
            assert format_tree(got) == format_tree(want)
            assert (height(got), split_points(got)) == (height(want), split_points(want))
    assert time.perf_counter() - start < 30.0


@criterion(3, "root divergence non-increasing in B in {1,2,4,8,16}, 100 instances at n=10")
def test_c03_beam_monotonicity():
    rng = np.random.default_rng(3)
    widths = (1, 2, 4, 8, 16)
    violations = []
    for inst in range(100):
        scores = random_scores(rng, 10)
        gold = float(rng.choice([-1.0, -0.5, 0.0, 0.5, 1.0]))
        divs = [root_divergence(build_tree_cky(scores, gold, b), scores, gold) for b in widths]
        for (b0, d0), (b1, d1) in zip(zip(widths, divs), zip(widths[1:], divs[1:])):
            if d1 > d0 + 1e-12:
                violations.append((inst, b0, b1, d0, d1))
    assert not violations, f"{len(violations)} increase(s), first {violations[0]}"


@criterion(4, "dependency conversion valid on 1000 random trees; three hand examples exact")
def test_c04_dependency_conversion():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        dep = to_dependency(random_tree(n, rng))
        assert dep.n == n and validate(dep) == []
        assert sum(h != ROOT for h in dep.head) == n - 1
    assert to_dependency(parse_tree("0")).head == (ROOT,)
    assert to_dependency(parse_tree("(0 1 NS)")).head == (ROOT, 0)
    assert to_dependency(parse_tree("(0 1 SN)")).head == (1, ROOT)
    assert to_dependency(parse_tree("((0 1 NS) 2 SN)")).head == (2, 0, ROOT)


@criterion(5, "every primitive grad-checks < 1e-6; full DAH loss < 1e-4; < 60 s")
def test_c05_gradient_checks():
    start = time.perf_counter()
    worst = {}
    for name, (fn, params) in cases().items():
        worst[name] = ad.grad_check(projected(fn), params, max_coords=None)
    z = ad.parameter(np.random.default_rng(5).normal(size=5))
    worst["cross_entropy"] = max(ad.grad_check(lambda: ad.cross_entropy(z, t), {"z": z}, max_coords=None)
                                 for t in range(5))
    bad = {k: v for k, v in worst.items() if not v < 1e-6}
    assert not bad, bad

    doc = Document("g", 2, (("good", "food"), ("slow", "service", "sadly"), ("ok",)))
    config = ModelConfig(kind="dah", embed_dim=4, word_hidden=3, edu_hidden=3, tree_hidden=6,
                         dropout=0.0, init_scale=0.5, min_count=1, seed=5)
    model = Model.create(config, build_vocab([doc]))
    params = model.tensors()
    tree = parse_tree("((0 1 NS) 2 SN)")
    err = ad.grad_check(lambda: model.loss(doc, params, tree), params, h=1e-5, max_coords=None,
                        floor=1e-6)
    assert err < 1e-4, err
    assert time.perf_counter() - start < 60.0


def _relabel(x, head, perm):
    new_x = np.empty_like(x)
    new_head = [ROOT] * len(head)
    for i, h in enumerate(head):
        new_x[perm[i]] = x[i]
        new_head[perm[i]] = ROOT if h == ROOT else perm[h]
    return new_x, DependencyTree(tuple(new_head))


@criterion(6, "TreeLSTM: dependent-permutation invariance to 1e-12; topology sensitivity > 1e-6")
def test_c06_treelstm_properties():
    rng = np.random.default_rng(6)
    params = tree_params(8, 6, seed=6)
    head = (ROOT, 0, 0, 0, 0, 2, 2, 2, 4, 4)
    x = rng.normal(size=(10, 8))
    ref = tree_lstm(ad.Tensor(x), DependencyTree(head), params).data
    for _ in range(25):
        px, pdep = _relabel(x, head, rng.permutation(10))
        assert np.max(np.abs(tree_lstm(ad.Tensor(px), pdep, params).data - ref)) <= 1e-12
    x3 = ad.Tensor(rng.normal(size=(3, 8)))
    flat = tree_lstm(x3, to_dependency(parse_tree("((0 1 NS) 2 NS)")), params).data
    chain = tree_lstm(x3, to_dependency(parse_tree("(0 (1 2 NS) NS)")), params).data
    assert np.linalg.norm(flat - chain) > 1e-6


@criterion(7, "parser: oracle replay on 1000 trees; 50-tree toy >= 99% action acc, >= 90% exact, < 2 min")
def test_c07_parser():
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    for _ in range(1000):
        n = int(rng.integers(1, 30))
        t = random_tree(n, rng)
        assert replay(oracle_actions(t), n) == t
    docs = synthetic_corpus(50, seed=3)
    scores, trees = silver_trees(docs)
    by_id = {d.id: d for d in docs}
    model = train_parser(trees, by_id, scores, ParserConfig(epochs=30, seed=0))
    acc = oracle_accuracy(model, trees, by_id, scores)
    exact = np.mean([parse(model, by_id[i], scores[i]) == t for i, t in trees.items()])
    assert acc >= 0.99, acc
    assert exact >= 0.90, exact
    assert time.perf_counter() - start < 120.0


@pytest.mark.slow
@criterion(8, "HAN and DAH reach 100% training accuracy on a 32-doc fixture within 200 epochs, < 5 min")
def test_c08_overfit():
    start = time.perf_counter()
    docs = synthetic_corpus(32, seed=1)
    _, trees = silver_trees(docs)
    for kind in ("han", "dah"):
        model = train(ModelConfig(kind=kind, dropout=0.0, seed=0), docs, docs, trees,
                      TrainConfig(epochs=200, batch_size=8, optimizer="adam", lr=0.01, patience=None, seed=0))
        assert evaluate_accuracy(model, docs, trees) == 1.0, (kind, model.history[-1])
        assert len(model.history) - 1 <= 200
    assert time.perf_counter() - start < 300.0


@criterion(9, "metrics match three hand fixtures to 1e-12; MAE <= sqrt(MSE) on 1e4 random sets")
def test_c09_metrics():
    fixtures = [
        (([1, 2, 3], [1, 2, 3]), (1.0, 1.0, 0.0, 0.0)),
        (([5, 1], [1, 5]), (0.0, 0.0, 16.0, 4.0)),
        (([1, 1, 2], [1, 2, 2]), (2 / 3, 2 / 3, 1 / 3, 1 / 3)),
    ]
    for (preds, golds), expect in fixtures:
        m = compute_metrics(preds, golds)
        assert np.allclose((m.accuracy, m.f1, m.mse, m.mae), expect, rtol=0, atol=1e-12)
    rng = np.random.default_rng(9)
    for _ in range(10_000):
        n = int(rng.integers(1, 40))
        m = compute_metrics(rng.integers(1, 6, n), rng.integers(1, 6, n))
        assert m.mae <= np.sqrt(m.mse) + 1e-12


@criterion(10, "constructed dev set: tuned threshold = 100, ensemble dev accuracy 1.0 > both models")
def test_c10_ensemble():
    rng = np.random.default_rng(10)
    lengths = np.concatenate([[100, 101], rng.integers(1, 400, 298)])
    golds = rng.integers(1, 6, lengths.size)
    wrong = golds % 5 + 1
    a = np.where(lengths <= 100, golds, wrong)
    b = np.where(lengths > 100, golds, wrong)
    rule = tune_threshold([a, a, a], [b, b, b], golds, lengths, "acc")
    assert rule.threshold == 100
    combined = [ensemble_predict(rule, n, x, y) for n, x, y in zip(lengths, a, b)]
    acc = metric_value(combined, golds, "acc")
    assert acc == 1.0 > max(metric_value(a, golds, "acc"), metric_value(b, golds, "acc"))


@pytest.mark.slow
@criterion(11, "pipeline on the 64-doc fixture: treebank, parser, DAH checkpoint, metrics and bins, < 5 min")
def test_c11_pipeline(tmp_path, capsys):
    start = time.perf_counter()
    out = tmp_path / "run"
    config = tmp_path / "exp.json"
    config.write_text(json.dumps({"corpus": str(data_path("fixture64.jsonl")), "seed": 11, "out": str(out)}))
    assert cli.main(["pipeline", "--config", str(config)]) == 0
    elapsed = time.perf_counter() - start
    printed = capsys.readouterr().out.splitlines()
    splits = load_corpus(data_path("fixture64.jsonl"), seed=11)
    assert set(read_treebank(out / "silver.trees")) == {d.id for d in splits.train}
    assert (out / "parser.ckpt").exists() and (out / "model-dah.ckpt").exists()
    summary = json.loads((out / "metrics-dah-test.json").read_text())
    for key in ("acc", "f1", "mse", "mae"):
        assert isinstance(summary[key], float) and np.isfinite(summary[key])
    assert summary["support"] == len(splits.test)
    labels = [line.split("\t")[0] for line in printed[1:]]
    assert labels and all(re.fullmatch(r"\d+-\d+ \(\d+\)", lab) for lab in labels)
    assert sum(int(re.search(r"\((\d+)\)", lab).group(1)) for lab in labels) == len(splits.test)
    assert (out / "bins-dah-test.csv").read_text().startswith("bin_lo,bin_hi,support,acc,f1,mse,mae")
    assert elapsed < 300.0, elapsed


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
