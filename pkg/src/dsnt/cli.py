"""Command line entry point: ``dsnt <subcommand> --config exp.json [flags]``.

Every subcommand reads its inputs from and writes its artifacts to the
experiment output directory, so stages can be run one by one or chained
with ``pipeline``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

from . import corpus as corpus_mod
from .autodiff.checkpoint import atomic_write_bytes
from .edu_scorer import (
    MilConfig, load_scores, read_lexicon, save_scorer, save_scores, score_lexicon, score_mil,
    train_mil_lite,
)
from .ensemble import METRICS, ensemble_predict, load_rule, save_rule, tune_threshold
from .evaluation import binned_report, compute_metrics, emit_csv
from .nnet import ModelConfig, Prediction, TrainConfig, load_model, save_model, train
from .parser import ParserConfig, load_parser, parse, save_parser, train_parser
from .treegen import build_tree_cky, gold_polarity, read_treebank, write_treebank

log = logging.getLogger("dsnt")


class CliError(Exception):
    pass


@dataclass
class ExperimentConfig:
    corpus: str = ""
    seed: int | None = None
    out: str = "runs/experiment"
    split: list | dict = field(default_factory=lambda: [0.8, 0.1, 0.1])
    scorer: str = "mil"
    lexicon: str | None = None
    mil_epochs: int = 20
    mil_lr: float = 0.01
    mil_embed_dim: int = 50
    mil_hidden: int = 50
    beam: int = 10
    temperature: float = 0.0
    eps: float = 0.05
    parser_epochs: int = 30
    model: str = "dah"
    epochs: int = 30
    lr: float = 0.01
    optimizer: str = "sgd"
    batch: int = 64
    dropout: float = 0.5
    patience: int | None = 5
    embed_dim: int = 100
    word_hidden: int = 50
    edu_hidden: int = 50
    tree_hidden: int = 512
    min_count: int = 2
    embeddings: str | None = None
    metric: str = "acc"
    bins: int = 5
    paths: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.seed is None:
            raise CliError("a seed is required (config 'seed' or --seed)")
        if not self.corpus:
            raise CliError("no corpus path configured")
        if self.model not in ("han", "dah"):
            raise CliError(f"--model must be han or dah, got {self.model!r}")
        if self.metric not in METRICS:
            raise CliError(f"--metric must be one of {sorted(METRICS)}")
        if self.scorer not in ("mil", "lexicon"):
            raise CliError("scorer must be 'mil' or 'lexicon'")
        if self.scorer == "lexicon" and not self.lexicon:
            raise CliError("the lexicon scorer needs a 'lexicon' path")
        if self.beam < 1 or self.temperature < 0 or self.bins < 1:
            raise CliError("beam and bins must be >= 1 and temperature >= 0")

    def path(self, name: str) -> Path:
        defaults = {
            "scorer": "scorer.ckpt",
            "scores": "scores.jsonl",
            "silver": "silver.trees",
            "parser": "parser.ckpt",
            "parsed": "parsed.trees",
        }
        if name in self.paths:
            return Path(self.paths[name])
        if name in defaults:
            return Path(self.out) / defaults[name]
        return Path(self.out) / name


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    if not Path(path).is_file():
        raise CliError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise CliError(f"unknown config keys: {unknown}")
    base = Path(path).parent
    for key in ("corpus", "lexicon", "embeddings"):
        if data.get(key) and not os.path.isabs(data[key]):
            data[key] = str(base / data[key])
    return ExperimentConfig(**data)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("DSNT_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn: Callable, items: Sequence):
    workers = worker_count()
    if workers == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _require(*paths: Path) -> None:
    for p in paths:
        if not Path(p).exists():
            raise CliError(f"missing input: {p}")


def _splits(cfg: ExperimentConfig) -> corpus_mod.CorpusSplits:
    _require(Path(cfg.corpus))
    spec = cfg.split
    if isinstance(spec, dict):
        spec = {k: str(v) for k, v in spec.items()}
    return corpus_mod.load_corpus(cfg.corpus, spec, seed=cfg.seed)


def _write_jsonl(path: Path, records) -> None:
    text = "".join(json.dumps(r) + "\n" for r in records)
    atomic_write_bytes(path, text.encode("utf-8"))


def _write_json(path: Path, obj) -> None:
    atomic_write_bytes(path, (json.dumps(obj, indent=1, sort_keys=True) + "\n").encode("utf-8"))


def read_predictions(path: Path) -> list[Prediction]:
    _require(path)
    preds = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    preds.append(Prediction.from_record(json.loads(line)))
                except (KeyError, ValueError, TypeError):
                    raise CliError(f"{path}: line {lineno}: malformed prediction record") from None
    return preds


# --- subcommands -------------------------------------------------------------------

def cmd_score(cfg: ExperimentConfig) -> None:
    splits = _splits(cfg)
    docs = splits.all()
    if cfg.scorer == "lexicon":
        _require(Path(cfg.lexicon))
        lexicon = read_lexicon(cfg.lexicon)
        scores = {d.id: score_lexicon(d, lexicon) for d in docs}
    else:
        mil = MilConfig(embed_dim=cfg.mil_embed_dim, hidden_dim=cfg.mil_hidden, epochs=cfg.mil_epochs,
                        lr=cfg.mil_lr, seed=cfg.seed)
        model = train_mil_lite(splits.train, splits.dev, mil)
        save_scorer(cfg.path("scorer"), model)
        scores = dict(zip((d.id for d in docs), _map(lambda d: score_mil(model, d), docs)))
    save_scores(cfg.path("scores"), scores)
    log.info("scored %d documents -> %s", len(docs), cfg.path("scores"))


def cmd_build_treebank(cfg: ExperimentConfig) -> None:
    _require(cfg.path("scores"))
    splits = _splits(cfg)
    train_docs = splits.train  # silver trees only ever come from the training portion
    scores = load_scores(cfg.path("scores"), splits.all())

    def build(doc):
        return build_tree_cky(scores[doc.id], gold_polarity(doc.label), cfg.beam, cfg.temperature,
                              seed=cfg.seed, eps=cfg.eps)
    trees = _map(build, train_docs)
    write_treebank(cfg.path("silver"), [(d.id, t) for d, t in zip(train_docs, trees)])
    log.info("built %d silver trees -> %s", len(trees), cfg.path("silver"))


def cmd_train_parser(cfg: ExperimentConfig) -> None:
    _require(cfg.path("scores"), cfg.path("silver"))
    splits = _splits(cfg)
    train_docs = {d.id: d for d in splits.train}
    treebank = read_treebank(cfg.path("silver"))
    outside = [i for i in treebank if i not in train_docs]
    if outside:
        raise CliError(f"silver treebank contains non-training document {outside[0]!r}")
    scores = load_scores(cfg.path("scores"), splits.all())
    model = train_parser(treebank, train_docs, scores, ParserConfig(epochs=cfg.parser_epochs, seed=cfg.seed))
    save_parser(cfg.path("parser"), model)
    log.info("parser trained on %d trees -> %s", len(treebank), cfg.path("parser"))


def cmd_parse(cfg: ExperimentConfig) -> None:
    _require(cfg.path("scores"), cfg.path("parser"))
    splits = _splits(cfg)
    docs = splits.all()
    scores = load_scores(cfg.path("scores"), docs)
    model = load_parser(cfg.path("parser"))
    trees = _map(lambda d: parse(model, d, scores[d.id]), docs)
    write_treebank(cfg.path("parsed"), [(d.id, t) for d, t in zip(docs, trees)])
    log.info("parsed %d documents -> %s", len(docs), cfg.path("parsed"))


def _model_path(cfg: ExperimentConfig) -> Path:
    return cfg.path(f"model-{cfg.model}.ckpt")


def _trees_for(cfg: ExperimentConfig):
    if cfg.model != "dah":
        return None
    _require(cfg.path("parsed"))
    return read_treebank(cfg.path("parsed"))


def cmd_train(cfg: ExperimentConfig) -> None:
    splits = _splits(cfg)
    trees = _trees_for(cfg)
    mconf = ModelConfig(kind=cfg.model, embed_dim=cfg.embed_dim, word_hidden=cfg.word_hidden,
                        edu_hidden=cfg.edu_hidden, tree_hidden=cfg.tree_hidden, dropout=cfg.dropout,
                        min_count=cfg.min_count, seed=cfg.seed)
    tconf = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch, lr=cfg.lr, optimizer=cfg.optimizer,
                        patience=cfg.patience, seed=cfg.seed, embeddings=cfg.embeddings)
    model = train(mconf, splits.train, splits.dev, trees, tconf)
    save_model(_model_path(cfg), model, {"train_config": asdict(tconf)})
    log.info("%s model -> %s", cfg.model, _model_path(cfg))


def _pred_path(cfg: ExperimentConfig, split: str, kind: str | None = None) -> Path:
    return cfg.path(f"preds-{kind or cfg.model}-{split}.jsonl")


def cmd_predict(cfg: ExperimentConfig, split: str = "test") -> None:
    _require(_model_path(cfg))
    splits = _splits(cfg)
    docs = splits.split(split)
    trees = _trees_for(cfg)
    model = load_model(_model_path(cfg))
    if trees is not None:
        missing = [d.id for d in docs if d.id not in trees]
        if missing:
            raise CliError(f"no parsed tree for document id {missing[0]!r}")
    preds = _map(lambda d: model.predict(d, trees[d.id] if trees is not None else None), docs)
    _write_jsonl(_pred_path(cfg, split), [p.to_record() for p in preds])
    log.info("%d predictions -> %s", len(preds), _pred_path(cfg, split))


def _aligned(cfg: ExperimentConfig, preds: list[Prediction], split: str):
    docs = {d.id: d for d in _splits(cfg).split(split)}
    pred_ids = [p.id for p in preds]
    unknown = [i for i in pred_ids if i not in docs]
    if unknown:
        raise CliError(f"prediction id {unknown[0]!r} is not in the {split} split")
    missing = sorted(set(docs) - set(pred_ids))
    if missing:
        raise CliError(f"no prediction for {split} document id {missing[0]!r}")
    golds = [docs[p.id].label for p in preds]
    return golds


def cmd_evaluate(cfg: ExperimentConfig, split: str = "test", preds_path: str | None = None) -> dict:
    path = Path(preds_path) if preds_path else _pred_path(cfg, split)
    preds = read_predictions(path)
    golds = _aligned(cfg, preds, split)
    report = compute_metrics([p.pred for p in preds], golds)
    summary = {"model": cfg.model if not preds_path else path.stem, "split": split,
               "acc": report.accuracy * 100, "f1": report.f1 * 100, "mse": report.mse,
               "mae": report.mae, "support": report.support}
    _write_json(cfg.path(f"metrics-{path.stem.removeprefix('preds-')}.json"), summary)
    print(json.dumps(summary, sort_keys=True))
    return summary


def cmd_report_bins(cfg: ExperimentConfig, split: str = "test", preds_path: str | None = None) -> None:
    path = Path(preds_path) if preds_path else _pred_path(cfg, split)
    preds = read_predictions(path)
    golds = _aligned(cfg, preds, split)
    report = binned_report([p.pred for p in preds], golds, [p.length for p in preds], cfg.bins)
    emit_csv(report, cfg.path(f"bins-{path.stem.removeprefix('preds-')}.csv"))
    for b in report.bins:
        acc = "-" if b.metrics is None else f"{b.metrics.accuracy * 100:.2f}"
        print(f"{b.label()}\tacc={acc}")


def cmd_tune_ensemble(cfg: ExperimentConfig, short: Sequence[str] | None = None,
                      long: Sequence[str] | None = None) -> None:
    short = list(short or [str(_pred_path(cfg, "dev", "han"))])
    long = list(long or [str(_pred_path(cfg, "dev", "dah"))])
    if len(short) != len(long):
        raise CliError("--short and --long need the same number of runs")
    runs_a = [read_predictions(Path(p)) for p in short]
    runs_b = [read_predictions(Path(p)) for p in long]
    ref = runs_a[0]
    golds = _aligned(cfg, ref, "dev")
    order = [p.id for p in ref]
    by_id = lambda preds: {p.id: p for p in preds}  # noqa: E731
    seqs_a, seqs_b = [], []
    for preds in runs_a + runs_b:
        table = by_id(preds)
        if set(table) != set(order):
            raise CliError("dev prediction files cover different documents")
    for preds in runs_a:
        seqs_a.append([by_id(preds)[i].pred for i in order])
    for preds in runs_b:
        seqs_b.append([by_id(preds)[i].pred for i in order])
    rule = tune_threshold(seqs_a, seqs_b, golds, [p.length for p in ref], cfg.metric)
    save_rule(cfg.path(f"ensemble-{cfg.metric}.json"), rule)
    print(rule.to_json())
    test_a, test_b = _pred_path(cfg, "test", "han"), _pred_path(cfg, "test", "dah")
    if test_a.exists() and test_b.exists():
        pa = by_id(read_predictions(test_a))
        pb = read_predictions(test_b)
        if set(pa) != {p.id for p in pb}:
            raise CliError("test prediction files cover different documents")
        combined = [ensemble_predict(rule, p.length, pa[p.id], p) for p in pb]
        _write_jsonl(cfg.path(f"preds-ensemble-{cfg.metric}-test.jsonl"), [p.to_record() for p in combined])


PIPELINE = ("score", "build-treebank", "train-parser", "parse", "train", "predict", "evaluate",
            "report-bins")


def cmd_pipeline(cfg: ExperimentConfig) -> None:
    if cfg.model != "dah":
        log.warning("pipeline always trains the dah model; ignoring model=%r", cfg.model)
    cfg.model = "dah"
    stages = {
        "score": cmd_score,
        "build-treebank": cmd_build_treebank,
        "train-parser": cmd_train_parser,
        "parse": cmd_parse,
        "train": cmd_train,
        "predict": cmd_predict,
        "evaluate": cmd_evaluate,
        "report-bins": cmd_report_bins,
    }
    for name in PIPELINE:
        log.info("pipeline stage: %s", name)
        try:
            stages[name](cfg)
        except Exception as exc:
            raise CliError(f"pipeline failed at stage '{name}': {exc}") from exc


# --- argument handling -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment JSON file")
    common.add_argument("--corpus", help="JSONL corpus (overrides config)")
    common.add_argument("--seed", type=int)
    common.add_argument("--model", choices=["han", "dah"])
    common.add_argument("--metric", choices=sorted(METRICS))
    common.add_argument("--beam", type=int)
    common.add_argument("--temperature", type=float)
    common.add_argument("--bins", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--out", help="experiment output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="dsnt", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("score", "build-treebank", "train-parser", "parse", "train", "pipeline"):
        sub.add_parser(name, parents=[common])
    for name in ("predict", "evaluate", "report-bins"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--split", choices=["train", "dev", "test"], default="test")
        if name != "predict":
            p.add_argument("--preds", help="prediction file (default: from --model and --split)")
    p = sub.add_parser("tune-ensemble", parents=[common])
    p.add_argument("--short", nargs="+", help="dev predictions of the short-document model, one per run")
    p.add_argument("--long", nargs="+", help="dev predictions of the long-document model, one per run")
    return ap


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config)
    for key in ("corpus", "seed", "model", "metric", "beam", "temperature", "bins", "epochs", "out"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    cfg.validate()
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = resolve_config(args)
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        command = args.command
        if command == "score":
            cmd_score(cfg)
        elif command == "build-treebank":
            cmd_build_treebank(cfg)
        elif command == "train-parser":
            cmd_train_parser(cfg)
        elif command == "parse":
            cmd_parse(cfg)
        elif command == "train":
            cmd_train(cfg)
        elif command == "predict":
            cmd_predict(cfg, args.split)
        elif command == "evaluate":
            cmd_evaluate(cfg, args.split, args.preds)
        elif command == "report-bins":
            cmd_report_bins(cfg, args.split, args.preds)
        elif command == "tune-ensemble":
            cmd_tune_ensemble(cfg, args.short, args.long)
        elif command == "pipeline":
            cmd_pipeline(cfg)
    except (CliError, ValueError, KeyError, FileNotFoundError, OSError, RuntimeError) as exc:
        print(f"dsnt {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
