"""Mini-batch training loop with dev-accuracy early stopping."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .. import autodiff as ad
from ..corpus import Document
from .model import Model, ModelConfig, build_vocab, load_embeddings

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.01
    optimizer: str = "sgd"
    patience: int | None = 5
    clip_norm: float | None = 5.0
    seed: int = 0
    embeddings: str | None = None
    restore_best: bool = True


def _check_trees(model: Model, docs: Sequence[Document], trees) -> None:
    if model.kind != "dah":
        return
    if trees is None:
        raise TrainingError("DAH training needs discourse trees")
    for doc in docs:
        if doc.id not in trees:
            raise TrainingError(f"no discourse tree for document id {doc.id!r}")


def evaluate_accuracy(model: Model, docs: Sequence[Document], trees=None) -> float:
    if not docs:
        return float("nan")
    hits = 0
    for doc in docs:
        tree = trees.get(doc.id) if trees is not None else None
        hits += model.predict(doc, tree).pred == doc.label
    return hits / len(docs)


def mean_loss(model: Model, docs: Sequence[Document], trees=None) -> float:
    params = model.tensors()
    losses = [model.loss(d, params, trees.get(d.id) if trees is not None else None).item() for d in docs]
    return float(np.mean(losses))


def batch_gradients(model: Model, batch: Sequence[Document], trees, rng,
                    train: bool = True) -> tuple[dict[str, np.ndarray], float]:
    """Mean cross-entropy gradient over ``batch``; one tape per document."""
    total = {k: np.zeros_like(v) for k, v in model.params.items()}
    losses = []
    for doc in batch:
        params = model.tensors()
        tree = trees.get(doc.id) if trees is not None else None
        with ad.Tape() as tape:
            loss = model.loss(doc, params, tree, train=train, rng=rng)
        losses.append(loss.item())
        for k, g in ad.backward(tape, loss, params).items():
            total[k] += g
    n = len(batch)
    return {k: g / n for k, g in total.items()}, float(np.mean(losses))


def train(model_config: ModelConfig, train_docs: Sequence[Document], dev_docs: Sequence[Document],
          trees: Mapping[str, object] | None = None, config: TrainConfig | None = None) -> Model:
    """Train a HAN or DAH model; returns the model at its best dev accuracy.

    ``trees`` maps document ids to constituency or dependency trees and is
    required for DAH (every train and dev document needs one) and ignored
    for HAN.
    """
    config = config or TrainConfig()
    if not train_docs:
        raise TrainingError("no training documents")
    model = Model.create(model_config, build_vocab(train_docs, model_config.min_count))
    if model.kind == "han":
        trees = None
    _check_trees(model, list(train_docs) + list(dev_docs), trees)
    if config.embeddings:
        hits = load_embeddings(config.embeddings, model.vocab, model.params["emb"])
        log.info("loaded %d pretrained vectors", hits)
    opt = ad.Optimizer(model.params, ad.OptimizerConfig(name=config.optimizer, lr=config.lr,
                                                        clip_norm=config.clip_norm))
    rng = np.random.default_rng(config.seed)
    monitor = list(dev_docs) if dev_docs else list(train_docs)
    best_acc = evaluate_accuracy(model, monitor, trees)
    best = {k: v.copy() for k, v in model.params.items()}
    initial_loss = mean_loss(model, train_docs, trees)
    model.history.append({"epoch": 0, "train_loss": initial_loss, "dev_acc": best_acc})
    stale = 0
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(len(train_docs))
        losses = []
        for b in range(0, len(order), config.batch_size):
            batch = [train_docs[i] for i in order[b:b + config.batch_size]]
            try:
                grads, loss = batch_gradients(model, batch, trees, rng)
                opt.step(grads)
            except FloatingPointError as exc:
                raise TrainingError(f"non-finite value at epoch {epoch}: {exc}") from exc
            losses.append(loss * len(batch))
        train_loss = float(np.sum(losses) / len(train_docs))
        dev_acc = evaluate_accuracy(model, monitor, trees)
        model.history.append({"epoch": epoch, "train_loss": train_loss, "dev_acc": dev_acc})
        log.info("%s epoch %d loss %.4f dev_acc %.4f (%.1fs)", model.kind, epoch, train_loss,
                 dev_acc, time.perf_counter() - start)
        if dev_acc > best_acc:
            best_acc, stale = dev_acc, 0
            best = {k: v.copy() for k, v in model.params.items()}
        else:
            stale += 1
        if best_acc >= 1.0 or (config.patience is not None and stale >= config.patience):
            break
    if config.restore_best:
        for k, v in best.items():
            model.params[k][...] = v
    return model
