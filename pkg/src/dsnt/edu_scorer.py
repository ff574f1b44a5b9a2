"""Per-EDU polarity/importance scores, the inputs to tree induction.

Two scorers ship here: a deterministic lexicon scorer, and "MIL-lite", a
small multiple-instance model trained from document labels only.  MIL-lite
averages word embeddings per EDU, applies one tanh layer and a 5-way
softmax per EDU; the document distribution is the attention-weighted sum
of the EDU distributions.  An EDU's polarity is the expectation of its class
distribution under star weights (-1, -0.5, 0, 0.5, 1) and its importance is
its attention weight.
"""

from __future__ import annotations

import json
import logging
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff.checkpoint import atomic_write_bytes, load_checkpoint, save_checkpoint
from .corpus import N_CLASSES, Document
from .treegen import SpanScore

log = logging.getLogger(__name__)

EduScore = SpanScore
CLASS_WEIGHTS = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
UNK = "<unk>"


class ScoreFileError(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    pass


# --- lexicon scorer ---------------------------------------------------------------

def read_lexicon(path: str | os.PathLike) -> dict[str, float]:
    lexicon: dict[str, float] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            word, sep, value = line.partition("\t")
            try:
                polarity = float(value)
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: expected 'word<TAB>polarity'") from None
            if not sep or not -1.0 <= polarity <= 1.0:
                raise ValueError(f"{path}: line {lineno}: polarity must lie in [-1, 1]")
            lexicon[word] = polarity
    return lexicon


def score_lexicon(doc: Document, lexicon: Mapping[str, float]) -> list[EduScore]:
    a = 1.0 / doc.n_edus
    out = []
    for edu in doc.edus:
        hits = [lexicon[t] for t in edu if t in lexicon]
        p = float(np.mean(hits)) if hits else 0.0
        out.append(EduScore(min(1.0, max(-1.0, p)), a))
    return out


# --- MIL-lite ----------------------------------------------------------------------------

@dataclass
class MilConfig:
    embed_dim: int = 50
    hidden_dim: int = 50
    epochs: int = 20
    lr: float = 0.01
    optimizer: str = "adam"
    batch_size: int = 8
    init_scale: float = 0.1
    seed: int = 0
    min_count: int = 1


@dataclass
class ScorerModel:
    params: dict[str, np.ndarray]
    vocab: dict[str, int]
    config: MilConfig = field(default_factory=MilConfig)
    history: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if not self.vocab:
            raise ValueError("scorer vocabulary is empty")
        for name, value in self.params.items():
            if not np.all(np.isfinite(value)):
                raise ValueError(f"parameter {name!r} has non-finite values")

    def token_ids(self, tokens: Iterable[str]) -> list[int]:
        unk = self.vocab[UNK]
        return [self.vocab.get(t, unk) for t in tokens]


def build_vocab(docs: Iterable[Document], min_count: int = 1) -> dict[str, int]:
    counts: dict[str, int] = {}
    for doc in docs:
        for edu in doc.edus:
            for t in edu:
                counts[t] = counts.get(t, 0) + 1
    vocab = {UNK: 0}
    for word in sorted(counts):
        if counts[word] >= min_count:
            vocab[word] = len(vocab)
    return vocab


def init_scorer(vocab: Mapping[str, int], config: MilConfig) -> ScorerModel:
    rng = np.random.default_rng(config.seed)
    s = config.init_scale
    d, h = config.embed_dim, config.hidden_dim
    params = {
        "emb": rng.uniform(-s, s, (len(vocab), d)),
        "W_h": rng.uniform(-s, s, (d, h)),
        "b_h": np.zeros(h),
        "W_c": rng.uniform(-s, s, (h, N_CLASSES)),
        "b_c": np.zeros(N_CLASSES),
        "w_att": rng.uniform(-s, s, h),
    }
    return ScorerModel(params=params, vocab=dict(vocab), config=config)


def _forward(model: ScorerModel, tensors: Mapping[str, ad.Tensor], doc: Document):
    ids, rows = [], []
    for edu in doc.edus:
        rows.append(len(edu))
        ids.extend(model.token_ids(edu))
    avg = np.zeros((doc.n_edus, len(ids)))
    start = 0
    for k, length in enumerate(rows):
        avg[k, start:start + length] = 1.0 / length
        start += length
    words = ad.take(tensors["emb"], ids)
    edus = ad.matmul(ad.Tensor(avg), words)
    hidden = ad.tanh(ad.matmul(edus, tensors["W_h"]) + tensors["b_h"])
    edu_probs = ad.softmax(ad.matmul(hidden, tensors["W_c"]) + tensors["b_c"], axis=1)
    attention = ad.softmax(ad.matmul(hidden, tensors["w_att"]))
    doc_probs = ad.matmul(attention, edu_probs)
    return edu_probs, attention, doc_probs


def _tensors(model: ScorerModel) -> dict[str, ad.Tensor]:
    return {k: ad.parameter(v, name=k) for k, v in model.params.items()}


def document_loss(model: ScorerModel, tensors, doc: Document) -> ad.Tensor:
    _, _, doc_probs = _forward(model, tensors, doc)
    return ad.scale(ad.log(ad.slice_(doc_probs, doc.class_index)), -1.0)


def mean_loss(model: ScorerModel, docs: Sequence[Document]) -> float:
    tensors = _tensors(model)
    return float(np.mean([document_loss(model, tensors, d).item() for d in docs])) if docs else float("nan")


def predict_document(model: ScorerModel, doc: Document) -> np.ndarray:
    return _forward(model, _tensors(model), doc)[2].data


def accuracy(model: ScorerModel, docs: Sequence[Document]) -> float:
    hits = [int(np.argmax(predict_document(model, d))) == d.class_index for d in docs]
    return float(np.mean(hits)) if hits else float("nan")


def train_mil_lite(train: Sequence[Document], dev: Sequence[Document],
                   config: MilConfig | None = None) -> ScorerModel:
    """Fit MIL-lite on document labels; returns the best-dev-loss parameters."""
    config = config or MilConfig()
    if not train:
        raise ValueError("train_mil_lite needs at least one training document")
    model = init_scorer(build_vocab(train, config.min_count), config)
    opt = ad.Optimizer(model.params, ad.OptimizerConfig(name=config.optimizer, lr=config.lr))
    rng = np.random.default_rng(config.seed)
    monitor = list(dev) if dev else list(train)
    best_loss = mean_loss(model, monitor)
    best = {k: v.copy() for k, v in model.params.items()}
    model.history.append({"epoch": 0, "train_loss": mean_loss(model, train), "dev_loss": best_loss})
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [train[i] for i in order[start:start + config.batch_size]]
            total = {k: np.zeros_like(v) for k, v in model.params.items()}
            for doc in batch:
                tensors = _tensors(model)
                try:
                    with ad.Tape() as tape:
                        loss = document_loss(model, tensors, doc)
                except FloatingPointError as exc:
                    raise TrainingDiverged(f"MIL-lite diverged at epoch {epoch}, document {doc.id!r}: {exc}") from exc
                losses.append(loss.item())
                for k, g in ad.backward(tape, loss, tensors).items():
                    total[k] += g
            try:
                opt.step({k: g / len(batch) for k, g in total.items()})
            except FloatingPointError as exc:
                raise TrainingDiverged(f"MIL-lite diverged at epoch {epoch}: {exc}") from exc
        dev_loss = mean_loss(model, monitor)
        model.history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "dev_loss": dev_loss})
        log.info("mil-lite epoch %d train_loss %.4f dev_loss %.4f", epoch, np.mean(losses), dev_loss)
        if dev_loss < best_loss:
            best_loss = dev_loss
            best = {k: v.copy() for k, v in model.params.items()}
    if config.epochs and best_loss >= model.history[0]["dev_loss"]:
        log.warning("mil-lite: dev loss never improved over initialization")
    for k, v in best.items():
        model.params[k][...] = v
    return model


def score_mil(model: ScorerModel, doc: Document) -> list[EduScore]:
    edu_probs, attention, _ = _forward(model, _tensors(model), doc)
    polarity = edu_probs.data @ CLASS_WEIGHTS
    return [EduScore(float(min(1.0, max(-1.0, p))), float(min(1.0, max(0.0, a))))
            for p, a in zip(polarity, attention.data)]


def save_scorer(path: str | os.PathLike, model: ScorerModel) -> None:
    meta = {"kind": "mil-lite", "vocab": model.vocab, "config": model.config.__dict__,
            "history": model.history}
    save_checkpoint(path, model.params, meta)


def load_scorer(path: str | os.PathLike) -> ScorerModel:
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "mil-lite":
        raise ValueError(f"{path}: not a MIL-lite scorer checkpoint")
    return ScorerModel(params=arrays, vocab=meta["vocab"], config=MilConfig(**meta["config"]),
                       history=meta.get("history", []))


# --- score files --------------------------------------------------------------------

def save_scores(path: str | os.PathLike, scores: Mapping[str, Sequence[EduScore]]) -> None:
    lines = []
    for doc_id, edus in scores.items():
        record = {"id": doc_id, "edus": [{"p": float(s[0]), "a": float(s[1])} for s in edus]}
        lines.append(json.dumps(record) + "\n")
    atomic_write_bytes(path, "".join(lines).encode("utf-8"))


def load_scores(path: str | os.PathLike,
                corpus: Iterable[Document] | None = None) -> dict[str, list[EduScore]]:
    """Read a scores file, optionally checking it against corpus documents.

    Every corpus document must be present with a matching EDU count; ids that
    the corpus does not contain are ignored with a warning.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"scores file not found: {path}")
    scores: dict[str, list[EduScore]] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                doc_id = record["id"]
                edus = [EduScore(float(e["p"]), float(e["a"])) for e in record["edus"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                raise ScoreFileError(f"{path}: line {lineno}: malformed score record") from None
            for k, s in enumerate(edus):
                if not (-1.0 <= s.p <= 1.0 and 0.0 <= s.a <= 1.0):
                    raise ScoreFileError(f"{path}: line {lineno}: EDU {k} score out of range")
            scores[doc_id] = edus
    if corpus is None:
        return scores
    docs = list(corpus)
    wanted = {d.id for d in docs}
    for doc in docs:
        if doc.id not in scores:
            raise ScoreFileError(f"{path}: no scores for document id {doc.id!r}")
        if len(scores[doc.id]) != doc.n_edus:
            raise ScoreFileError(f"{path}: document {doc.id!r} has {doc.n_edus} EDUs "
                                 f"but {len(scores[doc.id])} scores")
    extra = sorted(set(scores) - wanted)
    if extra:
        warnings.warn(f"{path}: ignoring {len(extra)} ids not in the corpus (e.g. {extra[0]!r})",
                      stacklevel=2)
    return {d.id: scores[d.id] for d in docs}
