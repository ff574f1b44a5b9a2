"""Greedy shift-reduce discourse parser with an averaged perceptron.

The transition system builds binary trees over EDUs with four actions:
SHIFT moves the next EDU onto the stack, REDUCE-XY pops two subtrees and
pushes their parent with nuclearity XY.  Features are hashed indicator
features of the top two stack subtrees and the queue front, including the
span scores that drive tree induction.
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .autodiff.checkpoint import load_checkpoint, save_checkpoint
from .corpus import Document
from .treegen import Leaf, Node, SpanScore, aggregate, leaves

log = logging.getLogger(__name__)

SHIFT = "SHIFT"
ACTIONS = ("SHIFT", "REDUCE-NN", "REDUCE-NS", "REDUCE-SN")
_INDEX = {a: k for k, a in enumerate(ACTIONS)}


class ParserError(ValueError):
    pass


@dataclass
class _Item:
    tree: object
    start: int
    end: int
    score: SpanScore


@dataclass
class ParserState:
    n: int
    stack: list[_Item] = field(default_factory=list)
    next_edu: int = 0

    @property
    def queue(self) -> range:
        return range(self.next_edu, self.n)

    def legal(self) -> list[bool]:
        can_reduce = len(self.stack) >= 2
        return [self.next_edu < self.n] + [can_reduce] * 3

    def is_final(self) -> bool:
        return self.next_edu == self.n and len(self.stack) == 1

    def apply(self, action: str, scores: Sequence[SpanScore]) -> None:
        if action == SHIFT:
            if self.next_edu >= self.n:
                raise ParserError("SHIFT with an empty queue")
            i = self.next_edu
            self.stack.append(_Item(Leaf(i), i, i + 1, SpanScore(*scores[i])))
            self.next_edu += 1
            return
        if action not in _INDEX:
            raise ParserError(f"unknown action {action!r}")
        if len(self.stack) < 2:
            raise ParserError(f"{action} needs two stack items")
        right = self.stack.pop()
        left = self.stack.pop()
        score = aggregate(left.score, right.score)
        node = Node(left.tree, right.tree, action.split("-", 1)[1], score)
        self.stack.append(_Item(node, left.start, right.end, score))


def oracle_actions(tree) -> list[str]:
    """Post-order action sequence that rebuilds ``tree``."""
    if isinstance(tree, Leaf):
        return [SHIFT]
    return oracle_actions(tree.left) + oracle_actions(tree.right) + [f"REDUCE-{tree.nuclearity}"]


def replay(actions: Sequence[str], n: int, scores: Sequence[SpanScore] | None = None):
    scores = scores if scores is not None else [SpanScore(0.0, 0.0)] * n
    state = ParserState(n)
    for a in actions:
        state.apply(a, scores)
    if not state.is_final():
        raise ParserError("action sequence does not produce a complete tree")
    return state.stack[0].tree


# --- features ---------------------------------------------------------------------

def _bucket(x: float, step: float) -> int:
    return int(np.floor(x / step))


def _span_feats(tag: str, item: _Item | None, doc: Document, n: int) -> list[str]:
    if item is None:
        return [f"{tag}=none"]
    p, a = item.score
    length = item.end - item.start
    return [
        f"{tag}.len={min(length, 8)}",
        f"{tag}.p={_bucket(p, 0.25)}",
        f"{tag}.a={_bucket(a, 0.05)}",
        f"{tag}.first={doc.edus[item.start][0]}",
        f"{tag}.last={doc.edus[item.end - 1][-1]}",
        f"{tag}.start={min(item.start, 10)}",
        f"{tag}.to_end={min(n - item.end, 10)}",
        f"{tag}.first_edu_head={'_'.join(doc.edus[item.start][:2])}",
    ]


def feature_strings(state: ParserState, doc: Document, scores: Sequence[SpanScore]) -> list[str]:
    n = state.n
    s0 = state.stack[-1] if state.stack else None
    s1 = state.stack[-2] if len(state.stack) >= 2 else None
    feats = ["bias", f"stack={min(len(state.stack), 6)}", f"queue={min(n - state.next_edu, 6)}"]
    feats += _span_feats("s0", s0, doc, n)
    feats += _span_feats("s1", s1, doc, n)
    if state.next_edu < n:
        q = state.next_edu
        p, a = scores[q]
        edu = doc.edus[q]
        feats += [f"q0.first={edu[0]}", f"q0.last={edu[-1]}", f"q0.p={_bucket(p, 0.25)}",
                  f"q0.a={_bucket(a, 0.05)}", f"q0.len={min(len(edu), 12)}"]
    else:
        feats.append("q0=none")
    if s0 is not None and s1 is not None:
        diff = s1.score.a - s0.score.a
        feats += [
            f"adiff={_bucket(diff, 0.05)}",
            f"adiff.sign={'L' if diff > 0.05 else 'R' if diff < -0.05 else 'T'}",
            f"pdiff={_bucket(s1.score.p - s0.score.p, 0.25)}",
            f"s1s0.len={min(s1.end - s1.start, 8)}_{min(s0.end - s0.start, 8)}",
            f"s1s0.first={doc.edus[s1.start][0]}_{doc.edus[s0.start][0]}",
            f"s1s0.span={s1.start}_{s0.start}_{s0.end}_{n - s0.end}",
            f"s1s0.lex_span={doc.edus[s1.start][-1]}_{doc.edus[s0.end - 1][-1]}_{s1.start}_{s0.start}_{s0.end}",
        ]
    if s0 is not None and state.next_edu < n:
        feats.append(f"s0q0={doc.edus[s0.end - 1][-1]}_{doc.edus[state.next_edu][0]}")
        feats.append(f"s0q0.span={s0.start}_{s0.end}_{len(state.stack)}")
    return feats


def extract_features(state: ParserState, doc: Document, scores: Sequence[SpanScore],
                     dim: int = 1 << 18, seed: int = 0) -> np.ndarray:
    """Sorted unique hashed feature indices for ``state``."""
    salt = f"{seed}:".encode()
    idx = {zlib.crc32(salt + f.encode("utf-8")) % dim for f in feature_strings(state, doc, scores)}
    return np.array(sorted(idx), dtype=np.int64)


# --- model ----------------------------------------------------------------------------

@dataclass
class ParserConfig:
    epochs: int = 30
    dim: int = 1 << 18
    seed: int = 0


@dataclass
class ParserModel:
    weights: np.ndarray  # (len(ACTIONS), dim), averaged
    dim: int
    seed: int = 0
    history: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if self.weights.shape != (len(ACTIONS), self.dim):
            raise ValueError(f"weights shape {self.weights.shape} != {(len(ACTIONS), self.dim)}")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("parser weights are not finite")

    def features(self, state, doc, scores) -> np.ndarray:
        return extract_features(state, doc, scores, self.dim, self.seed)

    def best_action(self, feats: np.ndarray, legal: Sequence[bool], weights=None) -> int:
        w = self.weights if weights is None else weights
        scores = w[:, feats].sum(axis=1)
        scores = np.where(legal, scores, -np.inf)
        return int(np.argmax(scores))


def _check_ids(treebank, docs, scores):
    for doc_id, tree in treebank.items():
        if doc_id not in docs:
            raise ParserError(f"treebank id {doc_id!r} not found in the corpus")
        if doc_id not in scores:
            raise ParserError(f"treebank id {doc_id!r} has no EDU scores")
        n = docs[doc_id].n_edus
        if len(leaves(tree)) != n or len(scores[doc_id]) != n:
            raise ParserError(f"document {doc_id!r}: tree, scores and EDU counts disagree")


def train_parser(treebank: Mapping[str, object], docs: Mapping[str, Document],
                 scores: Mapping[str, Sequence[SpanScore]],
                 config: ParserConfig | None = None) -> ParserModel:
    """Averaged perceptron over oracle (state, action) pairs."""
    config = config or ParserConfig()
    _check_ids(treebank, docs, scores)
    ids = list(treebank)
    model = ParserModel(np.zeros((len(ACTIONS), config.dim)), config.dim, config.seed)
    weights = np.zeros_like(model.weights)
    totals = np.zeros_like(model.weights)  # sum over updates of (timestamp * delta)
    step = 1
    rng = np.random.default_rng(config.seed)
    # features depend only on the gold path, so extract them once
    cache: dict[str, list[tuple[np.ndarray, list[bool], int]]] = {}
    for doc_id in ids:
        doc, sc = docs[doc_id], scores[doc_id]
        state = ParserState(doc.n_edus)
        path = []
        for action in oracle_actions(treebank[doc_id]):
            path.append((model.features(state, doc, sc), state.legal(), _INDEX[action]))
            state.apply(action, sc)
        cache[doc_id] = path
    for epoch in range(1, config.epochs + 1):
        correct = total = 0
        for k in rng.permutation(len(ids)):
            for feats, legal, gold in cache[ids[k]]:
                pred = model.best_action(feats, legal, weights)
                if pred != gold:
                    weights[gold, feats] += 1.0
                    weights[pred, feats] -= 1.0
                    totals[gold, feats] += step
                    totals[pred, feats] -= step
                else:
                    correct += 1
                total += 1
                step += 1
        acc = correct / total if total else float("nan")
        model.history.append({"epoch": epoch, "oracle_acc": acc})
        log.info("parser epoch %d oracle-action accuracy %.4f", epoch, acc)
    if config.epochs:
        model.weights = weights - totals / step
    return model


def oracle_accuracy(model: ParserModel, treebank: Mapping[str, object],
                    docs: Mapping[str, Document], scores: Mapping[str, Sequence[SpanScore]]) -> float:
    correct = total = 0
    for doc_id, tree in treebank.items():
        doc, sc = docs[doc_id], scores[doc_id]
        state = ParserState(doc.n_edus)
        for action in oracle_actions(tree):
            pred = model.best_action(model.features(state, doc, sc), state.legal())
            correct += ACTIONS[pred] == action
            total += 1
            state.apply(action, sc)
    return correct / total if total else float("nan")


def parse(model: ParserModel, doc: Document, scores: Sequence[SpanScore],
          return_actions: bool = False):
    """Greedy decode; illegal actions are masked so the parse always completes."""
    if len(scores) != doc.n_edus:
        raise ParserError(f"document {doc.id!r}: {doc.n_edus} EDUs but {len(scores)} scores")
    state = ParserState(doc.n_edus)
    actions = []
    while not state.is_final():
        action = ACTIONS[model.best_action(model.features(state, doc, scores), state.legal())]
        state.apply(action, scores)
        actions.append(action)
    tree = state.stack[0].tree
    return (tree, actions) if return_actions else tree


def save_parser(path, model: ParserModel) -> None:
    arrays = {"dim": np.array([model.dim], dtype=float)}
    arrays.update({f"w/{a}": model.weights[k] for k, a in enumerate(ACTIONS)})
    save_checkpoint(path, arrays, {"kind": "parser", "seed": model.seed, "actions": list(ACTIONS),
                                   "history": model.history})


def load_parser(path) -> ParserModel:
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "parser":
        raise ValueError(f"{path}: not a parser checkpoint")
    dim = int(arrays["dim"][0])
    weights = np.stack([arrays[f"w/{a}"] for a in ACTIONS])
    return ParserModel(weights, dim, int(meta.get("seed", 0)), meta.get("history", []))
