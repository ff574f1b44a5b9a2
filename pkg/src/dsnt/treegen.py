"""Sentiment-guided discourse tree induction.

EDU-level (polarity, importance) tuples are combined bottom-up over every
binary bracketing of a document.  A beam-limited CKY chart keeps the most
promising sub-trees per span; the root whose aggregated polarity lies
closest to the gold document polarity becomes the silver tree.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np

NUCLEARITY = ("NN", "NS", "SN")
ZERO_ATTENTION = 1e-9
DEFAULT_EPS = 0.05
MAX_BRUTE_FORCE = 12


class SpanScore(NamedTuple):
    """Polarity in [-1, 1] and importance in [0, 1] of an EDU or span."""

    p: float
    a: float


class TreeError(ValueError):
    pass


@dataclass(frozen=True)
class Leaf:
    index: int


@dataclass(frozen=True)
class Node:
    left: "Leaf | Node"
    right: "Leaf | Node"
    nuclearity: str
    score: SpanScore | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.nuclearity not in NUCLEARITY:
            raise TreeError(f"unknown nuclearity {self.nuclearity!r}")


Tree = Leaf | Node


def aggregate(left: SpanScore, right: SpanScore) -> SpanScore:
    weight = left.a + right.a
    if weight < ZERO_ATTENTION:
        p = (left.p + right.p) / 2.0
    else:
        p = (left.p * left.a + right.p * right.a) / weight
    # guard against 1 + ulp from rounding
    p = min(1.0, max(-1.0, p))
    return SpanScore(p, weight / 2.0)


def assign_nuclearity(a_left: float, a_right: float, eps: float = DEFAULT_EPS) -> str:
    if a_left - a_right > eps:
        return "NS"
    if a_right - a_left > eps:
        return "SN"
    return "NN"


def gold_polarity(label: int) -> float:
    """Map a 1..5 star label onto [-1, 1]."""
    return (label - 3) / 2.0


# --- tree helpers ---------------------------------------------------------------

def leaves(tree) -> list[int]:
    out: list[int] = []
    stack = [tree]
    while stack:
        t = stack.pop()
        if isinstance(t, Leaf):
            out.append(t.index)
        else:
            stack.append(t.right)
            stack.append(t.left)
    return out


def n_leaves(tree) -> int:
    return len(leaves(tree))


def height(tree) -> int:
    if isinstance(tree, Leaf):
        return 0
    return 1 + max(height(tree.left), height(tree.right))


def split_points(tree) -> tuple[int, ...]:
    """Pre-order list of split positions (first EDU of each right child)."""
    if isinstance(tree, Leaf):
        return ()
    return (leaves(tree.right)[0],) + split_points(tree.left) + split_points(tree.right)


def validate_tree(tree, n: int | None = None) -> None:
    idx = leaves(tree)
    expected = list(range(len(idx) if n is None else n))
    if idx != expected:
        raise TreeError(f"leaves {idx} are not 0..{len(expected) - 1} in order")


def rescore(tree, scores: Sequence[SpanScore], eps: float | None = None):
    """Recompute span scores bottom-up; optionally re-derive nuclearity too."""
    if isinstance(tree, Leaf):
        return tree
    left = rescore(tree.left, scores, eps)
    right = rescore(tree.right, scores, eps)
    ls, rs = score_of(left, scores), score_of(right, scores)
    nuc = tree.nuclearity if eps is None else assign_nuclearity(ls.a, rs.a, eps)
    return Node(left, right, nuc, aggregate(ls, rs))


def score_of(tree, scores: Sequence[SpanScore]) -> SpanScore:
    if isinstance(tree, Leaf):
        return SpanScore(*scores[tree.index])
    if tree.score is None:
        return score_of(rescore(tree, scores), scores)
    return tree.score


def random_tree(n: int, rng: np.random.Generator, nuclearity: bool = True):
    """Uniform-split random binary tree over EDUs 0..n-1."""
    if n < 1:
        raise TreeError("a tree needs at least one EDU")

    def build(i, j):
        if j - i == 1:
            return Leaf(i)
        k = int(rng.integers(i + 1, j))
        nuc = NUCLEARITY[int(rng.integers(3))] if nuclearity else "NN"
        return Node(build(i, k), build(k, j), nuc)
    return build(0, n)


def catalan(n: int) -> int:
    return math.comb(2 * n, n) // (n + 1)


# --- chart search -------------------------------------------------------------------

class _Cand:
    __slots__ = ("div", "height", "splits", "score", "left", "right", "leaf", "nuc")

    def __init__(self, div, height, splits, score, left=None, right=None, leaf=None, nuc=None):
        self.div = div
        self.height = height
        self.splits = splits
        self.score = score
        self.left = left
        self.right = right
        self.leaf = leaf
        self.nuc = nuc

    def key(self):
        return (self.div, self.height, self.splits)

    def tree(self):
        if self.leaf is not None:
            return Leaf(self.leaf)
        return Node(self.left.tree(), self.right.tree(), self.nuc, self.score)


def _leaf_cands(scores, gold_p):
    out = []
    for i, s in enumerate(scores):
        s = SpanScore(float(s[0]), float(s[1]))
        out.append(_Cand(abs(s.p - gold_p), 0, (), s, leaf=i))
    return out


def _combine(lc: _Cand, rc: _Cand, k: int, gold_p: float, eps: float) -> _Cand:
    s = aggregate(lc.score, rc.score)
    return _Cand(abs(s.p - gold_p), 1 + max(lc.height, rc.height), (k,) + lc.splits + rc.splits,
                 s, left=lc, right=rc, nuc=assign_nuclearity(lc.score.a, rc.score.a, eps))


def _check_scores(scores):
    if len(scores) == 0:
        raise TreeError("cannot build a tree over zero EDUs")
    for k, s in enumerate(scores):
        p, a = float(s[0]), float(s[1])
        if not (-1.0 <= p <= 1.0 and 0.0 <= a <= 1.0):
            raise TreeError(f"EDU {k}: score ({p}, {a}) outside [-1,1]x[0,1]")


def _prune(cands: list[_Cand], beam: int, temperature: float, rng) -> list[_Cand]:
    if len(cands) <= beam:
        return sorted(cands, key=_Cand.key)
    if temperature <= 0:
        return sorted(cands, key=_Cand.key)[:beam]
    # Gumbel top-k == sequential sampling without replacement from softmax(-div/T)
    logits = np.array([-c.div / temperature for c in cands])
    keys = logits + rng.gumbel(size=len(cands))
    chosen = np.argsort(-keys, kind="stable")[:beam]
    return sorted((cands[i] for i in chosen), key=_Cand.key)


def build_tree_cky(scores: Sequence[SpanScore], gold_p: float, beam_width: int = 10,
                   temperature: float = 0.0, seed: int = 0, eps: float = DEFAULT_EPS):
    """Beam-search CKY for the tree whose root polarity best matches ``gold_p``.

    Each chart cell keeps at most ``beam_width`` candidates.  With
    ``temperature`` 0 these are the ones whose own polarity is closest to
    ``gold_p``; otherwise they are sampled without replacement with
    probability proportional to ``softmax(-|p - gold_p| / temperature)``.
    Ties are broken by lower height, then by leftmost split points.
    """
    _check_scores(scores)
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    n = len(scores)
    rng = np.random.default_rng(seed)
    chart: dict[tuple[int, int], list[_Cand]] = {}
    for i, c in enumerate(_leaf_cands(scores, gold_p)):
        chart[i, i + 1] = [c]
    if n == 1:
        return chart[0, 1][0].tree()
    for width in range(2, n + 1):
        for i in range(0, n - width + 1):
            j = i + width
            cands = [_combine(lc, rc, k, gold_p, eps)
                     for k in range(i + 1, j)
                     for lc in chart[i, k]
                     for rc in chart[k, j]]
            if width == n:
                return min(cands, key=_Cand.key).tree()
            chart[i, j] = _prune(cands, beam_width, temperature, rng)
    raise AssertionError("unreachable")


def enumerate_trees(scores: Sequence[SpanScore], gold_p: float = 0.0,
                    eps: float = DEFAULT_EPS) -> Iterator:
    """Yield every binary tree over the EDUs (Catalan(n-1) of them)."""
    for c in _all_cands(scores, gold_p, eps):
        yield c.tree()


def _all_cands(scores, gold_p, eps):
    n = len(scores)
    memo: dict[tuple[int, int], list[_Cand]] = {}
    for i, c in enumerate(_leaf_cands(scores, gold_p)):
        memo[i, i + 1] = [c]
    for width in range(2, n + 1):
        for i in range(0, n - width + 1):
            j = i + width
            memo[i, j] = [_combine(lc, rc, k, gold_p, eps)
                          for k in range(i + 1, j) for lc in memo[i, k] for rc in memo[k, j]]
    return memo[0, n]


def brute_force_best_tree(scores: Sequence[SpanScore], gold_p: float,
                          eps: float = DEFAULT_EPS):
    """Exhaustive search with the same objective and tie-breaks as the chart."""
    _check_scores(scores)
    if len(scores) > MAX_BRUTE_FORCE:
        raise ValueError(f"brute force limited to n <= {MAX_BRUTE_FORCE} EDUs, got {len(scores)}")
    return min(_all_cands(scores, gold_p, eps), key=_Cand.key).tree()


def root_divergence(tree, scores: Sequence[SpanScore], gold_p: float) -> float:
    return abs(score_of(rescore(tree, scores), scores).p - gold_p)


# --- bracketed treebank format ----------------------------------------------------

def format_tree(tree) -> str:
    if isinstance(tree, Leaf):
        return str(tree.index)
    return f"({format_tree(tree.left)} {format_tree(tree.right)} {tree.nuclearity})"


_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def parse_tree(text: str):
    tokens = _TOKEN.findall(text)
    if not tokens:
        raise TreeError("empty tree string")
    pos = 0

    def expect_more():
        if pos >= len(tokens):
            raise TreeError(f"unbalanced brackets in {text!r}")

    def node():
        nonlocal pos
        expect_more()
        tok = tokens[pos]
        pos += 1
        if tok == "(":
            left = node()
            right = node()
            expect_more()
            tag = tokens[pos]
            pos += 1
            if tag not in NUCLEARITY:
                if tag in ("(", ")") or tag.isdigit():
                    raise TreeError(f"expected a nuclearity tag, got {tag!r} in {text!r}")
                raise TreeError(f"unknown nuclearity tag {tag!r}")
            expect_more()
            if tokens[pos] != ")":
                raise TreeError(f"unbalanced brackets in {text!r}")
            pos += 1
            return Node(left, right, tag)
        if tok == ")":
            raise TreeError(f"unbalanced brackets in {text!r}")
        if not tok.isdigit():
            raise TreeError(f"bad leaf token {tok!r}")
        return Leaf(int(tok))

    tree = node()
    if pos != len(tokens):
        raise TreeError(f"unbalanced brackets in {text!r}")
    idx = leaves(tree)
    if idx != list(range(len(idx))):
        raise TreeError(f"leaf index gap: leaves are {idx}")
    return tree


def write_treebank(path: str | os.PathLike, trees: Mapping[str, object] | Iterable[tuple[str, object]]) -> None:
    from .autodiff.checkpoint import atomic_write_bytes

    items = trees.items() if isinstance(trees, Mapping) else trees
    lines = []
    for doc_id, tree in items:
        if "\t" in doc_id or "\n" in doc_id:
            raise TreeError(f"document id {doc_id!r} contains a tab or newline")
        lines.append(f"{doc_id}\t{format_tree(tree)}\n")
    atomic_write_bytes(path, "".join(lines).encode("utf-8"))


def read_treebank(path: str | os.PathLike) -> dict[str, object]:
    out: dict[str, object] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise TreeError(f"{path}: line {lineno}: expected 'id<TAB>tree'")
            doc_id, text = line.split("\t", 1)
            try:
                tree = parse_tree(text)
            except TreeError as exc:
                raise TreeError(f"{path}: line {lineno}: {exc}") from None
            if doc_id in out:
                raise TreeError(f"{path}: line {lineno}: duplicate id {doc_id!r}")
            out[doc_id] = tree
    return out
