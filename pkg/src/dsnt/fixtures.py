"""Deterministic synthetic review corpora for tests and smoke runs.

Documents are stitched from aspect/opinion templates; the star label
controls the mix of positive and negative EDUs, and a small lexicon covers
the opinion words.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .corpus import Document

ASPECTS = ["food", "service", "staff", "pizza", "price", "place", "bread", "waiter",
           "dessert", "music", "table", "menu", "coffee", "pasta", "room", "parking"]
POSITIVE = {"great": 1.0, "amazing": 1.0, "delicious": 0.9, "friendly": 0.7, "nice": 0.5,
            "fresh": 0.6, "perfect": 1.0, "lovely": 0.8, "good": 0.5, "fantastic": 1.0}
NEGATIVE = {"awful": -1.0, "terrible": -1.0, "rude": -0.8, "cold": -0.5, "slow": -0.5,
            "bland": -0.6, "dirty": -0.8, "bad": -0.6, "horrible": -1.0, "overpriced": -0.7}
FILLERS = [["we", "went", "there", "on", "friday"], ["my", "husband", "ordered", "the", "same"],
           ["i", "came", "back", "last", "week"], ["it", "was", "busy"],
           ["we", "sat", "outside"], ["they", "opened", "recently"]]
CONNECTIVES = ["but", "and", "although", "because", "so", "also"]

# probability that an opinion EDU is positive, per star label
POSITIVE_RATE = {1: 0.05, 2: 0.3, 3: 0.5, 4: 0.75, 5: 0.95}


def _edu(rng: np.random.Generator, positive: bool | None) -> list[str]:
    if positive is None:
        return list(FILLERS[int(rng.integers(len(FILLERS)))])
    words = list(POSITIVE if positive else NEGATIVE)
    opinion = words[int(rng.integers(len(words)))]
    aspect = ASPECTS[int(rng.integers(len(ASPECTS)))]
    edu = ["the", aspect, "was", opinion]
    if rng.random() < 0.4:
        edu.insert(0, CONNECTIVES[int(rng.integers(len(CONNECTIVES)))])
    if rng.random() < 0.3:
        edu.extend(["and", ASPECTS[int(rng.integers(len(ASPECTS)))], "too"])
    return edu


def synthetic_corpus(n_docs: int, seed: int = 0, min_edus: int = 1, max_edus: int = 14,
                     prefix: str = "doc") -> list[Document]:
    rng = np.random.default_rng(seed)
    docs = []
    for k in range(n_docs):
        label = int(k % 5) + 1
        n = int(rng.integers(min_edus, max_edus + 1))
        edus = []
        for _ in range(n):
            if rng.random() < 0.2:
                edus.append(_edu(rng, None))
            else:
                edus.append(_edu(rng, bool(rng.random() < POSITIVE_RATE[label])))
        docs.append(Document(id=f"{prefix}{k:04d}", label=label, edus=tuple(tuple(e) for e in edus)))
    return docs


def synthetic_lexicon() -> dict[str, float]:
    return {**POSITIVE, **NEGATIVE}


def data_path(name: str) -> Path:
    """Path of a file bundled under ``dsnt/data``."""
    return Path(str(resources.files("dsnt") / "data" / name))
