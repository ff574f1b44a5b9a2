"""Loading, validation and splitting of EDU-segmented sentiment corpora.

A corpus file is JSON-lines, one document per line::

    {"id": "d1", "label": 5, "edus": [["great", "food"], ["slow", "service"]]}

Labels are star ratings 1..5.  Tokens are expected to be lowercased already;
segmentation and tokenization happen upstream.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

N_CLASSES = 5
DEFAULT_RATIOS = (0.8, 0.1, 0.1)


class CorpusError(ValueError):
    """Raised for malformed corpus records or inconsistent splits."""


@dataclass(frozen=True)
class Document:
    id: str
    label: int
    edus: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if not (1 <= self.label <= N_CLASSES):
            raise CorpusError(f"document {self.id!r}: label {self.label} outside 1..{N_CLASSES}")
        if not self.edus:
            raise CorpusError(f"document {self.id!r}: no EDUs")
        for k, edu in enumerate(self.edus):
            if not edu:
                raise CorpusError(f"document {self.id!r}: EDU {k} is empty")

    @property
    def n_edus(self) -> int:
        return len(self.edus)

    @property
    def class_index(self) -> int:
        return self.label - 1

    def to_record(self) -> dict:
        return {"id": self.id, "label": self.label, "edus": [list(e) for e in self.edus]}


@dataclass(frozen=True)
class CorpusSplits:
    train: tuple[Document, ...]
    dev: tuple[Document, ...]
    test: tuple[Document, ...]

    def __post_init__(self):
        seen: dict[str, str] = {}
        for name in ("train", "dev", "test"):
            for doc in getattr(self, name):
                if doc.id in seen:
                    raise CorpusError(f"document {doc.id!r} appears in both {seen[doc.id]} and {name}")
                seen[doc.id] = name

    def split(self, name: str) -> tuple[Document, ...]:
        if name not in ("train", "dev", "test"):
            raise KeyError(name)
        return getattr(self, name)

    def all(self) -> tuple[Document, ...]:
        return self.train + self.dev + self.test

    def by_id(self) -> dict[str, Document]:
        return {d.id: d for d in self.all()}


def word_count(doc: Document) -> int:
    return sum(len(edu) for edu in doc.edus)


def parse_record(record: object, where: str = "record") -> Document:
    """Validate one decoded JSON record and build a Document.

    ``where`` is prefixed to error messages (e.g. ``"line 3"``).
    """
    if not isinstance(record, dict):
        raise CorpusError(f"{where}: expected a JSON object")
    for field in ("id", "label", "edus"):
        if field not in record:
            raise CorpusError(f"{where}: missing field '{field}'")
    doc_id = record["id"]
    if not isinstance(doc_id, str) or not doc_id:
        raise CorpusError(f"{where}: field 'id' must be a non-empty string")
    label = record["label"]
    if isinstance(label, bool) or not isinstance(label, int):
        raise CorpusError(f"{where}: field 'label' must be an integer")
    if not (1 <= label <= N_CLASSES):
        raise CorpusError(f"{where}: field 'label' = {label} outside 1..{N_CLASSES}")
    edus = record["edus"]
    if not isinstance(edus, list) or not edus:
        raise CorpusError(f"{where}: field 'edus' must be a non-empty list")
    out = []
    for k, edu in enumerate(edus):
        if not isinstance(edu, list) or not all(isinstance(t, str) for t in edu):
            raise CorpusError(f"{where}: field 'edus'[{k}] must be a list of strings")
        tokens = tuple(t for t in edu if t)
        if not tokens:
            raise CorpusError(f"{where}: field 'edus'[{k}] is empty")
        out.append(tokens)
    return Document(id=doc_id, label=label, edus=tuple(out))


def read_documents(path: str | os.PathLike) -> list[Document]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"corpus file not found: {path}")
    docs: list[Document] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
            doc = parse_record(record, where=f"{path}: line {lineno}")
            if doc.id in seen:
                raise CorpusError(f"{path}: line {lineno}: duplicate id {doc.id!r}")
            seen.add(doc.id)
            docs.append(doc)
    return docs


def write_documents(docs: Iterable[Document], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc.to_record(), ensure_ascii=False) + "\n")


def split_documents(docs: Sequence[Document], ratios: Sequence[float] = DEFAULT_RATIOS,
                    seed: int = 0) -> CorpusSplits:
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise CorpusError(f"invalid split ratios {tuple(ratios)}")
    total = float(sum(ratios))
    n = len(docs)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(n * ratios[0] / total))
    n_dev = min(int(round(n * ratios[1] / total)), n - n_train)
    shuffled = [docs[i] for i in order]
    return CorpusSplits(
        train=tuple(shuffled[:n_train]),
        dev=tuple(shuffled[n_train:n_train + n_dev]),
        test=tuple(shuffled[n_train + n_dev:]),
    )


def _read_id_list(path: str | os.PathLike) -> list[str]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"split file not found: {path}")
    return [line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def load_corpus(path: str | os.PathLike,
                split_spec: Sequence[float] | Mapping[str, str | os.PathLike] | None = None,
                seed: int = 0) -> CorpusSplits:
    """Load a JSONL corpus and split it.

    ``split_spec`` is either three ratios (train, dev, test) or a mapping from
    split name to a file of newline-separated ids.  Documents not named in any
    split file are dropped.
    """
    docs = read_documents(path)
    if split_spec is None:
        return split_documents(docs, DEFAULT_RATIOS, seed)
    if isinstance(split_spec, Mapping):
        by_id = {d.id: d for d in docs}
        parts = {}
        for name in ("train", "dev", "test"):
            ids = _read_id_list(split_spec[name]) if name in split_spec else []
            missing = [i for i in ids if i not in by_id]
            if missing:
                raise CorpusError(f"split '{name}' names unknown document id {missing[0]!r}")
            parts[name] = tuple(by_id[i] for i in ids)
        return CorpusSplits(**parts)
    return split_documents(docs, tuple(split_spec), seed)


def length_stats(docs: Sequence[Document]) -> dict[str, float]:
    lengths = np.array([word_count(d) for d in docs], dtype=float)
    if lengths.size == 0:
        return {"count": 0}
    return {
        "count": int(lengths.size),
        "min": float(lengths.min()),
        "max": float(lengths.max()),
        "mean": float(lengths.mean()),
        "median": float(np.median(lengths)),
    }
