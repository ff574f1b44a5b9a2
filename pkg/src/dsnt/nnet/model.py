"""HAN and discourse-augmented HAN (DAH) document classifiers.

Both models share the word-level and EDU-level encoders: a BiLSTM with
additive attention over the words of each EDU, then a BiLSTM with attention
over the EDU vectors.  HAN reads out the attention-weighted sum of EDU
states; DAH instead runs a TreeLSTM over the dependency discourse tree whose
node inputs are the attention-weighted EDU states, and reads out the root.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..autodiff.checkpoint import load_checkpoint, save_checkpoint
from ..corpus import N_CLASSES, Document, word_count
from ..rstdep import DependencyTree, to_dependency, validate
from ..treegen import Leaf, Node
from .layers import MASK_VALUE, attention_scores, bilstm_padded, bilstm_sequence, tree_lstm

UNK = "<unk>"
KINDS = ("han", "dah")


@dataclass
class ModelConfig:
    kind: str = "dah"
    embed_dim: int = 100
    word_hidden: int = 50
    edu_hidden: int = 50
    tree_hidden: int = 512
    dropout: float = 0.5
    init_scale: float = 0.1
    min_count: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"model kind must be one of {KINDS}, got {self.kind!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")


@dataclass
class Prediction:
    id: str
    probs: tuple[float, ...]
    pred: int
    length: int

    def to_record(self) -> dict:
        return {"id": self.id, "probs": list(self.probs), "pred": self.pred, "len": self.length}

    @classmethod
    def from_record(cls, record: Mapping) -> "Prediction":
        return cls(id=record["id"], probs=tuple(float(p) for p in record["probs"]),
                   pred=int(record["pred"]), length=int(record["len"]))


def build_vocab(docs: Sequence[Document], min_count: int = 1) -> dict[str, int]:
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


def init_params(config: ModelConfig, vocab_size: int) -> dict[str, np.ndarray]:
    """Uniform(-s, s) weights and zero biases, drawn in a fixed order.

    Encoder and HAN readout parameters are drawn first, so a HAN and a DAH
    built from the same seed share identical encoders.
    """
    rng = np.random.default_rng(config.seed)
    s = config.init_scale

    def w(*shape):
        return rng.uniform(-s, s, shape)

    d, hw, he, ht = config.embed_dim, config.word_hidden, config.edu_hidden, config.tree_hidden
    p = {"emb": w(vocab_size, d)}
    for direction in ("fwd", "bwd"):
        p[f"word_{direction}_W"] = w(d + hw, 4 * hw)
        p[f"word_{direction}_b"] = np.zeros(4 * hw)
    p["word_att_W"] = w(2 * hw, 2 * hw)
    p["word_att_b"] = np.zeros(2 * hw)
    p["word_att_c"] = w(2 * hw)
    for direction in ("fwd", "bwd"):
        p[f"edu_{direction}_W"] = w(2 * hw + he, 4 * he)
        p[f"edu_{direction}_b"] = np.zeros(4 * he)
    p["edu_att_W"] = w(2 * he, 2 * he)
    p["edu_att_b"] = np.zeros(2 * he)
    p["edu_att_c"] = w(2 * he)
    p["out_W"] = w(N_CLASSES, 2 * he)
    p["out_b"] = np.zeros(N_CLASSES)
    if config.kind == "dah":
        p["tree_W_iou"] = w(2 * he, 3 * ht)
        p["tree_U_iou"] = w(ht, 3 * ht)
        p["tree_b_iou"] = np.zeros(3 * ht)
        p["tree_W_f"] = w(2 * he, ht)
        p["tree_U_f"] = w(ht, ht)
        p["tree_b_f"] = np.zeros(ht)
        p["tree_W_q"] = w(2 * he, ht)
        p["tree_C"] = w(ht, ht)
        p["tree_out_W"] = w(N_CLASSES, ht)
        p["tree_out_b"] = np.zeros(N_CLASSES)
    return p


def load_embeddings(path: str | os.PathLike, vocab: Mapping[str, int],
                    emb: np.ndarray) -> int:
    """Overwrite rows of ``emb`` from a text embedding file; returns hits."""
    hits = 0
    dim = emb.shape[1]
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip().split(" ")
            if len(parts) == 2 and lineno == 1:
                continue  # word2vec-style header
            word, values = parts[0], parts[1:]
            if word not in vocab:
                continue
            if len(values) != dim:
                raise ValueError(f"{path}: line {lineno}: expected {dim} values, got {len(values)}")
            emb[vocab[word]] = np.asarray(values, dtype=float)
            hits += 1
    return hits


# --- forward pieces ------------------------------------------------------------

def encode_edus(token_ids: Sequence[Sequence[int]], params: Mapping[str, Tensor],
                dropout_keep: float = 1.0, rng: np.random.Generator | None = None):
    """Encode a batch of EDUs; returns ((n, 2*word_hidden) vectors, (steps, n) attention)."""
    lengths = [len(ids) for ids in token_ids]
    if min(lengths) < 1:
        raise ValueError("every EDU needs at least one token")
    batch, steps = len(lengths), max(lengths)
    grid = np.zeros((steps, batch), dtype=np.int64)
    mask = np.full((steps, batch), MASK_VALUE)
    for b, ids in enumerate(token_ids):
        grid[:len(ids), b] = ids
        mask[:len(ids), b] = 0.0
    x = ad.take(params["emb"], grid.reshape(-1))
    if dropout_keep < 1.0:
        x = ad.dropout(x, ad.dropout_mask(x.shape, dropout_keep, rng))
    h = bilstm_padded(x, lengths, params, "word_")
    scores = ad.reshape(attention_scores(h, params, "word_att_"), (steps, batch)) + mask
    alpha = ad.softmax(scores, axis=0)
    weighted = ad.reshape(h * ad.reshape(alpha, (steps * batch, 1)), (steps, batch, h.shape[1]))
    return ad.sum_(weighted, axis=0), alpha


def encode_edu(token_ids: Sequence[int], params: Mapping[str, Tensor]):
    """Single-EDU convenience wrapper: ((2*word_hidden,) vector, attention)."""
    vec, alpha = encode_edus([token_ids], params)
    return vec[0], alpha[:, 0]


def encode_document(edu_vectors: Tensor, params: Mapping[str, Tensor]):
    """EDU-level BiLSTM states h (n, 2*edu_hidden) and attention alpha (n,)."""
    h = bilstm_sequence(edu_vectors, params, "edu_")
    alpha = ad.softmax(attention_scores(h, params, "edu_att_"))
    return h, alpha


def han_document_vector(h: Tensor, alpha: Tensor) -> Tensor:
    return ad.matmul(alpha, h)


def dah_document_vector(h: Tensor, alpha: Tensor, dep: DependencyTree,
                        params: Mapping[str, Tensor]) -> Tensor:
    problems = validate(dep)
    if problems:
        raise ValueError(f"invalid dependency tree: {'; '.join(problems)}")
    x = h * ad.reshape(alpha, (h.shape[0], 1))
    return tree_lstm(x, dep, params, "tree_")


def classify_logits(h_d: Tensor, params: Mapping[str, Tensor], prefix: str = "out_") -> Tensor:
    return ad.matmul(params[prefix + "W"], h_d) + params[prefix + "b"]


def classify(h_d: Tensor, params: Mapping[str, Tensor], prefix: str = "out_") -> np.ndarray:
    return ad.softmax(classify_logits(h_d, params, prefix)).data


# --- model container ------------------------------------------------------------

def as_dependency(tree) -> DependencyTree:
    if isinstance(tree, DependencyTree):
        return tree
    if isinstance(tree, (Leaf, Node)):
        return to_dependency(tree)
    raise TypeError(f"expected a constituency or dependency tree, got {type(tree).__name__}")


@dataclass
class Model:
    config: ModelConfig
    vocab: dict[str, int]
    params: dict[str, np.ndarray]
    history: list[dict] = field(default_factory=list)

    @classmethod
    def create(cls, config: ModelConfig, vocab: Mapping[str, int]) -> "Model":
        return cls(config=config, vocab=dict(vocab), params=init_params(config, len(vocab)))

    @property
    def kind(self) -> str:
        return self.config.kind

    def tensors(self) -> dict[str, Tensor]:
        return {k: ad.parameter(v, name=k) for k, v in self.params.items()}

    def token_ids(self, tokens: Sequence[str]) -> list[int]:
        unk = self.vocab[UNK]
        return [self.vocab.get(t, unk) for t in tokens]

    def document_vector(self, doc: Document, params: Mapping[str, Tensor], tree=None,
                        train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        keep = 1.0 - self.config.dropout if train else 1.0
        edu_vecs, _ = encode_edus([self.token_ids(e) for e in doc.edus], params, keep, rng)
        h, alpha = encode_document(edu_vecs, params)
        if self.kind == "han":
            h_d = han_document_vector(h, alpha)
        else:
            if tree is None:
                raise KeyError(f"DAH needs a discourse tree for document {doc.id!r}")
            dep = as_dependency(tree)
            if dep.n != doc.n_edus:
                raise ValueError(f"tree for {doc.id!r} covers {dep.n} EDUs, document has {doc.n_edus}")
            h_d = dah_document_vector(h, alpha, dep, params)
        if keep < 1.0:
            h_d = ad.dropout(h_d, ad.dropout_mask(h_d.shape, keep, rng))
        return h_d

    def logits(self, doc: Document, params: Mapping[str, Tensor], tree=None,
               train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        h_d = self.document_vector(doc, params, tree, train, rng)
        prefix = "tree_out_" if self.kind == "dah" else "out_"
        return classify_logits(h_d, params, prefix)

    def loss(self, doc: Document, params: Mapping[str, Tensor], tree=None,
             train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        return ad.cross_entropy(self.logits(doc, params, tree, train, rng), doc.class_index)

    def predict(self, doc: Document, tree=None) -> Prediction:
        probs = ad.softmax(self.logits(doc, self.tensors(), tree)).data
        return Prediction(id=doc.id, probs=tuple(float(p) for p in probs),
                          pred=int(np.argmax(probs)) + 1, length=word_count(doc))


def predict(model: Model, doc: Document, tree=None) -> Prediction:
    return model.predict(doc, tree)


def save_model(path: str | os.PathLike, model: Model, extra: Mapping | None = None) -> None:
    meta = {"kind": model.kind, "config": asdict(model.config), "vocab": model.vocab,
            "history": model.history, **(extra or {})}
    save_checkpoint(path, model.params, meta)


def load_model(path: str | os.PathLike) -> Model:
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") not in KINDS:
        raise ValueError(f"{path}: not a HAN/DAH checkpoint")
    return Model(config=ModelConfig(**meta["config"]), vocab=meta["vocab"], params=arrays,
                 history=meta.get("history", []))
