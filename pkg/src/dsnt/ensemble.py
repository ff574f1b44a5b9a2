"""Document-length threshold ensemble of two classifiers.

Documents with at most ``threshold`` words go to the short-document model,
longer ones to the long-document model.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass
from typing import Sequence, TypeVar

import numpy as np

from .autodiff.checkpoint import atomic_write_bytes
from .evaluation import compute_metrics

# metric name -> (MetricsReport field, higher is better)
METRICS = {"acc": ("accuracy", True), "f1": ("f1", True), "mse": ("mse", False), "mae": ("mae", False)}

P = TypeVar("P")


@dataclass(frozen=True)
class ThresholdRule:
    threshold: float
    short: str
    long: str
    metric: str

    def __post_init__(self):
        if not self.threshold >= 0:
            raise ValueError(f"threshold must be >= 0, got {self.threshold}")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def select(threshold: float, lengths, preds_short, preds_long) -> np.ndarray:
    lengths = np.asarray(lengths)
    return np.where(lengths <= threshold, np.asarray(preds_short), np.asarray(preds_long))


def metric_value(preds, golds, metric: str) -> float:
    field, _ = METRICS[metric]
    return getattr(compute_metrics(preds, golds), field)


def best_threshold(preds_short, preds_long, golds, lengths, metric: str) -> tuple[float, float]:
    """Scan 0, every distinct length and infinity; ties go to the smaller threshold."""
    if len(golds) == 0:
        raise ValueError("empty dev set")
    _, higher = METRICS[metric]
    best_t, best_v = None, None
    for t in [0.0, *sorted(set(float(x) for x in lengths)), math.inf]:
        v = metric_value(select(t, lengths, preds_short, preds_long), golds, metric)
        if best_v is None or (v > best_v if higher else v < best_v):
            best_t, best_v = t, v
    return best_t, best_v


def tune_threshold(dev_preds_short: Sequence[Sequence[int]], dev_preds_long: Sequence[Sequence[int]],
                   dev_golds: Sequence[int], dev_lengths: Sequence[int], metric: str = "acc",
                   short_name: str = "han", long_name: str = "dah") -> ThresholdRule:
    """Average of the per-run optimal thresholds.

    ``dev_preds_short``/``dev_preds_long`` hold one prediction sequence per
    run (paired by index).  If every run's optimum is infinite the rule keeps
    the short model everywhere.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; choose from {sorted(METRICS)}")
    if len(dev_golds) == 0:
        raise ValueError("empty dev set")
    if len(dev_preds_short) != len(dev_preds_long) or not dev_preds_short:
        raise ValueError("need the same positive number of runs for both models")
    optima = [best_threshold(a, b, dev_golds, dev_lengths, metric)[0]
              for a, b in zip(dev_preds_short, dev_preds_long)]
    return ThresholdRule(float(np.mean(optima)), short_name, long_name, metric)


def ensemble_predict(rule: ThresholdRule, length: int, pred_short: P, pred_long: P) -> P:
    if length < 0:
        raise ValueError("document length must be >= 0")
    return pred_short if length <= rule.threshold else pred_long


def save_rule(path: str | os.PathLike, rule: ThresholdRule) -> None:
    # JSON has no infinity; an all-short rule is written as a huge threshold
    data = asdict(rule)
    if math.isinf(data["threshold"]):
        data["threshold"] = 1e308
    atomic_write_bytes(path, (json.dumps(data) + "\n").encode("utf-8"))


def load_rule(path: str | os.PathLike) -> ThresholdRule:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return ThresholdRule(float(data["threshold"]), data["short"], data["long"], data["metric"])
