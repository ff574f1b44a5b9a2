"""Star-rating metrics and document-length binned reports."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .autodiff.checkpoint import atomic_write_bytes

CSV_HEADER = ("bin_lo", "bin_hi", "support", "acc", "f1", "mse", "mae")


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    f1: float
    mse: float
    mae: float
    support: int

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Bin:
    lo: int
    hi: int
    support: int
    metrics: MetricsReport | None

    def label(self) -> str:
        return f"{self.lo}-{self.hi} ({self.support})"


@dataclass(frozen=True)
class BinnedReport:
    bins: tuple[Bin, ...]

    @property
    def support(self) -> int:
        return sum(b.support for b in self.bins)

    def labels(self) -> list[str]:
        return [b.label() for b in self.bins]


def _check_aligned(*seqs):
    n = len(seqs[0])
    if n == 0:
        raise ValueError("cannot evaluate an empty prediction set")
    for s in seqs[1:]:
        if len(s) != n:
            raise ValueError(f"length mismatch: {n} vs {len(s)}")


def compute_metrics(preds: Sequence[int], golds: Sequence[int]) -> MetricsReport:
    """Accuracy, macro-F1 over the gold classes, and MSE/MAE on the star scale."""
    _check_aligned(preds, golds)
    p = np.asarray(preds, dtype=int)
    g = np.asarray(golds, dtype=int)
    for name, arr in (("prediction", p), ("gold", g)):
        if arr.min() < 1 or arr.max() > 5:
            raise ValueError(f"{name} values must be star ratings in 1..5")
    f1s = []
    for cls in np.unique(g):
        tp = np.sum((p == cls) & (g == cls))
        fp = np.sum((p == cls) & (g != cls))
        fn = np.sum((p != cls) & (g == cls))
        f1s.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
    err = (p - g).astype(float)
    return MetricsReport(
        accuracy=float(np.mean(p == g)),
        f1=float(np.mean(f1s)),
        mse=float(np.mean(err ** 2)),
        mae=float(np.mean(np.abs(err))),
        support=int(p.size),
    )


def bin_edges(lo: int, hi: int, n_bins: int) -> list[tuple[int, int]]:
    """Equal-width integer bins covering [lo, hi]."""
    width = (hi - lo + 1) / n_bins
    starts = [lo + math.ceil(k * width - 1e-9) for k in range(n_bins)] + [hi + 1]
    return [(starts[k], starts[k + 1] - 1) for k in range(n_bins)]


def binned_report(preds: Sequence[int], golds: Sequence[int], lengths: Sequence[int],
                  n_bins: int = 5) -> BinnedReport:
    """Metrics per equal-width document-length bin.

    Populated bins report the smallest and largest length actually present;
    empty bins report their nominal range.
    """
    _check_aligned(preds, golds, lengths)
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    lengths = np.asarray(lengths, dtype=int)
    preds = np.asarray(preds, dtype=int)
    golds = np.asarray(golds, dtype=int)
    bins = []
    for lo, hi in bin_edges(int(lengths.min()), int(lengths.max()), n_bins):
        if lo > hi:
            continue
        sel = (lengths >= lo) & (lengths <= hi)
        if not sel.any():
            bins.append(Bin(lo, hi, 0, None))
            continue
        bins.append(Bin(int(lengths[sel].min()), int(lengths[sel].max()), int(sel.sum()),
                        compute_metrics(preds[sel], golds[sel])))
    return BinnedReport(tuple(bins))


def report_csv(report: BinnedReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for b in report.bins:
        m = b.metrics
        values = ["", "", "", ""] if m is None else [repr(m.accuracy), repr(m.f1), repr(m.mse), repr(m.mae)]
        writer.writerow([b.lo, b.hi, b.support, *values])
    return buf.getvalue()


def emit_csv(report: BinnedReport, path: str | os.PathLike) -> None:
    atomic_write_bytes(path, report_csv(report).encode("utf-8"))


def read_csv(path: str | os.PathLike) -> list[dict]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            rows.append({k: (float(v) if v != "" else None) for k, v in row.items()})
    return rows
