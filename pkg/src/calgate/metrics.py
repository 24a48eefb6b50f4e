"""Reliability metrics: binned ECE, NLL, multiclass Brier and top-k accuracy."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .calibration import CalibratedPrediction, CalibrationMap, apply_batch
from .datamodel import Dataset, LogitRecord, ProbRecord, atomic_write_text
from .modelmath import LOG_FLOOR

DEFAULT_BINS = 15


@dataclass(frozen=True)
class ReliabilityBin:
    lo: float
    hi: float
    count: int
    mean_confidence: float
    empirical_accuracy: float


@dataclass(frozen=True)
class ReliabilityReport:
    bins: tuple[ReliabilityBin, ...]
    ece: float
    top1: float
    top5: float
    n: int
    nll: float | None = None
    brier: float | None = None
    map_kind: str = "identity"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bins"] = [asdict(b) for b in self.bins]
        d["n_bins"] = len(self.bins)
        return d

    def bins_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count", "mean_conf", "acc"])
        for b in self.bins:
            w.writerow([repr(b.lo), repr(b.hi), b.count, repr(b.mean_confidence), repr(b.empirical_accuracy)])
        return buf.getvalue()

    def save(self, json_path, csv_path=None) -> None:
        atomic_write_text(json_path, json.dumps(self.to_dict(), indent=2) + "\n")
        if csv_path is not None:
            atomic_write_text(csv_path, self.bins_csv())


def bin_edges(n_bins: int) -> np.ndarray:
    return np.arange(n_bins + 1, dtype=np.float64) / n_bins


def bin_index(conf, n_bins: int) -> np.ndarray:
    """Bin ``b`` holds ``[b/n, (b+1)/n)``; the last bin also takes 1.0."""
    idx = np.searchsorted(bin_edges(n_bins), np.asarray(conf, dtype=np.float64), side="right") - 1
    return np.clip(idx, 0, n_bins - 1)


def reliability_bins(conf, correct, n_bins: int = DEFAULT_BINS) -> tuple[ReliabilityBin, ...]:
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    conf = np.asarray(conf, dtype=np.float64)
    correct = np.asarray(correct, dtype=np.float64)
    idx = bin_index(conf, n_bins)
    counts = np.bincount(idx, minlength=n_bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=n_bins)
    hit_sum = np.bincount(idx, weights=correct, minlength=n_bins)
    edges = bin_edges(n_bins)
    out = []
    for b in range(n_bins):
        c = int(counts[b])
        mc = conf_sum[b] / c if c else 0.0
        acc = hit_sum[b] / c if c else 0.0
        out.append(ReliabilityBin(float(edges[b]), float(edges[b + 1]), c, float(mc), float(acc)))
    return tuple(out)


def ece_from_bins(bins: Sequence[ReliabilityBin]) -> float:
    n = sum(b.count for b in bins)
    if n == 0:
        raise ValueError("ECE of an empty sample is undefined")
    return float(sum(b.count * abs(b.empirical_accuracy - b.mean_confidence) for b in bins) / n)


def ece_arrays(conf, correct, n_bins: int = DEFAULT_BINS) -> tuple[float, tuple[ReliabilityBin, ...]]:
    if len(conf) == 0:
        raise ValueError("ECE of an empty sample is undefined")
    bins = reliability_bins(conf, correct, n_bins)
    return ece_from_bins(bins), bins


def ece(preds: Sequence[CalibratedPrediction], labels: Sequence[int],
        n_bins: int = DEFAULT_BINS) -> tuple[float, tuple[ReliabilityBin, ...]]:
    """Expected calibration error over equal-width confidence bins."""
    if len(preds) != len(labels):
        raise ValueError("preds and labels differ in length")
    conf = [p.confidence for p in preds]
    correct = [p.pred_class == y for p, y in zip(preds, labels)]
    return ece_arrays(conf, correct, n_bins)


def _prob_matrix(records: Sequence[ProbRecord]) -> tuple[np.ndarray, np.ndarray]:
    if len(records) == 0:
        raise ValueError("empty input")
    probs = np.array([r.probs for r in records], dtype=np.float64)
    labels = np.array([r.label for r in records], dtype=np.int64)
    return probs, labels


def nll_arrays(probs: np.ndarray, labels: np.ndarray) -> float:
    p_true = probs[np.arange(len(labels)), labels]
    return float(np.mean(-np.log(np.maximum(p_true, LOG_FLOOR))))


def brier_arrays(probs: np.ndarray, labels: np.ndarray) -> float:
    target = np.zeros_like(probs)
    target[np.arange(len(labels)), labels] = 1.0
    return float(np.mean(np.sum((probs - target) ** 2, axis=1)))


def nll(probs_records: Sequence[ProbRecord]) -> float:
    """Mean ``-log p_y`` with probabilities floored at 1e-12."""
    return nll_arrays(*_prob_matrix(probs_records))


def brier(probs_records: Sequence[ProbRecord]) -> float:
    """Multiclass Brier score, summed over classes (range [0, 2])."""
    return brier_arrays(*_prob_matrix(probs_records))


def topk_hits(logits: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Whether each label ranks within the top ``k`` (ties to lowest index)."""
    logits = np.asarray(logits, dtype=np.float64)
    n, n_classes = logits.shape
    if not 1 <= k <= n_classes:
        raise ValueError(f"k must be in [1, {n_classes}]")
    true = logits[np.arange(n), labels][:, None]
    cols = np.arange(n_classes)[None, :]
    # classes ranked ahead of the label: strictly larger, or equal with a lower index
    ahead = (logits > true) | ((logits == true) & (cols < labels[:, None]))
    return ahead.sum(axis=1) < k


def topk_accuracy(records: Sequence[LogitRecord], k: int) -> float:
    if len(records) == 0:
        raise ValueError("empty input")
    logits = np.array([r.logits for r in records], dtype=np.float64)
    labels = np.array([r.label for r in records], dtype=np.int64)
    return float(topk_hits(logits, labels, k).mean())


def report(ds: Dataset, cmap: CalibrationMap, n_bins: int = DEFAULT_BINS) -> ReliabilityReport:
    """Apply ``cmap`` to every record and summarize calibration quality.

    NLL and Brier need the full distribution, so they are only filled in
    for identity and temperature maps.
    """
    if len(ds) == 0:
        raise ValueError("cannot report on an empty dataset")
    logits, labels = ds.logits, ds.labels
    pred, conf = apply_batch(cmap, logits)
    ece_value, bins = ece_arrays(conf, pred == labels, n_bins)
    nll_value = brier_value = None
    if cmap.has_full_probs:
        probs = cmap.probs(logits)
        nll_value = nll_arrays(probs, labels)
        brier_value = brier_arrays(probs, labels)
    return ReliabilityReport(
        bins=bins,
        ece=ece_value,
        top1=float(np.mean(pred == labels)),
        top5=float(topk_hits(logits, labels, min(5, ds.k)).mean()),
        n=len(ds),
        nll=nll_value,
        brier=brier_value,
        map_kind=cmap.kind,
    )
