"""Coverage / act-only-precision sweeps over a confidence threshold and the
per-threshold check of ``AOP(tau) >= tau - eps``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .calibration import CalibrationMap, apply_batch
from .datamodel import Dataset, atomic_write_text
from .metrics import DEFAULT_BINS, reliability_bins

DEFAULT_TAUS = tuple(round(0.05 * i, 2) for i in range(20)) + (0.99,)


@dataclass(frozen=True)
class SweepPoint:
    tau: float
    coverage: float
    aop: float | None
    region_epsilon: float
    bound_satisfied: bool
    n_act: int = 0


@dataclass(frozen=True)
class SweepCurve:
    points: tuple[SweepPoint, ...]
    map_kind: str

    def __post_init__(self):
        taus = [p.tau for p in self.points]
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise ValueError("sweep taus must be strictly increasing")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tau", "coverage", "aop", "epsilon", "bound_ok"])
        for p in self.points:
            w.writerow([repr(p.tau), repr(p.coverage), "" if p.aop is None else repr(p.aop),
                        repr(p.region_epsilon), str(p.bound_satisfied).lower()])
        return buf.getvalue()

    def save(self, path) -> None:
        atomic_write_text(path, self.to_csv())


class NoOperatingPoint(ValueError):
    pass


def validate_taus(taus: Sequence[float]) -> list[float]:
    taus = [float(t) for t in taus]
    if not taus:
        raise ValueError("need at least one threshold")
    if any(not 0.0 <= t <= 1.0 for t in taus):
        raise ValueError("thresholds must lie in [0, 1]")
    if any(b <= a for a, b in zip(taus, taus[1:])):
        raise ValueError("thresholds must be strictly increasing")
    return taus


def region_epsilon(conf: np.ndarray, correct: np.ndarray, n_bins: int = DEFAULT_BINS) -> float:
    """Worst per-bin gap ``|acc_b - conf_b|`` among occupied bins.

    Callers pass only the records inside the decision region, so the bins
    are those of the ECE binning that the region occupies.
    """
    if conf.size == 0:
        return 0.0
    bins = reliability_bins(conf, correct, n_bins)
    return max(abs(b.empirical_accuracy - b.mean_confidence) for b in bins if b.count)


def sweep(ds: Dataset, cmap: CalibrationMap, taus: Sequence[float] = DEFAULT_TAUS,
          n_bins: int = DEFAULT_BINS) -> SweepCurve:
    """Act on ``conf >= tau``; report coverage, AOP and the safety bound per tau."""
    if len(ds) == 0:
        raise ValueError("cannot sweep an empty dataset")
    taus = validate_taus(taus)
    pred, conf = apply_batch(cmap, ds.logits)
    correct = pred == ds.labels
    n = len(ds)
    points = []
    for tau in taus:
        act = conf >= tau
        n_act = int(act.sum())
        if n_act == 0:
            # nothing to act on: precision is undefined and the bound vacuous
            points.append(SweepPoint(tau, 0.0, None, 0.0, True, 0))
            continue
        aop = float(correct[act].mean())
        eps = region_epsilon(conf[act], correct[act], n_bins)
        points.append(SweepPoint(tau, n_act / n, aop, eps, aop >= tau - eps, n_act))
    return SweepCurve(tuple(points), cmap.kind)


def act_mask(ds: Dataset, cmap: CalibrationMap, tau: float) -> np.ndarray:
    """Records on which the one-shot gate acts at threshold ``tau``."""
    _, conf = apply_batch(cmap, ds.logits)
    return conf >= tau


def operating_points(curve: SweepCurve, target_precision: float) -> SweepPoint:
    """Highest-coverage point whose AOP reaches ``target_precision``."""
    if not curve.points:
        raise ValueError("empty sweep curve")
    ok = [p for p in curve.points if p.aop is not None and p.aop >= target_precision]
    if not ok:
        raise NoOperatingPoint(f"no sweep point reaches precision {target_precision}")
    # max() keeps the first (lowest tau) among equal coverages
    return max(ok, key=lambda p: p.coverage)
