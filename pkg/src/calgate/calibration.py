"""Post-hoc calibrators: temperature scaling, Platt scaling on the top
logit, and top-class isotonic regression.

Every map leaves the predicted class alone. Only the confidence attached
to it changes.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np

from .datamodel import Dataset, LogitRecord, atomic_write_text
from .modelmath import argmax, log_softmax, softmax

MAP_SCHEMA = "calgate.calibration_map/1"

T_MIN, T_MAX = 0.05, 20.0
LOG_T_TOL = 1e-4
PLATT_CLAMP = 50.0
PLATT_MAX_ITER = 100
PLATT_GRAD_TOL = 1e-10
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
_TINY = 1e-300


class CalibrationWarning(UserWarning):
    """A fit finished but hit a degenerate case (boundary, separation)."""


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass(frozen=True)
class CalibratedPrediction:
    pred_class: int
    confidence: float
    full_probs: tuple[float, ...] | None = None


@dataclass(frozen=True)
class CalibrationMap:
    """Base class; subclasses implement the per-kind confidence transform."""

    kind: ClassVar[str] = "identity"
    has_full_probs: ClassVar[bool] = True
    flags: tuple[str, ...] = field(default=(), kw_only=True)

    def probs(self, logits: np.ndarray) -> np.ndarray:
        return softmax(logits)

    def confidences(self, logits: np.ndarray) -> np.ndarray:
        """Calibrated top-class confidence for each row of ``logits``."""
        return self.probs(logits).max(axis=-1)

    def confidence_from_probs(self, probs: np.ndarray) -> float:
        """Calibrated confidence of the top class of a probability vector."""
        return float(np.max(probs))

    def params(self) -> dict:
        return {}

    def to_dict(self) -> dict:
        return {"schema": MAP_SCHEMA, "kind": self.kind, **self.params(), "flags": list(self.flags)}


@dataclass(frozen=True)
class IdentityMap(CalibrationMap):
    pass


@dataclass(frozen=True)
class TemperatureMap(CalibrationMap):
    kind: ClassVar[str] = "temperature"
    temperature: float = 1.0

    def __post_init__(self):
        if not (self.temperature > 0 and math.isfinite(self.temperature)):
            raise ValueError(f"temperature must be positive, got {self.temperature}")

    def probs(self, logits):
        return softmax(np.asarray(logits, dtype=np.float64) / self.temperature)

    def confidence_from_probs(self, probs):
        # log-probabilities are logits up to a per-row constant
        logp = np.log(np.maximum(np.asarray(probs, dtype=np.float64), _TINY))
        return float(np.max(softmax(logp / self.temperature)))

    def params(self):
        return {"temperature": self.temperature}


@dataclass(frozen=True)
class PlattMap(CalibrationMap):
    kind: ClassVar[str] = "platt"
    has_full_probs: ClassVar[bool] = False
    a: float = 1.0
    b: float = 0.0

    def probs(self, logits):
        raise TypeError("Platt scaling only calibrates the top-class confidence")

    def confidences(self, logits):
        logits = np.asarray(logits, dtype=np.float64)
        return _sigmoid(self.a * logits.max(axis=-1) + self.b)

    def confidence_from_probs(self, probs):
        m = min(max(float(np.max(probs)), 1e-12), 1.0 - 1e-12)
        return float(_sigmoid(self.a * math.log(m / (1.0 - m)) + self.b))

    def params(self):
        return {"a": self.a, "b": self.b}


@dataclass(frozen=True)
class IsotonicMap(CalibrationMap):
    """Right-continuous step function over raw top-class confidence."""

    kind: ClassVar[str] = "isotonic"
    has_full_probs: ClassVar[bool] = False
    breakpoints: tuple[tuple[float, float], ...] = ((0.0, 0.0),)

    def __post_init__(self):
        bps = tuple((float(x), float(v)) for x, v in self.breakpoints)
        object.__setattr__(self, "breakpoints", bps)
        if not bps:
            raise ValueError("isotonic map needs at least one breakpoint")
        xs = [x for x, _ in bps]
        vs = [v for _, v in bps]
        if any(not 0.0 <= x <= 1.0 for x in xs) or any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("breakpoint confidences must be strictly increasing in [0, 1]")
        if any(not 0.0 <= v <= 1.0 for v in vs) or any(b < a for a, b in zip(vs, vs[1:])):
            raise ValueError("calibrated values must be nondecreasing in [0, 1]")
        object.__setattr__(self, "_xs", np.array(xs))
        object.__setattr__(self, "_vs", np.array(vs))

    def lookup(self, conf):
        idx = np.searchsorted(self._xs, conf, side="right") - 1
        return self._vs[np.maximum(idx, 0)]

    def probs(self, logits):
        raise TypeError("isotonic calibration only covers the top-class confidence")

    def confidences(self, logits):
        return self.lookup(softmax(logits).max(axis=-1))

    def confidence_from_probs(self, probs):
        return float(self.lookup(float(np.max(probs))))

    def params(self):
        return {"breakpoints": [list(bp) for bp in self.breakpoints]}


_KINDS = {cls.kind: cls for cls in (IdentityMap, TemperatureMap, PlattMap, IsotonicMap)}


def map_from_dict(obj: dict) -> CalibrationMap:
    schema = obj.get("schema", MAP_SCHEMA)
    if schema != MAP_SCHEMA:
        raise ValueError(f"unsupported calibration map schema {schema!r}")
    kind = obj.get("kind")
    flags = tuple(obj.get("flags", ()))
    if kind == "identity":
        return IdentityMap(flags=flags)
    if kind == "temperature":
        return TemperatureMap(float(obj["temperature"]), flags=flags)
    if kind == "platt":
        return PlattMap(float(obj["a"]), float(obj["b"]), flags=flags)
    if kind == "isotonic":
        return IsotonicMap(tuple(tuple(bp) for bp in obj["breakpoints"]), flags=flags)
    raise ValueError(f"unknown calibration kind {kind!r}")


def save_map(cmap: CalibrationMap, path) -> None:
    atomic_write_text(path, json.dumps(cmap.to_dict(), indent=2) + "\n")


def load_map(path) -> CalibrationMap:
    with open(path, encoding="utf-8") as fh:
        return map_from_dict(json.load(fh))


def apply_batch(cmap: CalibrationMap, logits) -> tuple[np.ndarray, np.ndarray]:
    """Predicted classes and calibrated confidences for a logit matrix."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    return argmax(logits, axis=-1), cmap.confidences(logits)


def apply(cmap: CalibrationMap, record: LogitRecord) -> CalibratedPrediction:
    logits = np.asarray(record.logits, dtype=np.float64)[None, :]
    pred, conf = apply_batch(cmap, logits)
    full = tuple(cmap.probs(logits)[0].tolist()) if cmap.has_full_probs else None
    return CalibratedPrediction(int(pred[0]), float(conf[0]), full)


def _require(val: Dataset) -> None:
    if len(val) == 0:
        raise ValueError("cannot fit a calibration map on an empty dataset")


def temperature_nll(logits: np.ndarray, labels: np.ndarray, temperature: float) -> float:
    """Mean negative log-likelihood of ``softmax(logits / T)``."""
    logp = log_softmax(logits / temperature)
    return float(-logp[np.arange(len(labels)), labels].mean())


def golden_section_min(f, lo: float, hi: float, tol: float):
    """Minimize a unimodal ``f`` on ``[lo, hi]``; returns ``(x, at_bound)``.

    ``at_bound`` is -1/+1 when an endpoint beats the converged interior
    point, 0 otherwise.
    """
    a, b = lo, hi
    x1 = b - _INV_PHI * (b - a)
    x2 = a + _INV_PHI * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a >= tol:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _INV_PHI * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _INV_PHI * (b - a)
            f2 = f(x2)
    mid = 0.5 * (a + b)
    f_mid = f(mid)
    if a == lo and f(lo) <= f_mid:
        return lo, -1
    if b == hi and f(hi) <= f_mid:
        return hi, 1
    return mid, 0


def fit_temperature(val: Dataset) -> TemperatureMap:
    """Global temperature minimizing validation NLL.

    Golden-section search over log T in [log 0.05, log 20]; stops once the
    bracket is narrower than 1e-4 in log T.
    """
    _require(val)
    logits, labels = val.logits, val.labels
    u, bound = golden_section_min(
        lambda u: temperature_nll(logits, labels, math.exp(u)),
        math.log(T_MIN), math.log(T_MAX), LOG_T_TOL,
    )
    if bound:
        t = T_MIN if bound < 0 else T_MAX
        flag = "temperature_at_lower_bound" if bound < 0 else "temperature_at_upper_bound"
        warnings.warn(f"fitted temperature hit the search bound {t}", CalibrationWarning, stacklevel=2)
        return TemperatureMap(t, flags=(flag,))
    return TemperatureMap(math.exp(u))


def top_class_outcomes(ds: Dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top logit, raw top-class confidence and correctness for each record."""
    logits = ds.logits
    pred = argmax(logits, axis=-1)
    correct = (pred == ds.labels).astype(np.float64)
    return logits.max(axis=-1), softmax(logits).max(axis=-1), correct


def _platt_loglik(x, y, a, b) -> float:
    z = a * x + b
    return float(np.mean(y * z - np.logaddexp(0.0, z)))


def _clamp_platt(a: float, b: float) -> tuple[float, float]:
    if abs(a) > PLATT_CLAMP:
        scale = PLATT_CLAMP / abs(a)
        return math.copysign(PLATT_CLAMP, a), b * scale
    return a, max(-PLATT_CLAMP, min(PLATT_CLAMP, b))


def _separable(x, y) -> int:
    """+1 if correct top logits all exceed wrong ones, -1 for the reverse, else 0."""
    hit, miss = x[y == 1], x[y == 0]
    if hit.size == 0 or miss.size == 0:
        return 0
    if hit.min() > miss.max():
        return 1
    if hit.max() < miss.min():
        return -1
    return 0


def fit_platt(val: Dataset) -> PlattMap:
    """Logistic regression of top-1 correctness on the top logit.

    Damped Newton-Raphson from ``a = 0, b = logit(accuracy)``. Separable
    data has no finite optimum; the returned map then points along the
    separating direction with ``|a|`` (or ``|b|`` when every prediction
    agrees) clamped to 50, and carries a ``separable`` flag.
    """
    _require(val)
    x, _, y = top_class_outcomes(val)
    acc = float(y.mean())
    if acc in (0.0, 1.0):
        warnings.warn("all top-1 predictions share one outcome; Platt fit is degenerate",
                      CalibrationWarning, stacklevel=2)
        return PlattMap(0.0, PLATT_CLAMP if acc == 1.0 else -PLATT_CLAMP, flags=("separable",))
    side = _separable(x, y)
    if side:
        threshold = 0.5 * (x[y == 1].min() + x[y == 0].max()) if side > 0 else \
            0.5 * (x[y == 1].max() + x[y == 0].min())
        a = side * PLATT_CLAMP
        warnings.warn("correctness is perfectly separable by the top logit; clamping a to ±50",
                      CalibrationWarning, stacklevel=2)
        return PlattMap(a, -a * threshold, flags=("separable",))

    a, b = 0.0, math.log(acc / (1.0 - acc))
    ll = _platt_loglik(x, y, a, b)
    flags: tuple[str, ...] = ()
    for _ in range(PLATT_MAX_ITER):
        p = _sigmoid(a * x + b)
        r = y - p
        grad = np.array([np.mean(r * x), np.mean(r)])
        if np.linalg.norm(grad) < PLATT_GRAD_TOL:
            break
        w = p * (1.0 - p)
        hess = np.array([[np.mean(w * x * x), np.mean(w * x)],
                         [np.mean(w * x), np.mean(w)]])
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = grad
        scale = 1.0
        while True:
            a_new, b_new = a + scale * step[0], b + scale * step[1]
            ll_new = _platt_loglik(x, y, a_new, b_new)
            if ll_new >= ll or scale < 1e-10:
                break
            scale *= 0.5
        if ll_new < ll:
            break
        a, b, ll = a_new, b_new, ll_new
        if abs(a) > PLATT_CLAMP:
            break
    else:
        flags = ("not_converged",)
    if abs(a) > PLATT_CLAMP or abs(b) > PLATT_CLAMP:
        warnings.warn("Platt parameters diverged (quasi-separable data); clamped",
                      CalibrationWarning, stacklevel=2)
        a, b = _clamp_platt(a, b)
        flags = flags + ("separable",)
    return PlattMap(float(a), float(b), flags=flags)


def pava(values, weights=None) -> np.ndarray:
    """Weighted nondecreasing least-squares fit by pool-adjacent-violators."""
    y = np.asarray(values, dtype=np.float64)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=np.float64)
    # each block: [weighted sum, total weight, number of points]
    blocks: list[list[float]] = []
    for yi, wi in zip(y, w):
        blocks.append([yi * wi, wi, 1])
        while len(blocks) > 1 and blocks[-2][0] / blocks[-2][1] >= blocks[-1][0] / blocks[-1][1]:
            s, ww, n = blocks.pop()
            blocks[-1][0] += s
            blocks[-1][1] += ww
            blocks[-1][2] += n
    return np.concatenate([np.full(int(n), s / ww) for s, ww, n in blocks]) if blocks else y


def fit_isotonic(val: Dataset) -> IsotonicMap:
    """Monotone map from raw top-class confidence to top-1 accuracy."""
    _require(val)
    _, conf, correct = top_class_outcomes(val)
    xs, inverse, counts = np.unique(conf, return_inverse=True, return_counts=True)
    hits = np.bincount(inverse, weights=correct, minlength=xs.size)
    fitted = pava(hits / counts, counts)
    # one breakpoint per pooled block, at the block's lowest confidence
    starts = np.flatnonzero(np.r_[True, np.diff(fitted) != 0])
    bps = tuple((float(xs[i]), float(min(max(fitted[i], 0.0), 1.0))) for i in starts)
    return IsotonicMap(bps)


FITTERS = {"ts": fit_temperature, "platt": fit_platt, "isotonic": fit_isotonic}


def fit(method: str, val: Dataset) -> CalibrationMap:
    if method == "identity":
        return IdentityMap()
    try:
        fitter = FITTERS[method]
    except KeyError:
        raise ValueError(f"unknown calibration method {method!r}") from None
    return fitter(val)
