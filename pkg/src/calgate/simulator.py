"""Offline closed-loop replay: smoothing, top-k filter, calibration and the
Act/Hold gate, stepped once per record along each stream.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .calibration import CalibrationMap, IdentityMap
from .datamodel import Dataset, StreamSequence, atomic_write_text
from .gate import GateConfig, GateEvent, GateState, Mode, step
from .modelmath import softmax

DEFAULT_ALPHA = 0.2
DEFAULT_TOPK = 3


@dataclass(frozen=True)
class SimConfig:
    alpha: float = DEFAULT_ALPHA
    k_filter: int = DEFAULT_TOPK
    gate: GateConfig = field(default_factory=lambda: GateConfig(0.5, 0.5, 0))
    map: CalibrationMap = field(default_factory=IdentityMap)

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.k_filter < 1:
            raise ValueError("k_filter must be >= 1")


@dataclass(frozen=True)
class TickRecord:
    stream_id: str
    candidate: int
    label: int
    eligible: bool
    event: GateEvent


@dataclass(frozen=True)
class SimResult:
    tau_on: float
    tau_off: float
    n_ticks: int
    n_act: int
    n_correct: int
    transitions: int
    trace: tuple[TickRecord, ...] | None = None

    @property
    def coverage(self) -> float:
        return self.n_act / self.n_ticks if self.n_ticks else 0.0

    @property
    def act_only_precision(self) -> float | None:
        return self.n_correct / self.n_act if self.n_act else None

    def __add__(self, other: SimResult) -> SimResult:
        trace = None
        if self.trace is not None or other.trace is not None:
            trace = (self.trace or ()) + (other.trace or ())
        return SimResult(self.tau_on, self.tau_off, self.n_ticks + other.n_ticks,
                         self.n_act + other.n_act, self.n_correct + other.n_correct,
                         self.transitions + other.transitions, trace)


def _check_distribution(p: np.ndarray) -> None:
    if p.ndim != 1 or not np.all(np.isfinite(p)) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("expected a probability vector")


def _smooth(prev, current, alpha):
    if prev is None:
        return current
    s = alpha * current + (1.0 - alpha) * prev
    total = s.sum()
    # analytically already normalized; only correct accumulated drift
    if abs(total - 1.0) > 1e-12:
        s = s / total
    return s


def smooth_step(prev, current, alpha: float) -> np.ndarray:
    """Exponential smoothing ``alpha * current + (1 - alpha) * prev``."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    current = np.asarray(current, dtype=np.float64)
    _check_distribution(current)
    if prev is not None:
        prev = np.asarray(prev, dtype=np.float64)
        _check_distribution(prev)
        if prev.shape != current.shape:
            raise ValueError("prev and current differ in length")
    return _smooth(prev, current, alpha)


def _in_top_k(p: np.ndarray, cls: int, k: int) -> bool:
    """``cls`` ranks among the ``k`` largest entries (ties to the lowest index)."""
    v = p[cls]
    ahead = np.count_nonzero(p > v) + np.count_nonzero(p[:cls] == v)
    return ahead < k


def _clip01(x: float) -> float:
    return 0.0 if x < 0.0 else 1.0 if x > 1.0 else x


class _TickPipeline:
    """Per-stream smoothing + top-k filter + calibration state.

    Maps that define a full distribution (identity, temperature) calibrate
    the logits first and smooth the calibrated distribution. Top-class maps
    (Platt, isotonic) smooth the raw distribution and calibrate its top
    class.
    """

    def __init__(self, cfg: SimConfig, k: int):
        if cfg.k_filter > k:
            raise ValueError(f"k_filter {cfg.k_filter} exceeds K={k}")
        self.cfg = cfg
        self.k = k
        self.full = cfg.map.has_full_probs
        self.smoothed = None

    def distributions(self, logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Raw and to-be-smoothed probabilities for a block of logits."""
        raw = softmax(logits)
        return raw, (self.cfg.map.probs(logits) if self.full else raw)

    def tick(self, raw: np.ndarray, dist: np.ndarray) -> tuple[int, bool, float]:
        cfg = self.cfg
        self.smoothed = _smooth(self.smoothed, dist, cfg.alpha)
        candidate = int(np.argmax(self.smoothed))
        eligible = cfg.k_filter >= self.k or _in_top_k(raw, candidate, cfg.k_filter)
        if not eligible:
            return candidate, False, 0.0
        if self.full:
            conf = float(np.max(self.smoothed))
        else:
            conf = cfg.map.confidence_from_probs(self.smoothed)
        return candidate, True, _clip01(conf)


def simulate_stream(seq: StreamSequence, cfg: SimConfig, keep_trace: bool = False) -> SimResult:
    """Replay one stream through smoothing, the top-k filter and the gate.

    A tick is covered when the gate is in Act after stepping, and correct
    when the smoothed argmax equals the label.
    """
    logits = np.array([r.logits for r in seq.records], dtype=np.float64)
    pipe = _TickPipeline(cfg, logits.shape[1])
    raw, dist = pipe.distributions(logits)
    state = GateState()
    n_act = n_correct = transitions = 0
    trace = [] if keep_trace else None
    for rec, p, q in zip(seq.records, raw, dist):
        candidate, eligible, conf = pipe.tick(p, q)
        state, event = step(state, cfg.gate, rec.t_ms, conf)
        transitions += event.transitioned
        if state.mode is Mode.ACT:
            n_act += 1
            n_correct += candidate == rec.label
        if trace is not None:
            trace.append(TickRecord(seq.stream_id, candidate, rec.label, eligible, event))
    return SimResult(cfg.gate.tau_on, cfg.gate.tau_off, len(seq.records), n_act, n_correct,
                     transitions, None if trace is None else tuple(trace))


def simulate_dataset(ds: Dataset, cfg: SimConfig, keep_trace: bool = False) -> SimResult:
    """Run every stream with a fresh gate and pool the tick counts."""
    total = SimResult(cfg.gate.tau_on, cfg.gate.tau_off, 0, 0, 0, 0, () if keep_trace else None)
    for seq in ds.streams():
        total = total + simulate_stream(seq, cfg, keep_trace)
    return total


def simulate_sweep(ds: Dataset, cfg_base: SimConfig, taus: Sequence[float],
                   band: float | None = None, keep_trace: bool = False) -> list[tuple[float, SimResult]]:
    """Closed-loop coverage and precision for each threshold.

    Without ``band`` the gate uses ``tau_on = tau_off = tau``; otherwise
    ``tau +/- band``. The refractory period comes from ``cfg_base.gate``.
    """
    if len(ds) == 0:
        raise ValueError("cannot simulate an empty dataset")
    refractory = cfg_base.gate.refractory_ms
    out = []
    for tau in taus:
        if band:
            gate = GateConfig.around(tau, band, refractory)
        else:
            gate = GateConfig(tau, tau, refractory)
        out.append((tau, simulate_dataset(ds, replace(cfg_base, gate=gate), keep_trace)))
    return out


def sweep_csv(rows: Sequence[tuple[float, SimResult]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tau", "coverage", "precision", "transitions"])
    for tau, res in rows:
        prec = res.act_only_precision
        w.writerow([repr(tau), repr(res.coverage), "" if prec is None else repr(prec), res.transitions])
    return buf.getvalue()


def trace_csv(ticks: Sequence[TickRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["stream_id", "t_ms", "confidence", "mode", "transitioned", "suppressed",
                "candidate", "label", "eligible"])
    for t in ticks:
        e = t.event
        w.writerow([t.stream_id, e.t_ms, repr(e.confidence_in), e.mode_out.value,
                    str(e.transitioned).lower(), str(e.suppressed_by_refractory).lower(),
                    t.candidate, t.label, str(t.eligible).lower()])
    return buf.getvalue()


def save_sweep(rows, path) -> None:
    atomic_write_text(path, sweep_csv(rows))


def benchmark_tick_latency(cfg: SimConfig, k: int = 21, n_ticks: int = 100_000,
                           seed: int = 0) -> tuple[float, float]:
    """Mean and 99th-percentile wall time (microseconds) of one full tick.

    A tick is softmax, smoothing, top-k check, calibration and a gate step
    on random logits.
    """
    if n_ticks < 1000:
        raise ValueError("n_ticks must be >= 1000")
    rng = np.random.default_rng(seed)
    logits = rng.normal(0.0, 2.0, size=(n_ticks, k))
    cfg = replace(cfg, k_filter=min(cfg.k_filter, k))
    pipe = _TickPipeline(cfg, k)
    state = GateState()
    samples = np.empty(n_ticks)
    clock = time.perf_counter_ns
    for i in range(n_ticks):
        t0 = clock()
        raw, dist = pipe.distributions(logits[i])
        _, _, conf = pipe.tick(raw, dist)
        state, _ = step(state, cfg.gate, 40 * i, conf)
        samples[i] = clock() - t0
    samples /= 1000.0
    return float(samples.mean()), float(np.percentile(samples, 99))
