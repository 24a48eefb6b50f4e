"""Hysteretic Act/Hold gate with a refractory period on a millisecond clock.

Entering Act needs ``confidence >= tau_on``; leaving it needs
``confidence < tau_off``. With ``tau_on == tau_off`` and no refractory
period the gate is the plain rule ``Act <=> confidence >= tau``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .datamodel import atomic_write_text

DEFAULT_BAND = 0.05
DEFAULT_REFRACTORY_MS = 200


class Mode(str, Enum):
    HOLD = "Hold"
    ACT = "Act"


class GateError(ValueError):
    pass


@dataclass(frozen=True)
class GateConfig:
    tau_on: float
    tau_off: float
    refractory_ms: int = 0

    def __post_init__(self):
        if not (0.0 <= self.tau_off <= 1.0 and 0.0 <= self.tau_on <= 1.0):
            raise GateError("thresholds must lie in [0, 1]")
        if self.tau_on < self.tau_off:
            raise GateError(f"tau_on ({self.tau_on}) must be >= tau_off ({self.tau_off})")
        if self.refractory_ms < 0:
            raise GateError("refractory_ms must be nonnegative")

    @classmethod
    def around(cls, tau: float, band: float = DEFAULT_BAND,
               refractory_ms: int = DEFAULT_REFRACTORY_MS) -> GateConfig:
        """Thresholds ``tau +/- band`` clipped to [0, 1]."""
        return cls(min(1.0, tau + band), max(0.0, tau - band), refractory_ms)


@dataclass(frozen=True)
class GateState:
    mode: Mode = Mode.HOLD
    last_transition_ms: int | None = None
    last_t_ms: int | None = None


@dataclass(frozen=True)
class GateEvent:
    t_ms: int
    confidence_in: float
    mode_out: Mode
    transitioned: bool
    suppressed_by_refractory: bool


def step(state: GateState, config: GateConfig, t_ms: int,
         confidence: float) -> tuple[GateState, GateEvent]:
    if state.last_t_ms is not None and t_ms <= state.last_t_ms:
        raise GateError(f"t_ms {t_ms} does not advance past {state.last_t_ms}")
    if not 0.0 <= confidence <= 1.0:
        raise GateError(f"confidence {confidence} outside [0, 1]")
    mode = state.mode
    if mode is Mode.HOLD and confidence >= config.tau_on:
        desired = Mode.ACT
    elif mode is Mode.ACT and confidence < config.tau_off:
        desired = Mode.HOLD
    else:
        desired = mode
    last = state.last_transition_ms
    transitioned = suppressed = False
    if desired is not mode:
        if last is None or t_ms - last >= config.refractory_ms:
            mode, last, transitioned = desired, t_ms, True
        else:
            suppressed = True
    return (
        GateState(mode, last, t_ms),
        GateEvent(t_ms, confidence, mode, transitioned, suppressed),
    )


def run_gate(config: GateConfig, trace: Iterable[tuple[int, float]]) -> list[GateEvent]:
    """Fold ``step`` over ``(t_ms, confidence)`` pairs from an initial Hold."""
    state = GateState()
    events = []
    for t_ms, confidence in trace:
        state, event = step(state, config, t_ms, confidence)
        events.append(event)
    return events


def count_transitions(events: Sequence[GateEvent]) -> int:
    return sum(e.transitioned for e in events)


def events_csv(events: Sequence[GateEvent]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t_ms", "confidence", "mode", "transitioned", "suppressed"])
    for e in events:
        w.writerow([e.t_ms, repr(e.confidence_in), e.mode_out.value,
                    str(e.transitioned).lower(), str(e.suppressed_by_refractory).lower()])
    return buf.getvalue()


def save_events(events: Sequence[GateEvent], path) -> None:
    atomic_write_text(path, events_csv(events))
