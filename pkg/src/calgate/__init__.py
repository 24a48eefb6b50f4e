"""Calibrated confidences, selective prediction and a hysteretic Act/Hold gate."""

from .calibration import (
    CalibratedPrediction,
    CalibrationMap,
    IdentityMap,
    IsotonicMap,
    PlattMap,
    TemperatureMap,
    apply,
    fit_isotonic,
    fit_platt,
    fit_temperature,
)
from .datamodel import Dataset, LogitRecord, ProbRecord, StreamSequence, load_dataset, save_dataset
from .gate import GateConfig, GateState, Mode, run_gate, step
from .metrics import ReliabilityReport, report
from .selective import SweepCurve, SweepPoint, operating_points, sweep
from .simulator import SimConfig, SimResult, simulate_stream, simulate_sweep
from .synth import SynthConfig, generate, generate_uncalibrated_fixture

__version__ = "0.1.0"

__all__ = [
    "CalibratedPrediction", "CalibrationMap", "IdentityMap", "IsotonicMap", "PlattMap",
    "TemperatureMap", "apply", "fit_isotonic", "fit_platt", "fit_temperature",
    "Dataset", "LogitRecord", "ProbRecord", "StreamSequence", "load_dataset", "save_dataset",
    "GateConfig", "GateState", "Mode", "run_gate", "step",
    "ReliabilityReport", "report",
    "SweepCurve", "SweepPoint", "operating_points", "sweep",
    "SimConfig", "SimResult", "simulate_stream", "simulate_sweep",
    "SynthConfig", "generate", "generate_uncalibrated_fixture",
]
