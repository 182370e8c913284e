"""Experiment orchestration, measurement CSVs and scaling reports."""

from .report import REFERENCE_RATIOS, RatioCheck, scaling_report
from .runner import (
    CSV_COLUMNS,
    PHASES,
    ExperimentResult,
    LaunchError,
    MeasurementRow,
    expected_network_ms,
    latency_injection,
    read_csv,
    run_experiment,
    write_csv,
)
from .spec import ExperimentSpec, FaultSpec, LatencySpec, load_spec

__all__ = [
    "CSV_COLUMNS",
    "PHASES",
    "REFERENCE_RATIOS",
    "ExperimentResult",
    "ExperimentSpec",
    "FaultSpec",
    "LatencySpec",
    "LaunchError",
    "MeasurementRow",
    "RatioCheck",
    "expected_network_ms",
    "latency_injection",
    "load_spec",
    "read_csv",
    "run_experiment",
    "scaling_report",
    "write_csv",
]
