"""Ratio tables across runs at different database sizes and difficulties."""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from typing import Iterable

from .runner import MeasurementRow


@dataclass(frozen=True)
class ReferenceRatio:
    metric: str           # phase name, or "bytes" for total communication
    axis: str             # "db_rows" or "kappa"
    numerator: int
    denominator: int
    expected: float
    low: float            # accepted band for the measured ratio
    high: float


# Published measurements this implementation is compared against, as ratios.
REFERENCE_RATIOS: tuple[ReferenceRatio, ...] = (
    ReferenceRatio("pow", "kappa", 18, 14, 91.7 / 5.73, 8.0, 32.0),
    ReferenceRatio("bytes", "db_rows", 1 << 12, 1 << 10, 25.99 / 12.98, 2.0 * 0.75, 2.0 * 1.25),
    ReferenceRatio("respond", "db_rows", 1 << 17, 1 << 10, 109.9 / 2.3, 1.0, float("inf")),
    ReferenceRatio("setup", "db_rows", 1 << 17, 1 << 10, 31.0 / 0.031, 1.0, float("inf")),
)


@dataclass(frozen=True)
class RatioCheck:
    metric: str
    axis: str
    numerator: int
    denominator: int
    measured: float
    expected: float | None
    within: bool | None

    def as_dict(self) -> dict:
        return {
            "metric": self.metric,
            "axis": self.axis,
            "numerator": self.numerator,
            "denominator": self.denominator,
            "measured": self.measured,
            "expected": self.expected,
            "within": self.within,
        }


def _metric(rows: list[MeasurementRow], metric: str) -> float | None:
    if metric == "bytes":
        vals = [r.bytes_sent + r.bytes_received for r in rows if r.phase == "respond"]
    else:
        vals = [r.value_ms for r in rows if r.phase == metric]
    return statistics.fmean(vals) if vals else None


def _group(rows: Iterable[MeasurementRow], axis: str) -> dict[int, list[MeasurementRow]]:
    out: dict[int, list[MeasurementRow]] = {}
    for r in rows:
        out.setdefault(getattr(r, axis), []).append(r)
    return out


def scaling_report(runs: Iterable[Iterable[MeasurementRow]], metrics: tuple[str, ...] = ("respond", "bytes", "pow", "setup")) -> list[RatioCheck]:
    """
    Ratios of per-size (and per-difficulty) means. Every known reference
    ratio whose two operands are present is checked against its band; all
    other pairs are reported relative to the smallest setting with no
    reference. With a single setting every ratio is 1.
    """
    rows = [r for run in runs for r in run]
    checks: list[RatioCheck] = []
    seen: set[tuple] = set()
    for axis in ("db_rows", "kappa"):
        groups = _group(rows, axis)
        for ref in REFERENCE_RATIOS:
            if ref.axis != axis or ref.numerator not in groups or ref.denominator not in groups:
                continue
            num, den = _metric(groups[ref.numerator], ref.metric), _metric(groups[ref.denominator], ref.metric)
            if num is None or not den:
                continue
            measured = num / den
            checks.append(RatioCheck(ref.metric, axis, ref.numerator, ref.denominator, measured, ref.expected,
                                     ref.low <= measured <= ref.high))
            seen.add((ref.metric, axis, ref.numerator, ref.denominator))
        base = min(groups) if groups else None
        for value in sorted(groups):
            for metric in metrics:
                key = (metric, axis, value, base)
                if key in seen:
                    continue
                num, den = _metric(groups[value], metric), _metric(groups[base], metric)
                if num is None or not den:
                    continue
                checks.append(RatioCheck(metric, axis, value, base, num / den, None, None))
    return checks
