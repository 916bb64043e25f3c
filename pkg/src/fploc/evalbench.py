"""Accuracy metrics and the timing harness for positioning runs.

Circular error percentiles use the nearest-rank definition: CEp is the
p-th percentile as the smallest radius containing at least p% of the
errors, i.e. the ceil(p * N / 100)-th smallest error. Positioning time is
measured with a monotonic clock around the position call only (no I/O),
after a short warm-up.
"""

from __future__ import annotations

import gc
import math
import time
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from .bundle import PrecomputedBundle
from .errors import FplocError
from .locate import online_position
from .model import LabeledSample

CSV_HEADER = (
    "method,selector,m,h,mean_time_s,ce50_m,ce75_m,ce90_m,large_error_pct,fallback_pct"
)

WARMUP_QUERIES = 5


@dataclass(frozen=True)
class EvalReport:
    """One benchmark row: a (method, m, h) configuration and its metrics."""

    method: str
    selector: str
    m: int
    h: int
    mean_time_s: float
    ce50: float
    ce75: float
    ce90: float
    large_error_ratio: float
    fallback_ratio: float

    def __post_init__(self) -> None:
        if not self.ce50 <= self.ce75 <= self.ce90:
            raise ValueError("circular errors must be non-decreasing in percentile")
        if not 0.0 <= self.large_error_ratio <= 1.0:
            raise ValueError("large_error_ratio must lie in [0, 1]")

    def csv_row(self) -> str:
        return (
            f"{self.method},{self.selector},{self.m},{self.h},"
            f"{self.mean_time_s:.6g},{self.ce50:.4g},{self.ce75:.4g},"
            f"{self.ce90:.4g},{100.0 * self.large_error_ratio:.4g},"
            f"{100.0 * self.fallback_ratio:.4g}"
        )


def circular_error(errors: Sequence[float], percentile: int) -> float:
    """Nearest-rank percentile: the ceil(p*N/100)-th smallest error.

    Raises:
        FplocError("empty-errors"): no errors given.
    """
    if len(errors) == 0:
        raise FplocError("empty-errors", "cannot take a percentile of no errors")
    if not 0 < percentile <= 100:
        raise ValueError(f"percentile must lie in (0, 100], got {percentile}")
    ordered = sorted(errors)
    rank = -(-percentile * len(ordered) // 100)  # ceil for integer arguments
    return ordered[rank - 1]


def large_error_ratio(errors: Sequence[float], threshold: float = 10.0) -> float:
    """Fraction of errors strictly exceeding the threshold (metres)."""
    if len(errors) == 0:
        raise FplocError("empty-errors", "cannot take a ratio of no errors")
    return sum(1 for e in errors if e > threshold) / len(errors)


def run_benchmark(
    bundle: PrecomputedBundle,
    test_set: Sequence[LabeledSample],
    configs: Iterable[tuple[str, int, int]],
    warmup: int = WARMUP_QUERIES,
) -> list[EvalReport]:
    """Time and score each (method, m, h) configuration over the test set.

    Rows come back sorted by method then (m, h). Fallback estimates count
    toward the error statistics and are reported as a rate.
    """
    if not test_set:
        raise FplocError("empty-errors", "test set is empty")
    selector = bundle.selector.search
    reports = []
    for method, m, h in sorted(configs):
        for sample in test_set[: min(warmup, len(test_set))]:
            online_position(sample.fingerprint, bundle, m=m, h=h, method=method)
        errors = []
        times = []
        fallbacks = 0
        gc_was_enabled = gc.isenabled()
        gc.disable()  # keep collector pauses out of the per-query timings
        try:
            for sample in test_set:
                start = time.perf_counter()
                estimate = online_position(
                    sample.fingerprint, bundle, m=m, h=h, method=method
                )
                times.append(time.perf_counter() - start)
                dx = estimate.position[0] - sample.location[0]
                dy = estimate.position[1] - sample.location[1]
                errors.append(math.hypot(dx, dy))
                fallbacks += estimate.fallback
        finally:
            if gc_was_enabled:
                gc.enable()
        reports.append(
            EvalReport(
                method=method,
                selector=selector,
                m=m,
                h=h,
                mean_time_s=float(np.mean(times)),
                ce50=circular_error(errors, 50),
                ce75=circular_error(errors, 75),
                ce90=circular_error(errors, 90),
                large_error_ratio=large_error_ratio(errors),
                fallback_ratio=fallbacks / len(test_set),
            )
        )
    return reports


def write_report_csv(fh: TextIO, reports: Sequence[EvalReport]) -> None:
    fh.write(CSV_HEADER + "\n")
    for report in reports:
        fh.write(report.csv_row() + "\n")
