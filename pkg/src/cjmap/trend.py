"""Exponential growth-trend fitting for mapping counts."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass

from .errors import DegenerateData


@dataclass(frozen=True, slots=True)
class TrendFit:
    slope: float  # log2 mappings per unit of size
    intercept: float
    r_squared: float

    def extrapolate(self, size: float) -> float:
        """Predicted log2 mapping count at the given (effective) size."""
        return self.slope * size + self.intercept


def fit_trend(rows) -> TrendFit:
    """Ordinary least squares of log2(count) on size."""
    rows = [(int(s), int(c)) for s, c in rows]
    if any(c < 1 for _, c in rows):
        raise ValueError("counts must be >= 1")
    sizes = [s for s, _ in rows]
    logs = [math.log2(c) for _, c in rows]
    if len(set(sizes)) < 2:
        raise DegenerateData("need at least two distinct sizes")
    try:
        slope, intercept = statistics.linear_regression(sizes, logs)
    except statistics.StatisticsError as e:
        raise DegenerateData(str(e)) from None
    mean = statistics.fmean(logs)
    ss_tot = math.fsum((y - mean) ** 2 for y in logs)
    ss_res = math.fsum((y - (slope * x + intercept)) ** 2
                       for x, y in zip(sizes, logs))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - ss_res / ss_tot)
    return TrendFit(slope=slope, intercept=intercept, r_squared=r2)


def predict(fit: TrendFit, size: float, loss: float = 0.0) -> dict:
    """Evaluate the fitted line, optionally shrinking size by an
    anonymity-loss fraction first."""
    if not 0.0 <= loss < 1.0:
        raise ValueError("loss must be in [0, 1)")
    effective = size * (1.0 - loss)
    return {
        "size": size,
        "loss": loss,
        "effective_size": effective,
        "log2_count": fit.extrapolate(effective),
    }
