"""Trial measurements: edit distances, image error, and their aggregation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyInput


@dataclass(frozen=True)
class MetricBundle:
    """Per-trial measurements against the attack target."""

    l_full: int           # edit distance, target vs full-pipeline output
    l_crop: int           # edit distance, target vs crop-level output
    mse_full: float       # mean squared error over the whole document
    elapsed_seconds: float


@dataclass(frozen=True)
class SummaryRow:
    """Arithmetic means over every trial of one method, failures included."""

    success_rate: float
    mean_l_full: float
    mean_l_crop: float
    mean_mse: float
    mean_time_s: float


def levenshtein(a: str, b: str) -> int:
    """Minimal number of single-character inserts, deletes and substitutions."""
    if a == b:
        return 0
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cost = 0 if ca == cb else 1
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost))
        prev = cur
    return prev[-1]


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean over all pixels of the squared intensity difference."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(d * d))


def aggregate(outcomes) -> SummaryRow:
    """Means over all outcomes (successes and failures alike)."""
    if not outcomes:
        raise EmptyInput("no outcomes to aggregate")
    n = len(outcomes)
    return SummaryRow(
        success_rate=sum(o.success for o in outcomes) / n,
        mean_l_full=sum(o.metrics.l_full for o in outcomes) / n,
        mean_l_crop=sum(o.metrics.l_crop for o in outcomes) / n,
        mean_mse=sum(o.metrics.mse_full for o in outcomes) / n,
        mean_time_s=sum(o.metrics.elapsed_seconds for o in outcomes) / n,
    )
