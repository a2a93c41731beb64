"""Pearson correlation with a t-test, and per-race Z-score standardization."""

from __future__ import annotations

import math
from typing import Hashable, Mapping, Sequence

import numpy as np

from .distributions import student_t_two_sided


def pearson(x: Sequence[float], y: Sequence[float]) -> tuple[float, float, int]:
    """Sample correlation ``r``, its two-sided p-value (t with n-2 df) and ``n``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D vectors of equal length")
    n = x.shape[0]
    if n < 3:
        raise ValueError("need at least 3 pairs")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise ValueError("correlation undefined for a constant vector")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0, n
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return r, student_t_two_sided(t, n - 2), n


def zscores(times: Mapping[Hashable, float]) -> dict[Hashable, float]:
    """Z scores of one race's finish times, using the sample (n-1) standard deviation."""
    if len(times) < 2:
        raise ValueError("a race needs at least two finishers")
    vals = np.array(list(times.values()), dtype=float)
    sd = float(np.std(vals, ddof=1))
    if sd == 0:
        raise ValueError("zero within-race standard deviation")
    mean = float(np.mean(vals))
    return {k: (float(v) - mean) / sd for k, v in times.items()}


def standardize_times(
    race_times: Mapping[Hashable, Mapping[Hashable, float]],
) -> dict[Hashable, float]:
    """Standardized best per skater: the lowest Z score across their races."""
    best: dict[Hashable, float] = {}
    for times in race_times.values():
        for skater, z in zscores(times).items():
            best[skater] = min(z, best.get(skater, math.inf))
    return best
