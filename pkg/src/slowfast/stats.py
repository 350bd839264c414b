"""Small statistical helpers shared by the diagnostics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class PowerFit:
    slope: float
    intercept: float
    r2: float


def rate_fit(x, y) -> PowerFit:
    """Least-squares line through ``(log x, log y)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 3:
        raise ConfigurationError("rate fit needs at least three matching points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ConfigurationError("rate fit needs strictly positive values")
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return PowerFit(float(slope), float(intercept), float(r2))


def mean_se(samples, axis: int = 0):
    """Sample mean and its standard error along ``axis``."""
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[axis]
    if n < 2:
        return samples.mean(axis=axis), np.zeros_like(samples.mean(axis=axis))
    return samples.mean(axis=axis), samples.std(axis=axis, ddof=1) / np.sqrt(n)
