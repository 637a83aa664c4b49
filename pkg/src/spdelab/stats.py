"""Verification statistics: one-sample KS test against the standard normal,
moment summaries, and log-log slope fits for convergence rates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

__all__ = [
    "KsResult",
    "SlopeFit",
    "ks_test",
    "empirical_moments",
    "loglog_slope",
]


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    sample_size: int


@dataclass(frozen=True)
class SlopeFit:
    """Least-squares line through (log x, log y)."""

    slope: float
    intercept: float
    r_squared: float
    points: tuple[tuple[float, float], ...]


def _kolmogorov_sf(t: float, terms: int = 100) -> float:
    """Asymptotic survival function 2 sum_j (-1)^{j-1} exp(-2 j^2 t^2)."""
    if t <= 0.0:
        return 1.0
    total = 0.0
    for j in range(1, terms + 1):
        term = math.exp(-2.0 * j * j * t * t)
        if term == 0.0:
            break
        total += term if j % 2 else -term
    return min(1.0, max(0.0, 2.0 * total))


def ks_test(sample) -> KsResult:
    """Kolmogorov-Smirnov distance of a sample from the standard normal.

    The null is the fully specified N(0, 1) (no parameters estimated), so the
    p-value comes from the asymptotic Kolmogorov distribution at sqrt(n) * D.
    """
    xs = np.sort(np.asarray(sample, dtype=float))
    n = xs.size
    if n == 0:
        raise ValueError("ks_test needs a nonempty sample")
    cdf = ndtr(xs)
    grid = np.arange(1, n + 1) / n
    d_plus = float(np.max(grid - cdf))
    d_minus = float(np.max(cdf - (grid - 1.0 / n)))
    statistic = max(d_plus, d_minus)
    return KsResult(
        statistic=statistic,
        p_value=_kolmogorov_sf(math.sqrt(n) * statistic),
        sample_size=n,
    )


def empirical_moments(sample):
    """(mean, unbiased variance, skewness, kurtosis) of a sample.

    Skewness and kurtosis are the standardized central-moment ratios, so a
    normal sample has kurtosis near 3.  Kurtosis needs at least 4 points and
    is NaN below that; a constant sample has undefined (NaN) shape moments.
    """
    xs = np.asarray(sample, dtype=float)
    n = xs.size
    if n < 2:
        raise ValueError(f"need at least 2 samples, got {n}")
    mean = float(np.mean(xs))
    dev = xs - mean
    m2 = float(np.mean(dev**2))
    variance = m2 * n / (n - 1)
    if m2 == 0.0:
        skew = math.nan
        kurt = math.nan
    else:
        skew = float(np.mean(dev**3)) / m2**1.5
        kurt = float(np.mean(dev**4)) / m2**2 if n >= 4 else math.nan
    return mean, variance, skew, kurt


def loglog_slope(points) -> SlopeFit:
    """Fit y = C * x^slope by least squares in log-log coordinates."""
    pts = tuple((float(x), float(y)) for x, y in points)
    if len(pts) < 2:
        raise ValueError(f"need at least 2 points, got {len(pts)}")
    if any(x <= 0 or y <= 0 for x, y in pts):
        raise ValueError("all coordinates must be strictly positive")
    lx = np.log([p[0] for p in pts])
    ly = np.log([p[1] for p in pts])
    dx = lx - lx.mean()
    dy = ly - ly.mean()
    sxx = float(np.sum(dx * dx))
    if sxx == 0.0:
        raise ValueError("x coordinates are all equal; slope is undefined")
    slope = float(np.sum(dx * dy)) / sxx
    intercept = float(ly.mean() - slope * lx.mean())
    residuals = ly - (intercept + slope * lx)
    ss_res = float(np.sum(residuals**2))
    ss_tot = float(np.sum(dy * dy))
    r_squared = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return SlopeFit(slope=slope, intercept=intercept, r_squared=r_squared, points=pts)
