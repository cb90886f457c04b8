"""Normality and correlation statistics used by the spectral diagnostics."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr, ndtri

__all__ = [
    "shapiro_wilk",
    "skewness",
    "excess_kurtosis",
    "average_ranks",
    "pearson",
    "spearman",
]

# Royston (1992/1995) polynomial corrections for the two extreme coefficients.
_C1 = (0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056)
_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582663)


def _poly(coef, x: float) -> float:
    return sum(c * x**i for i, c in enumerate(coef))


def _coefficients(n: int) -> np.ndarray:
    if n == 3:
        s = math.sqrt(0.5)
        return np.array([-s, 0.0, s])
    i = np.arange(1, n + 1)
    m = ndtri((i - 0.375) / (n + 0.25))
    mm = float(m @ m)
    c = m / math.sqrt(mm)
    u = 1.0 / math.sqrt(n)
    a = np.zeros(n)
    an = c[-1] + _poly(_C1, u)
    a[-1], a[0] = an, -an
    if n > 5:
        an1 = c[-2] + _poly(_C2, u)
        a[-2], a[1] = an1, -an1
        phi = (mm - 2 * m[-1] ** 2 - 2 * m[-2] ** 2) / (1 - 2 * an**2 - 2 * an1**2)
        a[2:-2] = m[2:-2] / math.sqrt(phi)
    else:
        phi = (mm - 2 * m[-1] ** 2) / (1 - 2 * an**2)
        a[1:-1] = m[1:-1] / math.sqrt(phi)
    return a


def shapiro_wilk(values) -> tuple[float, float]:
    """Shapiro-Wilk W and its p-value via Royston's normal approximation.

    Valid for 3 <= n <= 5000.  Raises ValueError on constant input.
    """
    x = np.sort(np.asarray(values, dtype=np.float64).ravel())
    n = x.size
    if n < 3:
        raise ValueError("Shapiro-Wilk needs at least 3 values")
    if n > 5000:
        raise ValueError("Royston's approximation is only valid up to n = 5000; subsample first")
    centered = x - x.mean()
    ss = float(centered @ centered)
    if ss <= 0.0 or x[-1] - x[0] < 1e-300:
        raise ValueError("Shapiro-Wilk is undefined for constant input")
    a = _coefficients(n)
    w = float(a @ x) ** 2 / ss
    w = min(w, 1.0)

    if n == 3:
        p = 6.0 / math.pi * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75)))
        return w, float(min(max(p, 0.0), 1.0))
    one_minus = max(1.0 - w, 1e-300)
    if n <= 11:
        gamma = 0.459 * n - 2.273
        mu = 0.544 - 0.39978 * n + 0.025054 * n**2 - 0.0006714 * n**3
        sigma = math.exp(1.3822 - 0.77857 * n + 0.062767 * n**2 - 0.0020322 * n**3)
        arg = gamma - math.log(one_minus)
        if arg <= 0:
            return w, 0.0
        z = (-math.log(arg) - mu) / sigma
    else:
        ln = math.log(n)
        mu = -1.5861 - 0.31082 * ln - 0.083751 * ln**2 + 0.0038915 * ln**3
        sigma = math.exp(-0.4803 - 0.082676 * ln + 0.0030302 * ln**2)
        z = (math.log(one_minus) - mu) / sigma
    return w, float(ndtr(-z))  # upper tail without cancellation


def _central_moments(values) -> tuple[np.ndarray, float]:
    x = np.asarray(values, dtype=np.float64).ravel()
    d = x - x.mean()
    return d, float(np.mean(d * d))


def skewness(values) -> float:
    """Sample skewness g1 = m3 / m2^(3/2); 0 for constant input."""
    d, m2 = _central_moments(values)
    if m2 == 0.0:
        return 0.0
    return float(np.mean(d**3) / m2**1.5)


def excess_kurtosis(values) -> float:
    """Fisher excess kurtosis g2 = m4 / m2^2 - 3 (normal gives 0)."""
    d, m2 = _central_moments(values)
    if m2 == 0.0:
        return 0.0
    return float(np.mean(d**4) / m2**2 - 3.0)


def average_ranks(values) -> np.ndarray:
    """1-based ranks, ties sharing the mean of the ranks they span."""
    x = np.asarray(values, dtype=np.float64).ravel()
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size)
    sx = x[order]
    start = 0
    while start < x.size:
        stop = start + 1
        while stop < x.size and sx[stop] == sx[start]:
            stop += 1
        ranks[order[start:stop]] = 0.5 * (start + stop - 1) + 1.0
        start = stop
    return ranks


def _paired(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ValueError(f"sequences differ in length: {a.size} vs {b.size}")
    if a.size < 3:
        raise ValueError("correlation needs at least 3 points")
    return a, b


def pearson(a, b) -> float:
    a, b = _paired(a, b)
    da, db = a - a.mean(), b - b.mean()
    sa, sb = float(da @ da), float(db @ db)
    if sa == 0.0 or sb == 0.0:
        raise ValueError("correlation is undefined for a constant sequence")
    r = float(da @ db) / math.sqrt(sa * sb)
    return max(-1.0, min(1.0, r))


def spearman(a, b) -> float:
    a, b = _paired(a, b)
    return pearson(average_ranks(a), average_ranks(b))
