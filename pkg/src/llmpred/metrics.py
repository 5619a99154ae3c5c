"""Forecast error metrics."""
import numpy as np

from .errors import DimensionMismatch, EmptySample


def _pair(a, b):
    a = np.asarray(getattr(a, "values", a), dtype=float).ravel()
    b = np.asarray(getattr(b, "values", b), dtype=float).ravel()
    if a.size == 0 or a.size != b.size:
        raise DimensionMismatch(f"need equal non-zero lengths, got {a.size} and {b.size}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def mae(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov distance sup_x |F_a(x) - F_b(x)|.

    Both ECDFs are right-continuous, so evaluating at every pooled sample
    point attains the supremum.
    """
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise EmptySample("KS statistic needs two non-empty samples")
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))
