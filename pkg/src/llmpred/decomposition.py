"""Low/high frequency split with cutoff search.

The low component is a zero-phase Butterworth low-pass of the input; the
high component is the exact residual, so the two always sum back to the
input. The cutoff is chosen over a fixed grid by minimizing

    m = alpha * MSE(x, low) + (1 - alpha) / cos(x, high)
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import signal

from .errors import AllCandidatesDegenerate, DegenerateCosine, InvalidCutoff, SeriesTooShort

DEFAULT_GRID = (2.5, 5.0, 7.5, 10.0, 12.5, 15.0)
DEFAULT_ALPHA = 0.7
COS_EPS = 1e-9
# high components smaller than this (relative to the input norm) are treated as zero
HIGH_NORM_EPS = 1e-9


@dataclass(frozen=True)
class FilterSpec:
    cutoff_hz: float
    sample_rate_hz: float = 100.0
    order: int = 4
    zero_phase: bool = True

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise InvalidCutoff(f"sample rate must be positive, got {self.sample_rate_hz}")
        if self.order < 1:
            raise ValueError("filter order must be >= 1")
        nyq = self.sample_rate_hz / 2
        if not 0 < self.cutoff_hz < nyq:
            raise InvalidCutoff(f"cutoff {self.cutoff_hz} Hz outside (0, {nyq}) Hz")

    @property
    def pad(self) -> int:
        return 3 * self.order

    def sos(self) -> np.ndarray:
        return signal.butter(
            self.order, self.cutoff_hz, btype="lowpass", fs=self.sample_rate_hz, output="sos"
        )


@dataclass
class FrequencySplit:
    low: np.ndarray
    high: np.ndarray
    f_cut: float
    alpha: float
    trace: list = field(default_factory=list)  # (f, m_mse, m_cos, m); degenerate rows carry None

    def to_dict(self) -> dict:
        return {
            "low": self.low.tolist(),
            "high": self.high.tolist(),
            "f_cut": self.f_cut,
            "alpha": self.alpha,
            "trace": [list(t) for t in self.trace],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FrequencySplit":
        return cls(
            np.asarray(d["low"], dtype=float),
            np.asarray(d["high"], dtype=float),
            d["f_cut"],
            d["alpha"],
            [tuple(t) for t in d["trace"]],
        )


def butterworth_lowpass(s, spec: FilterSpec) -> np.ndarray:
    x = np.asarray(getattr(s, "values", s), dtype=float)
    if x.size < spec.pad:
        raise SeriesTooShort(f"need at least {spec.pad} samples for order {spec.order}")
    sos = spec.sos()
    if not spec.zero_phase:
        zi = signal.sosfilt_zi(sos) * x[0]
        y, _ = signal.sosfilt(sos, x, zi=zi)
        return y
    p = spec.pad
    padded = np.pad(x, p, mode="reflect")
    # padtype=None: the reflect padding above replaces scipy's own edge extension
    y = signal.sosfiltfilt(sos, padded, padtype=None)
    return y[p:-p]


def decompose_at(s, spec: FilterSpec):
    x = np.asarray(getattr(s, "values", s), dtype=float)
    low = butterworth_lowpass(x, spec)
    return low, x - low


def weighted_metric(m_mse: float, m_cos: float, alpha: float) -> float:
    if m_cos <= COS_EPS:
        raise DegenerateCosine(f"cosine similarity {m_cos} <= {COS_EPS}")
    return alpha * m_mse + (1 - alpha) * (1 / m_cos)


def _cosine(x: np.ndarray, high: np.ndarray) -> float:
    nx = np.linalg.norm(x)
    nh = np.linalg.norm(high)
    if nx == 0 or nh <= HIGH_NORM_EPS * nx:
        return 0.0
    return float(np.dot(x, high) / (nx * nh))


def select_cutoff(
    s,
    grid: Sequence[float] = DEFAULT_GRID,
    alpha: float = DEFAULT_ALPHA,
    spec_defaults: FilterSpec | None = None,
) -> FrequencySplit:
    """Evaluate every grid cutoff and keep the split with the smallest metric.

    Candidates whose high component is (numerically) zero or not positively
    aligned with the input are skipped. Ties go to the lowest frequency.
    """
    if not len(grid):
        raise ValueError("frequency grid is empty")
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    x = np.asarray(getattr(s, "values", s), dtype=float)
    base = spec_defaults or FilterSpec(cutoff_hz=min(grid))
    specs = [replace(base, cutoff_hz=float(f)) for f in grid]  # validates every f up front

    trace = []
    best = None
    for spec in specs:
        low, high = decompose_at(x, spec)
        m_mse = float(np.mean((x - low) ** 2))
        m_cos = _cosine(x, high)
        try:
            m = weighted_metric(m_mse, m_cos, alpha)
        except DegenerateCosine:
            trace.append((spec.cutoff_hz, m_mse, m_cos, None))
            continue
        trace.append((spec.cutoff_hz, m_mse, m_cos, m))
        key = (m, spec.cutoff_hz)
        if best is None or key < best[0]:
            best = (key, low, high)
    if best is None:
        raise AllCandidatesDegenerate("every grid cutoff left a degenerate high component")
    (_, f_cut), low, high = best
    return FrequencySplit(low, high, f_cut, alpha, trace)
