"""Synthetic datasets used by the shipped example config and the tests."""
import csv
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

SAMPLE_RATE_HZ = 100.0


def sine(n: int, freq_hz: float = 1.0, amplitude: float = 1.0, noise: float = 0.0, seed: int = 0) -> np.ndarray:
    t = np.arange(n) / SAMPLE_RATE_HZ
    x = amplitude * np.sin(2 * np.pi * freq_hz * t)
    if noise:
        x = x + np.random.default_rng(seed).normal(0, noise, n)
    return x


def random_walk(n: int, step: float = 1.0, seed: int = 0) -> np.ndarray:
    return np.cumsum(np.random.default_rng(seed).normal(0, step, n))


def two_channel(n: int = 2000, seed: int = 0) -> np.ndarray:
    """(n, 2): 1 Hz sine with white noise, and a random walk."""
    return np.column_stack([sine(n, noise=0.05, seed=seed), random_walk(n, 0.1, seed + 1)])


def write_csv(path, data, start=datetime(2016, 7, 1), step=timedelta(hours=1), names=None) -> Path:
    """Write an ETT-style CSV (``date`` column followed by features)."""
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    names = names or [f"f{i}" for i in range(data.shape[1])]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", *names])
        for i, row in enumerate(data):
            w.writerow([(start + i * step).strftime("%Y-%m-%d %H:%M:%S"), *(repr(float(v)) for v in row)])
    return path
