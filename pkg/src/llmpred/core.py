"""Dataset ingestion, windowing and max-normalization."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DegenerateSeries,
    DimensionMismatch,
    EmptyDataset,
    MissingFile,
    ParseError,
    SeriesTooShort,
)


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Series:
    values: np.ndarray
    channel_id: int = 0

    def __post_init__(self):
        arr = _frozen_array(self.values)
        if arr.size < 1:
            raise EmptyDataset("series must contain at least one value")
        if not np.all(np.isfinite(arr)):
            raise ValueError("series values must be finite")
        if self.channel_id < 0:
            raise ValueError("channel_id must be non-negative")
        object.__setattr__(self, "values", arr)

    def __len__(self):
        return self.values.size

    def __eq__(self, other):
        if not isinstance(other, Series):
            return NotImplemented
        return self.channel_id == other.channel_id and np.array_equal(self.values, other.values)

    def to_dict(self) -> dict:
        return {"values": self.values.tolist(), "channel_id": self.channel_id}

    @classmethod
    def from_dict(cls, d: dict) -> "Series":
        return cls(d["values"], int(d.get("channel_id", 0)))


@dataclass(frozen=True, eq=False)
class ChannelSet:
    channels: tuple

    def __post_init__(self):
        chans = tuple(self.channels)
        if not chans:
            raise EmptyDataset("channel set is empty")
        lengths = {len(s) for s in chans}
        if len(lengths) != 1:
            raise DimensionMismatch(f"channels differ in length: {sorted(lengths)}")
        ids = [s.channel_id for s in chans]
        if ids != list(range(len(chans))):
            raise ValueError(f"channel ids must be 0..C-1 in order, got {ids}")
        object.__setattr__(self, "channels", chans)

    @classmethod
    def from_array(cls, data) -> "ChannelSet":
        """Build from an (L, C) array, or a 1-D array for a single channel."""
        arr = np.asarray(data, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        return cls(tuple(Series(arr[:, c], c) for c in range(arr.shape[1])))

    @property
    def C(self) -> int:
        return len(self.channels)

    @property
    def L(self) -> int:
        return len(self.channels[0])

    def as_array(self) -> np.ndarray:
        """(L, C) matrix."""
        return np.column_stack([s.values for s in self.channels])

    def slice(self, start: int, stop: int) -> "ChannelSet":
        return ChannelSet(tuple(Series(s.values[start:stop], s.channel_id) for s in self.channels))

    def __eq__(self, other):
        if not isinstance(other, ChannelSet):
            return NotImplemented
        return self.channels == other.channels

    def to_dict(self) -> dict:
        return {"channels": [s.to_dict() for s in self.channels]}

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelSet":
        return cls(tuple(Series.from_dict(s) for s in d["channels"]))


@dataclass(frozen=True)
class NormState:
    scale: float

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")

    def to_dict(self) -> dict:
        return {"scale": self.scale}


@dataclass(frozen=True)
class Window:
    offset: int
    history: ChannelSet
    target: ChannelSet

    def __post_init__(self):
        if self.target.L < 1:
            raise ValueError("target must have at least one sample")
        if self.history.L != self.target.L or self.history.C != self.target.C:
            raise DimensionMismatch("history and target must share shape")

    @property
    def H(self) -> int:
        return self.target.L

    def to_dict(self) -> dict:
        return {
            "offset": self.offset,
            "history": self.history.to_dict(),
            "target": self.target.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Window":
        return cls(
            int(d["offset"]),
            ChannelSet.from_dict(d["history"]),
            ChannelSet.from_dict(d["target"]),
        )


def load_csv_dataset(path, selected_channels: Optional[Sequence[int]] = None) -> ChannelSet:
    """Read an ETT-style CSV: header row, timestamp first, numeric features after.

    ``selected_channels`` indexes the feature columns (0 = first column after
    the timestamp). Selected channels are renumbered 0..C-1 in the given order.
    Rows are counted from 1 for the first data row; columns count from 0 at
    the timestamp column, so feature ``i`` lives in column ``i + 1``.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"dataset not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise EmptyDataset(f"{path} has no data rows")
    n_features = len(rows[0]) - 1
    if n_features < 1:
        raise EmptyDataset(f"{path} has no feature columns")
    cols = list(range(n_features)) if selected_channels is None else list(selected_channels)
    for c in cols:
        if not 0 <= c < n_features:
            raise IndexError(f"channel {c} out of range for {n_features} features")

    data = np.empty((len(rows) - 1, len(cols)))
    for r, row in enumerate(rows[1:], start=1):
        for j, c in enumerate(cols):
            cell = row[c + 1].strip() if c + 1 < len(row) else ""
            try:
                val = float(cell)
            except ValueError:
                raise ParseError(r, c + 1, cell) from None
            if not math.isfinite(val):
                raise ParseError(r, c + 1, cell)
            data[r - 1, j] = val
    return ChannelSet.from_array(data)


def split_windows(data: ChannelSet, H: int, stride: Optional[int] = None) -> list[Window]:
    """Cut ``data`` into (history, target) windows of length H each."""
    if H < 1:
        raise ValueError("H must be positive")
    stride = H if stride is None else stride
    if stride < 1:
        raise ValueError("stride must be positive")
    if data.L < 2 * H:
        raise SeriesTooShort(f"need at least {2 * H} samples, got {data.L}")
    windows = []
    for off in range(0, data.L - 2 * H + 1, stride):
        windows.append(Window(off, data.slice(off, off + H), data.slice(off + H, off + 2 * H)))
    return windows


def max_normalize(s):
    """Scale by max(|x|) into [-1, 1].

    Accepts a :class:`Series` (returns a Series) or any array-like (returns
    an ndarray).
    """
    values = s.values if isinstance(s, Series) else np.asarray(s, dtype=float)
    if values.size == 0:
        raise EmptyDataset("cannot normalize an empty series")
    scale = float(np.max(np.abs(values)))
    if scale == 0.0:
        raise DegenerateSeries("all values are zero")
    out = values / scale
    state = NormState(scale)
    if isinstance(s, Series):
        return Series(out, s.channel_id), state
    return out, state


def denormalize(s, state: NormState):
    if isinstance(s, Series):
        return Series(s.values * state.scale, s.channel_id)
    return np.asarray(s, dtype=float) * state.scale
