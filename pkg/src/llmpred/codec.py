"""Numeric <-> text conversion for LLM prompts and parsing of LLM output.

Channel ``i`` is mapped through ``0.5 * x + (i + 0.5)`` so its values live in
the band ``[i, i + 1]`` and the integer part identifies the channel.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Sequence

import numpy as np

from .errors import BandViolation, NotANumber, OffsetMismatch, OutOfRange

INSTRUCTION = (
    "Consider the distribution. Predict the next few lines. INTEGER component of the "
    "value SHOULD be SAME as the train data. ONLY provide numerical values."
)
SEPARATOR = ", "
TERMINATOR = "\n"
RANGE_TOL = 1e-9
# distance outside the channel band still accepted before a value is rejected
BAND_SLACK = 0.5

UNIVARIATE = "univariate"
MULTIVARIATE = "multivariate"

INCOMPLETE_VALUE = "incomplete_value"
WRONG_ARITY = "wrong_arity"
NON_NUMERIC = "non_numeric"
OUT_OF_BAND = "out_of_band"

_NUMBER = re.compile(r"^[+-]?[0-9]+(?:\.[0-9]+)?$")
# a value cut off mid-generation: "3.", ".", "...", "3.7..." or nothing at all
_PARTIAL = re.compile(r"^(?:[+-]?[0-9]*\.+|[+-]?[0-9]+\.[0-9]*\.+|[+-]?)$")


@dataclass(frozen=True)
class ChannelOffset:
    c: float
    channel_index: int
    decimals: int = 2

    def __post_init__(self):
        if self.decimals not in (1, 2):
            raise ValueError(f"decimals must be 1 or 2, got {self.decimals}")

    @classmethod
    def for_channel(cls, index: int, decimals: int = 2) -> "ChannelOffset":
        return cls(index + 0.5, index, decimals)

    @property
    def quantum(self) -> float:
        return 10.0 ** -self.decimals


def default_offsets(C: int, decimals: int = 2) -> list[ChannelOffset]:
    return [ChannelOffset.for_channel(i, decimals) for i in range(C)]


def encode_value(x: float, off: ChannelOffset) -> str:
    if not abs(x) <= 1 + RANGE_TOL:
        raise OutOfRange(f"{x} outside [-1, 1]")
    x = min(1.0, max(-1.0, float(x)))
    shifted = Decimal(repr(0.5 * x + off.c))
    q = Decimal(1).scaleb(-off.decimals)
    return str(shifted.quantize(q, rounding=ROUND_HALF_UP))


def _check_number(t: str) -> float:
    t = t.strip()
    if not _NUMBER.match(t):
        raise NotANumber(f"{t!r} is not a decimal number")
    return float(t)


def decode_value(t: str, off: ChannelOffset) -> float:
    v = _check_number(t)
    lo, hi = off.c - 0.5, off.c + 0.5
    if v < lo - BAND_SLACK or v > hi + BAND_SLACK:
        raise BandViolation(f"{t} outside band [{lo}, {hi}] of channel {off.channel_index}")
    q = off.quantum
    return min(1 + q, max(-1 - q, (v - off.c) / 0.5))


@dataclass(frozen=True)
class PromptBundle:
    instruction: str
    body: str
    expected_rows: int
    expected_cols: int
    layout: str

    @property
    def text(self) -> str:
        return self.instruction + "\n" + self.body

    def to_dict(self) -> dict:
        return {
            "instruction": self.instruction,
            "body": self.body,
            "expected_rows": self.expected_rows,
            "expected_cols": self.expected_cols,
            "layout": self.layout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PromptBundle":
        return cls(d["instruction"], d["body"], d["expected_rows"], d["expected_cols"], d["layout"])


def build_prompt(
    history,
    offsets: Sequence[ChannelOffset] | None = None,
    layout: str | None = None,
    separator: str = SEPARATOR,
    terminator: str = TERMINATOR,
) -> PromptBundle:
    """Serialize normalized history into a prompt.

    ``history`` is a ChannelSet or an (H, C) / (H,) array already scaled into
    [-1, 1]. One time step per line; channels within a step are joined by
    ``separator``.
    """
    arr = history.as_array() if hasattr(history, "as_array") else np.asarray(history, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    H, C = arr.shape
    offsets = default_offsets(C) if offsets is None else list(offsets)
    if len(offsets) != C:
        raise OffsetMismatch(f"{len(offsets)} offsets for {C} channels")
    if layout is None:
        layout = UNIVARIATE if C == 1 else MULTIVARIATE
    if layout == UNIVARIATE and C != 1:
        raise OffsetMismatch(f"univariate layout needs one channel, got {C}")
    if layout not in (UNIVARIATE, MULTIVARIATE):
        raise ValueError(f"unknown layout {layout!r}")

    lines = [separator.join(encode_value(v, off) for v, off in zip(row, offsets)) for row in arr]
    body = "".join(line + terminator for line in lines)
    return PromptBundle(INSTRUCTION, body, H, C, layout)


@dataclass
class ParseReport:
    valid_rows: int = 0
    dropped_rows: int = 0
    dropped_reasons: list = field(default_factory=list)  # (row index, reason)
    values: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))

    def to_dict(self) -> dict:
        return {
            "valid_rows": self.valid_rows,
            "dropped_rows": self.dropped_rows,
            "dropped_reasons": [list(r) for r in self.dropped_reasons],
            "values": self.values.tolist(),
        }


def _classify_row(line: str, expected_cols: int, offsets: Sequence[ChannelOffset]):
    tokens = [t.strip() for t in line.split(",")]
    for tok in tokens:
        if not _NUMBER.match(tok):
            return (INCOMPLETE_VALUE if _PARTIAL.match(tok) else NON_NUMERIC), None
    if len(tokens) != expected_cols:
        return WRONG_ARITY, None
    try:
        return None, [decode_value(tok, off) for tok, off in zip(tokens, offsets)]
    except BandViolation:
        return OUT_OF_BAND, None


def parse_output(
    text: str,
    expected_cols: int,
    offsets: Sequence[ChannelOffset] | None = None,
    max_rows: int | None = None,
) -> ParseReport:
    """Validate raw LLM output line by line. Never raises on content.

    Blank lines are ignored. Once ``max_rows`` valid rows are collected the
    remaining text is not examined.
    """
    offsets = default_offsets(expected_cols) if offsets is None else list(offsets)
    if len(offsets) != expected_cols:
        raise OffsetMismatch(f"{len(offsets)} offsets for {expected_cols} columns")
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")

    report = ParseReport()
    rows = []
    seen = 0
    for line in text.split("\n"):
        if max_rows is not None and len(rows) >= max_rows:
            break
        if not line.strip():
            continue
        reason, vals = _classify_row(line, expected_cols, offsets)
        if reason is None:
            rows.append(vals)
        else:
            report.dropped_reasons.append((seen, reason))
        seen += 1
    report.valid_rows = len(rows)
    report.dropped_rows = len(report.dropped_reasons)
    report.values = np.array(rows, dtype=float).reshape(len(rows), expected_cols)
    return report
