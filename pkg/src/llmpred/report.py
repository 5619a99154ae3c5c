"""Evaluation report structure and file emission (json, csv, plotdata)."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ReportIOError

SCHEMA_VERSION = 1
METRICS = ("mse", "mae", "ks", "mse_low", "mae_low", "mse_orig", "mae_orig")
CSV_COLUMNS = (
    "mse",
    "mae",
    "ks",
    "window",
    "channel",
    "offset",
    "mse_low",
    "mae_low",
    "mse_orig",
    "mae_orig",
    "f_cut",
    "valid_rows",
    "dropped_rows",
    "short",
    "high_passthrough",
)


@dataclass
class EvalReport:
    entries: list = field(default_factory=list)  # one dict per (window, channel)
    skipped: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    # wall-clock latency and cache counters; kept out of the deterministic JSON
    run_stats: dict = field(default_factory=dict)

    def aggregates(self) -> dict:
        def summary(rows):
            out = {}
            for m in METRICS:
                vals = np.array([r[m] for r in rows], dtype=float)
                out[m] = {
                    "mean": float(vals.mean()) if vals.size else None,
                    "std": float(vals.std()) if vals.size else None,
                    "n": int(vals.size),
                }
            return out

        channels = sorted({r["channel"] for r in self.entries})
        return {
            "overall": summary(self.entries),
            "per_channel": {str(c): summary([r for r in self.entries if r["channel"] == c]) for c in channels},
            "parse": {
                "valid_rows": int(sum(r["valid_rows"] for r in self.entries)),
                "dropped_rows": int(sum(r["dropped_rows"] for r in self.entries)),
            },
        }

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "meta": self.meta,
            "windows": self.entries,
            "skipped": self.skipped,
            "aggregates": self.aggregates(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {d.get('schema_version')}")
        return cls(list(d["windows"]), list(d["skipped"]), dict(d["meta"]))


def report_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for row in report.entries:
        w.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in CSV_COLUMNS})
    return buf.getvalue()


def read_report_csv(text: str) -> list[dict]:
    rows = []
    for raw in csv.DictReader(io.StringIO(text)):
        row = {}
        for k, v in raw.items():
            if k in METRICS or k == "f_cut":
                row[k] = None if v == "" else float(v)
            elif k in ("short", "high_passthrough"):
                row[k] = v == "True"
            else:
                row[k] = int(v)
        rows.append(row)
    return rows


def plotdata_rows(report: EvalReport) -> list[tuple]:
    """Tidy (x, series, value) rows: x is the window index."""
    rows = []
    for r in report.entries:
        for m in METRICS:
            rows.append((r["window"], f"ch{r['channel']}:{m}", r[m]))
        rows.append((r["window"], f"ch{r['channel']}:valid_rows", r["valid_rows"]))
    return rows


def sweep_plotdata_rows(valid_lines: dict) -> list[tuple]:
    """Rows for a valid-lines vs feature-count sweep.

    ``valid_lines`` maps ``(C, backend)`` to a valid-line count; one row per key,
    sorted by backend then C.
    """
    return [(c, backend, valid_lines[c, backend]) for c, backend in sorted(valid_lines, key=lambda k: (k[1], k[0]))]


def plotdata_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("x", "series", "value"))
    w.writerows(rows)
    return buf.getvalue()


def emit_report(report: EvalReport, fmt: str, out_dir, stem: str = "report") -> Path:
    """Write ``report`` as json, csv or plotdata under ``out_dir``."""
    writers = {
        "json": (f"{stem}.json", report.to_json),
        "csv": (f"{stem}.csv", lambda: report_csv(report)),
        "plotdata": (f"{stem}_plotdata.csv", lambda: plotdata_csv(plotdata_rows(report))),
    }
    if fmt not in writers:
        raise ValueError(f"unknown report format {fmt!r}")
    name, render = writers[fmt]
    path = Path(out_dir) / name
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(render())
    except OSError as exc:
        raise ReportIOError(f"cannot write {path}: {exc}") from exc
    return path
