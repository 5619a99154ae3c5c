"""Command-line entry point: ``llmpred {decompose,budget,forecast,evaluate}``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .core import load_csv_dataset, max_normalize
from .decomposition import DEFAULT_GRID, FilterSpec, select_cutoff
from .errors import ConfigError, LLMPredError, MissingFile
from .gateway import PER_CHAR, TokenScheme, budget
from .pipeline import PipelineConfig, run_pipeline, write_artifacts
from .report import plotdata_csv

log = logging.getLogger("llmpred")

EXIT_USAGE = 2
EXIT_FAILURE = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"ERROR USAGE: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def parse_range(text: str, step: float | None = None, integer: bool = False) -> list:
    """``"0.4..0.8"`` (step 0.1 by default), ``"0.4..0.8:0.05"``, ``"1..10"`` or a
    comma list."""
    if ".." not in text:
        vals = [v for v in text.split(",") if v.strip()]
        return [int(v) for v in vals] if integer else [float(v) for v in vals]
    span, _, step_txt = text.partition(":")
    lo_txt, hi_txt = span.split("..")
    if integer:
        lo, hi = int(lo_txt), int(hi_txt)
        st = int(step_txt) if step_txt else 1
        return list(range(lo, hi + 1, st))
    lo, hi = float(lo_txt), float(hi_txt)
    st = float(step_txt) if step_txt else (step or 0.1)
    n = int(round((hi - lo) / st))
    return [round(lo + i * st, 10) for i in range(n + 1)]


def _write(out_dir, name: str, text: str) -> Path:
    path = Path(out_dir) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


# --------------------------------------------------------------------------


def cmd_decompose(args) -> int:
    channels = args.channel
    data = load_csv_dataset(args.dataset, channels)
    grid = parse_range(args.grid) if args.grid else list(DEFAULT_GRID)
    alphas = parse_range(args.alpha_sweep) if args.alpha_sweep else [args.alpha]
    spec = FilterSpec(min(grid), args.sample_rate, args.order)

    rows = []
    out = {"grid": grid, "alphas": alphas, "channels": []}
    for s in data.channels:
        x = s.values[: args.h] if args.h else s.values
        xn, _ = max_normalize(x)
        entry = {"channel": channels[s.channel_id] if channels else s.channel_id, "sweep": []}
        for a in alphas:
            split = select_cutoff(xn, grid, a, spec)
            entry["sweep"].append({"alpha": a, "f_cut": split.f_cut, "trace": [list(t) for t in split.trace]})
            for f, m_mse, m_cos, m in split.trace:
                rows.append((entry["channel"], a, f, m_mse, m_cos, m, f == split.f_cut))
            if a == args.alpha or len(alphas) == 1:
                entry["split"] = split.to_dict()
        entry.setdefault("split", split.to_dict())
        out["channels"].append(entry)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("channel", "alpha", "f", "m_mse", "m_cos", "m", "selected"))
    w.writerows(rows)
    sys.stdout.write(buf.getvalue())
    if args.out_dir:
        _write(args.out_dir, "decompose.json", json.dumps(out, indent=2))
        _write(args.out_dir, "decompose_trace.csv", buf.getvalue())
    return 0


def cmd_budget(args) -> int:
    scheme = TokenScheme(args.scheme, args.limit)
    counts = parse_range(args.c_range, integer=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("C", "input_tokens", "output_tokens", "total", "limit", "feasible"))
    plot = []
    for c in counts:
        b = budget(args.h, c, scheme)
        w.writerow((c, b.input_tokens, b.output_tokens, b.total, b.limit, b.feasible))
        plot.append((c, f"{args.scheme}:H={args.h}:total", b.total))
    sys.stdout.write(buf.getvalue())
    if args.out_dir:
        _write(args.out_dir, "budget.csv", buf.getvalue())
        _write(args.out_dir, "budget_plotdata.csv", plotdata_csv(plot))
    return 0


_FLAG_FIELDS = {
    "dataset": "dataset",
    "h": "H",
    "alpha": "alpha",
    "backend": "backend",
    "seed": "seed",
    "out_dir": "out_dir",
    "override_budget": "override_budget",
    "api_key_env": "api_key_env",
}


def resolve_config(args) -> PipelineConfig:
    base = {}
    base_dir = None
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise MissingFile(f"config not found: {path}")
        try:
            base = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}") from None
        base_dir = path.parent
    cfg = PipelineConfig.from_dict(base, base_dir) if base else None
    overrides = {}
    for flag, name in _FLAG_FIELDS.items():
        val = getattr(args, flag, None)
        if val is not None and val is not False:
            overrides[name] = val
    if args.channel:
        overrides["channels"] = args.channel
    if cfg is None:
        return PipelineConfig(**overrides)
    merged = cfg.to_dict() | overrides
    return PipelineConfig(**merged)


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    if args.print_config:
        print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
        return 0
    if not cfg.dataset:
        raise ConfigError("dataset", "no dataset given")
    out_dir = Path(cfg.out_dir or "llmpred_out")
    if not cfg.cache_path:
        cfg = replace(cfg, cache_path=str(out_dir / "cache.jsonl"))
    report, artifacts = run_pipeline(cfg)
    write_artifacts(report, artifacts, out_dir)
    (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    if args.command == "forecast":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("window", "offset", "channel", "step", "forecast", "truth"))
        for r in artifacts["forecasts"]:
            for step, (f, t) in enumerate(zip(r["forecast"], r["truth"])):
                w.writerow((r["window"], r["offset"], r["channel"], step, f, t))
        (out_dir / "forecasts.csv").write_text(buf.getvalue())
    agg = report.aggregates()["overall"]
    stats = report.run_stats
    mse_mean = agg["mse"]["mean"]
    print(
        f"scored={len(report.entries)} skipped={len(report.skipped)} "
        f"mse={'n/a' if mse_mean is None else f'{mse_mean:.6g}'} "
        f"backend_calls={stats['backend_calls']} cache_hits={stats['cache_hits']} out={out_dir}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="llmpred", description="Zero-shot LLM time-series forecasting pipeline.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("decompose", help="select the cutoff frequency per channel")
    d.add_argument("--dataset", required=True)
    d.add_argument("--channel", type=int, action="append", help="feature index (repeatable; default all)")
    d.add_argument("--alpha", type=float, default=0.7)
    d.add_argument("--alpha-sweep", help="e.g. 0.4..0.8 (step 0.1) or 0.4..0.8:0.05")
    d.add_argument("--grid", help="cutoff grid in Hz, e.g. 2.5..15:2.5")
    d.add_argument("--h", type=int, help="use only the first H samples")
    d.add_argument("--sample-rate", type=float, default=100.0)
    d.add_argument("--order", type=int, default=4)
    d.add_argument("--out-dir")
    d.set_defaults(func=cmd_decompose)

    b = sub.add_parser("budget", help="context-length feasibility table")
    b.add_argument("--h", type=int, default=96)
    b.add_argument("--c-range", default="1..10")
    b.add_argument("--scheme", choices=("per_char", "bpe_grouped"), default=PER_CHAR)
    b.add_argument("--limit", type=int, default=4096)
    b.add_argument("--out-dir")
    b.set_defaults(func=cmd_budget)

    for name, helptext in (("forecast", "run the pipeline and write forecasts"), ("evaluate", "run the pipeline and write the report")):
        r = sub.add_parser(name, help=helptext)
        r.add_argument("--config")
        r.add_argument("--dataset")
        r.add_argument("--channel", type=int, action="append")
        r.add_argument("--alpha", type=float)
        r.add_argument("--h", type=int)
        r.add_argument("--backend", help="mock:<mode> or openai-compatible:<url>[#model]")
        r.add_argument("--api-key-env")
        r.add_argument("--seed", type=int)
        r.add_argument("--out-dir")
        r.add_argument("--override-budget", action="store_true")
        r.add_argument("--print-config", action="store_true")
        r.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (MissingFile, ConfigError) as exc:
        print(f"ERROR {exc.code}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LLMPredError as exc:
        print(f"ERROR {exc.code}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (IndexError, ValueError) as exc:
        print(f"ERROR INVALID_ARGUMENT: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
