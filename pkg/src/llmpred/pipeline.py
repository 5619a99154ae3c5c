"""End-to-end forecasting run: decompose, prompt, generate, parse, post-process, score."""
from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import metrics
from .codec import build_prompt, default_offsets, parse_output
from .core import ChannelSet, load_csv_dataset, max_normalize, split_windows
from .decomposition import DEFAULT_GRID, FilterSpec, FrequencySplit, decompose_at, select_cutoff
from .errors import (
    AllCandidatesDegenerate,
    BudgetExceeded,
    ConfigError,
    DegeneratePrediction,
    DegenerateSeries,
    LLMPredError,
)
from .gateway import (
    PER_CHAR,
    GenParams,
    ResponseCache,
    TokenScheme,
    budget,
    count_tokens,
    generate,
    make_backend,
)
from .postprocess import RefinerConfig, gaussian_match, recombine, refine_low, train_refiner
from .report import EvalReport

log = logging.getLogger(__name__)

MAX_DEFAULT_CHANNELS = 6
# excluded from the config hash: they change where output goes, not what it is
_UNHASHED = ("out_dir", "cache_path")


@dataclass
class PipelineConfig:
    dataset: str = ""
    H: int = 48
    stride: Optional[int] = None
    channels: Optional[list] = None
    alpha: float = 0.7
    grid: list = field(default_factory=lambda: list(DEFAULT_GRID))
    sample_rate_hz: float = 100.0
    filter_order: int = 4
    decimals: int = 2
    token_scheme: str = PER_CHAR
    context_limit: int = 4096
    temperature: float = 1.0
    top_p: float = 0.9
    max_tokens: Optional[int] = None
    refine: bool = True
    refiner: dict = field(default_factory=dict)
    train_fraction: float = 0.7
    max_windows: Optional[int] = None
    seed: int = 0
    backend: str = "mock:persistence"
    api_key_env: str = "LLMPRED_API_KEY"
    cache_path: Optional[str] = None
    out_dir: Optional[str] = None
    override_budget: bool = False
    max_in_flight: int = 4

    def __post_init__(self):
        self.validate()

    def validate(self):
        def bad(name, msg):
            raise ConfigError(name, msg)

        if not isinstance(self.H, int) or self.H < 1:
            bad("H", f"must be a positive integer, got {self.H!r}")
        if self.stride is not None and (not isinstance(self.stride, int) or self.stride < 1):
            bad("stride", f"must be a positive integer, got {self.stride!r}")
        if not isinstance(self.alpha, (int, float)) or not 0 <= self.alpha <= 1:
            bad("alpha", f"must lie in [0, 1], got {self.alpha!r}")
        if not self.grid:
            bad("grid", "must not be empty")
        if self.sample_rate_hz <= 0:
            bad("sample_rate_hz", "must be positive")
        for f in self.grid:
            if not 0 < f < self.sample_rate_hz / 2:
                bad("grid", f"cutoff {f} outside (0, {self.sample_rate_hz / 2})")
        if self.filter_order < 1:
            bad("filter_order", "must be >= 1")
        if self.decimals not in (1, 2):
            bad("decimals", "must be 1 or 2")
        if self.token_scheme not in ("per_char", "bpe_grouped"):
            bad("token_scheme", f"unknown scheme {self.token_scheme!r}")
        if self.context_limit < 1:
            bad("context_limit", "must be positive")
        if not 0 < self.top_p <= 1:
            bad("top_p", "must lie in (0, 1]")
        if self.max_tokens is not None and self.max_tokens < 1:
            bad("max_tokens", "must be >= 1")
        if not 0 < self.train_fraction < 1:
            bad("train_fraction", "must lie in (0, 1)")
        if self.max_windows is not None and self.max_windows < 1:
            bad("max_windows", "must be >= 1")
        if self.max_in_flight < 1:
            bad("max_in_flight", "must be >= 1")
        if self.channels is not None and (not self.channels or any(c < 0 for c in self.channels)):
            bad("channels", "must be a non-empty list of non-negative indices")
        kind = self.backend.partition(":")[0]
        if kind not in ("mock", "openai-compatible"):
            bad("backend", f"unknown backend {self.backend!r}")
        try:
            self.refiner_config()
        except (TypeError, ValueError) as exc:
            bad("refiner", str(exc))

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown config field")
        d = dict(d)
        if base_dir is not None:
            for key in ("dataset", "cache_path", "out_dir"):
                if d.get(key) and not Path(d[key]).is_absolute():
                    d[key] = str(Path(base_dir) / d[key])
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError("config", f"file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}") from None
        return cls.from_dict(d, base_dir=path.parent)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        d["dataset"] = Path(d["dataset"]).name if d["dataset"] else ""
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def scheme(self) -> TokenScheme:
        return TokenScheme(self.token_scheme, self.context_limit)

    def filter_spec(self, cutoff: float) -> FilterSpec:
        return FilterSpec(cutoff, self.sample_rate_hz, self.filter_order)

    def refiner_config(self) -> RefinerConfig:
        kw = {"seed": self.seed, **self.refiner}
        return RefinerConfig(H=self.H, **kw)


def _safe_normalize(x: np.ndarray):
    try:
        return max_normalize(x)[0], float(np.max(np.abs(x)))
    except DegenerateSeries:
        return np.zeros_like(x), 1.0


def _split_or_passthrough(x: np.ndarray, cfg: PipelineConfig) -> FrequencySplit:
    try:
        return select_cutoff(x, cfg.grid, cfg.alpha, cfg.filter_spec(min(cfg.grid)))
    except AllCandidatesDegenerate:
        # nothing above any candidate cutoff: the whole signal is low-frequency
        return FrequencySplit(x.copy(), np.zeros_like(x), None, cfg.alpha, [])


def _pad_to(x: np.ndarray, H: int) -> np.ndarray:
    return x if x.size >= H else np.pad(x, (0, H - x.size), mode="edge")


@dataclass
class _Prepared:
    index: int
    offset: int
    scales: list
    hist: np.ndarray  # (H, C) window-normalized history
    truth: np.ndarray  # (H, C) target in the same space
    splits: list
    low_scales: list
    high_scales: list
    truth_low: np.ndarray
    truth_high: np.ndarray
    prompts: tuple = ()


def _prepare(index: int, window, cfg: PipelineConfig) -> _Prepared:
    hist_raw = window.history.as_array()
    tgt_raw = window.target.as_array()
    H, C = hist_raw.shape
    hist = np.empty_like(hist_raw)
    truth = np.empty_like(tgt_raw)
    scales, splits, low_scales, high_scales = [], [], [], []
    low_n = np.empty_like(hist)
    high_n = np.empty_like(hist)
    truth_low = np.empty_like(hist)
    truth_high = np.empty_like(hist)
    for c in range(C):
        hist[:, c], state = max_normalize(hist_raw[:, c])
        scales.append(state.scale)
        truth[:, c] = tgt_raw[:, c] / state.scale
        split = _split_or_passthrough(hist[:, c], cfg)
        splits.append(split)
        low_n[:, c], ls = _safe_normalize(split.low)
        high_n[:, c], hs = _safe_normalize(split.high)
        low_scales.append(ls)
        high_scales.append(hs)
        if split.f_cut is None:
            truth_low[:, c], truth_high[:, c] = truth[:, c], 0.0
        else:
            truth_low[:, c], truth_high[:, c] = decompose_at(truth[:, c], cfg.filter_spec(split.f_cut))
    offsets = default_offsets(C, cfg.decimals)
    prompts = (build_prompt(low_n, offsets), build_prompt(high_n, offsets))
    return _Prepared(
        index, window.offset, scales, hist, truth, splits, low_scales, high_scales,
        truth_low, truth_high, prompts,
    )


def _gen_params(cfg: PipelineConfig, prompt) -> GenParams:
    max_tokens = cfg.max_tokens or max(1, count_tokens(prompt.body, cfg.scheme()))
    return GenParams(max_tokens, cfg.temperature, cfg.top_p, cfg.seed)


def run_pipeline(cfg: PipelineConfig, backend=None, data: ChannelSet | None = None, cache=None):
    """Run the forecast over every window and score it.

    Returns ``(EvalReport, artifacts)`` where ``artifacts`` holds per-window
    traces and forecasts. Window-level failures are recorded in
    ``report.skipped`` and do not stop the run.
    """
    if data is None:
        data = load_csv_dataset(cfg.dataset)
    channels = cfg.channels if cfg.channels is not None else list(range(min(MAX_DEFAULT_CHANNELS, data.C)))
    for c in channels:
        if c >= data.C:
            raise ConfigError("channels", f"channel {c} out of range for {data.C} channels")
    data = ChannelSet.from_array(data.as_array()[:, channels])
    C = data.C
    scheme = cfg.scheme()
    b = budget(cfg.H, C, scheme, cfg.decimals)
    if not b.feasible and not cfg.override_budget:
        raise BudgetExceeded(
            f"H={cfg.H}, C={C} needs {b.total} tokens (limit {b.limit}); "
            f"at most {b.max_feasible_features} channels fit"
        )
    backend = backend or make_backend(cfg.backend, cfg.seed, cfg.api_key_env, max_in_flight=cfg.max_in_flight)
    if cache is None and cfg.cache_path:
        cache = ResponseCache(cfg.cache_path)

    windows = split_windows(data, cfg.H, cfg.stride)
    if cfg.max_windows is not None:
        windows = windows[: cfg.max_windows]

    report = EvalReport()
    prepared: list[_Prepared] = []
    for i, w in enumerate(windows):
        try:
            prepared.append(_prepare(i, w, cfg))
        except LLMPredError as exc:
            report.skipped.append({"window": i, "offset": w.offset, "error": exc.code, "message": str(exc)})

    jobs = [(p, k) for p in prepared for k in range(2)]

    def run_job(job):
        p, k = job
        prompt = p.prompts[k]
        try:
            return generate(prompt, _gen_params(cfg, prompt), backend, scheme, cfg.override_budget, cache)
        except LLMPredError as exc:
            return exc

    with ThreadPoolExecutor(max_workers=cfg.max_in_flight) as pool:
        results = list(pool.map(run_job, jobs))
    responses = {(p.index, k): r for (p, k), r in zip(jobs, results)}

    parsed = {}
    for p in prepared:
        fail = next((responses[p.index, k] for k in range(2) if isinstance(responses[p.index, k], Exception)), None)
        if fail is not None:
            report.skipped.append({"window": p.index, "offset": p.offset, "error": fail.code, "message": str(fail)})
            continue
        offsets = default_offsets(C, cfg.decimals)
        lo = parse_output(responses[p.index, 0].raw_text, C, offsets, cfg.H)
        hi = parse_output(responses[p.index, 1].raw_text, C, offsets, cfg.H)
        n = min(lo.valid_rows, hi.valid_rows)
        if n == 0:
            report.skipped.append(
                {"window": p.index, "offset": p.offset, "error": "NO_VALID_ROWS", "message": "no valid output rows"}
            )
            continue
        pred_low = lo.values[:n] * np.array(p.low_scales)
        pred_high = hi.values[:n] * np.array(p.high_scales)
        parsed[p.index] = (p, lo, hi, n, pred_low, pred_high)

    # refiner pairs come from the leading windows; only the rest are scored
    order = sorted(parsed)
    n_train = int(round(cfg.train_fraction * len(order))) if cfg.refine else 0
    train_ids, test_ids = order[:n_train], order[n_train:]
    model, refiner_meta = None, {"enabled": cfg.refine, "trained": False, "applied": False}
    if cfg.refine:
        pairs = [
            (_pad_to(parsed[i][4][:, c], cfg.H), parsed[i][0].truth_low[:, c])
            for i in train_ids
            for c in range(C)
        ]
        refiner_meta["n_pairs"] = len(pairs)
        refiner_meta["train_windows"] = train_ids
        try:
            model, tlog = train_refiner(pairs, cfg.refiner_config())
            refiner_meta.update(
                trained=True,
                val_loss_initial=tlog.val_loss[0],
                val_loss_final=tlog.val_loss[-1],
                val_loss_identity=tlog.identity_val_loss,
            )
            # a refiner that loses to the raw prediction on held-out pairs is not applied
            refiner_meta["applied"] = tlog.val_loss[-1] < tlog.identity_val_loss
            if not refiner_meta["applied"]:
                model = None
        except LLMPredError as exc:
            refiner_meta["error"] = exc.code
            log.warning("refiner not trained: %s", exc)

    artifacts = {"traces": [], "forecasts": []}
    for i in test_ids:
        p, lo, hi, n, pred_low, pred_high = parsed[i]
        for c in range(C):
            low_c = _pad_to(pred_low[:, c], cfg.H)
            if model is not None:
                low_c = refine_low(model, low_c)
            passthrough = False
            try:
                high_c = gaussian_match(pred_high[:, c], p.splits[c].high)
            except DegeneratePrediction:
                high_c = pred_high[:, c]
                passthrough = True
            forecast = recombine(low_c[:n], high_c[:n])
            truth = p.truth[:n, c]
            scale = p.scales[c]
            entry = {
                "window": p.index,
                "offset": p.offset,
                "channel": c,
                "f_cut": p.splits[c].f_cut,
                "mse": metrics.mse(forecast, truth),
                "mae": metrics.mae(forecast, truth),
                "ks": metrics.ks_statistic(high_c[:n], p.truth_high[:n, c]),
                "mse_low": metrics.mse(low_c[:n], p.truth_low[:n, c]),
                "mae_low": metrics.mae(low_c[:n], p.truth_low[:n, c]),
                "mse_orig": metrics.mse(forecast * scale, truth * scale),
                "mae_orig": metrics.mae(forecast * scale, truth * scale),
                "valid_rows": n,
                "valid_rows_low": lo.valid_rows,
                "valid_rows_high": hi.valid_rows,
                "dropped_rows": lo.dropped_rows + hi.dropped_rows,
                "short": n < cfg.H,
                "high_passthrough": passthrough,
            }
            report.entries.append(entry)
            artifacts["traces"].append(
                {
                    "window": p.index,
                    "channel": c,
                    "f_cut": p.splits[c].f_cut,
                    "trace": [list(t) for t in p.splits[c].trace],
                    "dropped_low": [list(r) for r in lo.dropped_reasons],
                    "dropped_high": [list(r) for r in hi.dropped_reasons],
                }
            )
            artifacts["forecasts"].append(
                {
                    "window": p.index,
                    "offset": p.offset,
                    "channel": c,
                    "forecast": (forecast * scale).tolist(),
                    "truth": (truth * scale).tolist(),
                }
            )

    report.meta = {
        "config_hash": cfg.config_hash(),
        "backend": getattr(backend, "name", type(backend).__name__),
        "seed": cfg.seed,
        "H": cfg.H,
        "alpha": cfg.alpha,
        "channels": list(channels),
        "n_windows": len(windows),
        "n_scored_windows": len(test_ids),
        "n_skipped_windows": len(report.skipped),
        "budget": b.to_dict(),
        "refiner": refiner_meta,
    }
    latencies = [r.latency_ms for r in results if not isinstance(r, Exception) and not r.cached]
    report.run_stats = {
        "generate_calls": len(jobs),
        "backend_calls": len(latencies),
        "cache_hits": sum(1 for r in results if not isinstance(r, Exception) and r.cached),
        "latency_ms": {
            "mean": float(np.mean(latencies)) if latencies else None,
            "max": float(np.max(latencies)) if latencies else None,
            "total": float(np.sum(latencies)) if latencies else 0.0,
        },
    }
    return report, artifacts


def write_artifacts(report: EvalReport, artifacts: dict, out_dir, formats=("json", "csv", "plotdata")) -> list:
    from .report import emit_report

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [emit_report(report, fmt, out) for fmt in formats]
    for name in ("traces", "forecasts"):
        path = out / f"{name}.jsonl"
        path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in artifacts[name]))
        paths.append(path)
    stats = out / "run_stats.json"
    stats.write_text(json.dumps(report.run_stats, indent=2, sort_keys=True))
    paths.append(stats)
    return paths
