"""LLM generation backends, token accounting and context budgets."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Protocol

import httpx
import numpy as np

from .codec import (
    INSTRUCTION,
    SEPARATOR,
    TERMINATOR,
    PromptBundle,
    default_offsets,
    encode_value,
)
from .errors import BudgetExceeded, GatewayTimeout, Transport, UnparseablePrompt

log = logging.getLogger(__name__)

PER_CHAR = "per_char"
BPE_GROUPED = "bpe_grouped"

_PER_CHAR_RE = re.compile(r"\s+|\S")
_GROUPED_RE = re.compile(r"\s+|[0-9]+|[^\W\d_]+|[^\s]", re.UNICODE)

RETRY_STATUSES = frozenset({429, 500, 502, 503, 504})


@dataclass(frozen=True)
class GenParams:
    max_tokens: int
    temperature: float = 1.0
    top_p: float = 0.9
    seed: int = 0
    do_sample: bool = True
    renormalize_logits: bool = False

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must lie in (0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TokenScheme:
    kind: str = PER_CHAR
    context_limit: int = 4096

    def __post_init__(self):
        if self.kind not in (PER_CHAR, BPE_GROUPED):
            raise ValueError(f"unknown token scheme {self.kind!r}")
        if self.context_limit <= 0:
            raise ValueError("context_limit must be positive")


@dataclass(frozen=True)
class BudgetReport:
    input_tokens: int
    output_tokens: int
    total: int
    limit: int
    feasible: bool
    max_feasible_features: int

    def to_dict(self) -> dict:
        return asdict(self)


def count_tokens(text: str, scheme: TokenScheme | str = PER_CHAR) -> int:
    """Approximate token count.

    ``per_char`` models character-level numeral tokenization (every
    non-space character is a token). ``bpe_grouped`` models BPE-style
    grouping where each digit run and each word is a single token. In both
    schemes a run of whitespace counts as one token.
    """
    kind = scheme.kind if isinstance(scheme, TokenScheme) else scheme
    if not text:
        return 0
    pattern = _PER_CHAR_RE if kind == PER_CHAR else _GROUPED_RE
    return sum(1 for _ in pattern.finditer(text))


def worst_case_body(H: int, C: int, decimals: int = 2) -> str:
    """Prompt body with every value at its widest rendering (top of each band)."""
    offsets = default_offsets(C, decimals)
    row = SEPARATOR.join(encode_value(1.0, off) for off in offsets)
    return (row + TERMINATOR) * H


def _budget_counts(H: int, C: int, scheme: TokenScheme, decimals: int, instruction: str):
    body = worst_case_body(H, C, decimals)
    n_in = count_tokens(instruction + "\n" + body, scheme)
    n_out = count_tokens(body, scheme)
    return n_in, n_out


def budget(H: int, C: int, scheme: TokenScheme, decimals: int = 2, instruction: str = INSTRUCTION) -> BudgetReport:
    """Worst-case context usage for an H-step, C-channel prompt.

    The model is asked to generate as many tokens as the history body holds,
    so the total is instruction + 2 * body.
    """
    if H < 1 or C < 1:
        raise ValueError("H and C must be >= 1")
    n_in, n_out = _budget_counts(H, C, scheme, decimals, instruction)
    total = n_in + n_out
    max_ok = 0
    for c in range(1, C + 1):
        i, o = _budget_counts(H, c, scheme, decimals, instruction)
        if i + o > scheme.context_limit:
            break
        max_ok = c
    return BudgetReport(n_in, n_out, total, scheme.context_limit, total <= scheme.context_limit, max_ok)


def prompt_budget(prompt: PromptBundle, scheme: TokenScheme) -> tuple[int, int]:
    """(input tokens, output tokens) for an actual prompt."""
    return count_tokens(prompt.text, scheme), count_tokens(prompt.body, scheme)


# --------------------------------------------------------------------------
# mock backend

PERSISTENCE = "persistence"
NOISY = "noisy"
TRUNCATED = "truncated"
REPEAT_LINE = "repeat_line"
MOCK_MODES = (PERSISTENCE, NOISY, TRUNCATED, REPEAT_LINE)

_ROW_TOKEN = re.compile(r"^[0-9]+\.([0-9]+)$")


def _parse_body(prompt: PromptBundle):
    rows = [line for line in prompt.body.split("\n") if line.strip()]
    if not rows:
        raise UnparseablePrompt("prompt body has no rows")
    parsed = []
    decimals = None
    for line in rows:
        toks = [t.strip() for t in line.split(",")]
        for t in toks:
            m = _ROW_TOKEN.match(t)
            if not m:
                raise UnparseablePrompt(f"cannot parse prompt token {t!r}")
            decimals = len(m.group(1)) if decimals is None else decimals
        parsed.append(toks)
    width = {len(r) for r in parsed}
    if len(width) != 1:
        raise UnparseablePrompt("prompt rows differ in arity")
    return parsed, decimals


def _format_row(tokens) -> str:
    return SEPARATOR.join(tokens) + TERMINATOR


def mock_generate(prompt: PromptBundle, mode: str = PERSISTENCE, seed: int = 0, noise: float = 0.05) -> str:
    """Deterministic stand-in for an LLM.

    persistence: repeat the last history row; noisy: persistence plus seeded
    uniform noise clipped to each channel band; truncated: persistence with the
    final value cut after its decimal point; repeat_line: the first history
    row repeated (a stuck-generation failure).
    """
    if mode not in MOCK_MODES:
        raise ValueError(f"unknown mock mode {mode!r}")
    rows, decimals = _parse_body(prompt)
    H = prompt.expected_rows if prompt.expected_rows >= 1 else len(rows)
    last = rows[-1]

    if mode == PERSISTENCE:
        return _format_row(last) * H
    if mode == REPEAT_LINE:
        return _format_row(rows[0]) * H
    if mode == TRUNCATED:
        text = _format_row(last) * H
        cut = last[-1].split(".")[0] + "."
        return text[: -len(last[-1]) - len(TERMINATOR)] + cut

    digest = hashlib.sha256(prompt.body.encode()).digest()
    rng = np.random.default_rng([seed, int.from_bytes(digest[:8], "little")])
    base = np.array([float(t) for t in last])
    lo = np.arange(base.size, dtype=float)  # column j occupies band [j, j + 1]
    out = []
    for _ in range(H):
        v = np.clip(base + rng.uniform(-noise, noise, size=base.size), lo, lo + 1)
        out.append(_format_row(f"{x:.{decimals}f}" for x in v))
    return "".join(out)


@dataclass
class Completion:
    text: str
    usage: Optional[dict] = None


class Backend(Protocol):
    name: str

    def complete(self, prompt: PromptBundle, params: GenParams) -> Completion: ...


class MockBackend:
    def __init__(self, mode: str = PERSISTENCE, seed: int = 0):
        if mode not in MOCK_MODES:
            raise ValueError(f"unknown mock mode {mode!r}")
        self.mode = mode
        self.seed = seed
        self.calls = 0
        self._lock = threading.Lock()

    @property
    def name(self) -> str:
        return f"mock:{self.mode}"

    def complete(self, prompt: PromptBundle, params: GenParams) -> Completion:
        with self._lock:
            self.calls += 1
        return Completion(mock_generate(prompt, self.mode, self.seed))


class OpenAICompatibleBackend:
    """Chat-completions client for any OpenAI-compatible endpoint.

    ``base_url`` is the API root (``.../v1``); requests go to
    ``{base_url}/chat/completions``.
    """

    def __init__(
        self,
        base_url: str,
        model: str = "gpt-4o-mini",
        api_key_env: str = "LLMPRED_API_KEY",
        timeout: float = 120.0,
        max_retries: int = 2,
        backoff: float = 1.0,
        max_in_flight: int = 4,
        client: httpx.Client | None = None,
        sleep=time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self.sleep = sleep
        self.calls = 0
        self._client = client or httpx.Client(timeout=timeout)
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._lock = threading.Lock()

    @property
    def name(self) -> str:
        return f"openai-compatible:{self.base_url}"

    def _payload(self, prompt: PromptBundle, params: GenParams) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt.text}],
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
        }

    def complete(self, prompt: PromptBundle, params: GenParams) -> Completion:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = self._payload(prompt, params)
        url = f"{self.base_url}/chat/completions"

        attempt = 0
        with self._slots:
            while True:
                with self._lock:
                    self.calls += 1
                try:
                    resp = self._client.post(url, json=payload, headers=headers, timeout=self.timeout)
                except httpx.TimeoutException as exc:
                    raise GatewayTimeout(f"request to {url} timed out") from exc
                if resp.status_code < 300:
                    break
                if resp.status_code in RETRY_STATUSES and attempt < self.max_retries:
                    delay = self.backoff * 2**attempt
                    log.warning("HTTP %s from %s, retrying in %.1fs", resp.status_code, url, delay)
                    self.sleep(delay)
                    attempt += 1
                    continue
                raise Transport(resp.status_code, resp.text)

        data = resp.json()
        try:
            text = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise Transport(resp.status_code, f"malformed response: {resp.text[:200]}") from exc
        return Completion(text, data.get("usage"))


# --------------------------------------------------------------------------
# cache + generate


def cache_key(prompt: PromptBundle, params: GenParams) -> str:
    h = hashlib.sha256()
    h.update(prompt.text.encode("utf-8"))
    h.update(b"\0")
    h.update(json.dumps(params.to_dict(), sort_keys=True).encode())
    return h.hexdigest()


class ResponseCache:
    """Append-only JSONL cache of completions keyed by prompt + params."""

    def __init__(self, path):
        self.path = Path(path)
        self._entries: dict[str, dict] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        if self.path.exists():
            with self.path.open() as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        entry = json.loads(line)
                        self._entries[entry["key"]] = entry

    def __len__(self):
        return len(self._entries)

    def get(self, key: str) -> Optional[dict]:
        with self._lock:
            entry = self._entries.get(key)
            if entry is None:
                self.misses += 1
            else:
                self.hits += 1
            return entry

    def put(self, key: str, prompt: PromptBundle, params: GenParams, output: str, latency_ms: float):
        entry = {
            "key": key,
            "prompt": prompt.text,
            "params": params.to_dict(),
            "output": output,
            "latency_ms": latency_ms,
        }
        with self._lock:
            self._entries[key] = entry
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a") as fh:
                fh.write(json.dumps(entry) + "\n")


@dataclass
class GenerationResponse:
    raw_text: str
    latency_ms: float
    usage: Optional[dict] = None
    cached: bool = False
    input_tokens: int = 0
    output_budget: int = 0
    extra: dict = field(default_factory=dict)


def generate(
    prompt: PromptBundle,
    params: GenParams,
    backend: Backend,
    scheme: TokenScheme | None = None,
    override_budget: bool = False,
    cache: ResponseCache | None = None,
) -> GenerationResponse:
    """Run one completion, enforcing the context budget unless overridden."""
    n_in, n_out = prompt_budget(prompt, scheme or TokenScheme())
    if scheme is not None and not override_budget and n_in + n_out > scheme.context_limit:
        raise BudgetExceeded(
            f"prompt needs {n_in} + {n_out} tokens, limit is {scheme.context_limit}"
        )
    key = cache_key(prompt, params) if cache is not None else None
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return GenerationResponse(hit["output"], hit["latency_ms"], None, True, n_in, n_out)

    t0 = time.perf_counter()
    completion = backend.complete(prompt, params)
    latency_ms = (time.perf_counter() - t0) * 1000.0
    if cache is not None:
        cache.put(key, prompt, params, completion.text, latency_ms)
    return GenerationResponse(completion.text, latency_ms, completion.usage, False, n_in, n_out)


def make_backend(spec: str, seed: int = 0, api_key_env: str = "LLMPRED_API_KEY", **kwargs) -> Backend:
    """Parse ``mock:<mode>`` or ``openai-compatible:<url>[#model]``."""
    kind, _, rest = spec.partition(":")
    if kind == "mock":
        return MockBackend(rest or PERSISTENCE, seed)
    if kind == "openai-compatible":
        if not rest:
            raise ValueError("openai-compatible backend needs a URL")
        url, _, model = rest.partition("#")
        if model:
            kwargs["model"] = model
        return OpenAICompatibleBackend(url, api_key_env=api_key_env, **kwargs)
    raise ValueError(f"unknown backend {spec!r}")

