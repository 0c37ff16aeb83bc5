"""Language-model backends: remote chat endpoint, rule-table mock, record/replay cache."""
from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import httpx

POLICY_TEMPERATURE = 0.2
DEFAULT_POLICY_MODEL = "gpt-4o-mini"
DEFAULT_DEBRIEF_MODEL = "gpt-4o"

ENV_API_BASE = "PARLEY_API_BASE"
ENV_API_KEY = "PARLEY_API_KEY"
ENV_POLICY_MODEL = "PARLEY_POLICY_MODEL"
ENV_DEBRIEF_MODEL = "PARLEY_DEBRIEF_MODEL"


class BackendError(RuntimeError):
    pass


class TransientBackendError(BackendError):
    """Network failure or rate limit; the caller may retry."""


class CacheMiss(BackendError):
    """Strict replay saw a request that was never recorded."""


class BackendExhausted(BackendError):
    """Call budget used up."""


class MissingCredentials(BackendError):
    pass


@dataclass(frozen=True)
class CompletionRequest:
    messages: tuple[tuple[str, str], ...]  # (role, content)
    temperature: float = POLICY_TEMPERATURE
    max_tokens: int = 512
    model: str = DEFAULT_POLICY_MODEL
    purpose: str = "policy"  # policy | debrief

    def canonical(self) -> str:
        return json.dumps(
            {
                "messages": [list(m) for m in self.messages],
                "temperature": self.temperature,
                "max_tokens": self.max_tokens,
                "model": self.model,
                "purpose": self.purpose,
            },
            sort_keys=True,
            ensure_ascii=True,
            separators=(",", ":"),
        )

    def key(self) -> str:
        return hashlib.sha256(self.canonical().encode("ascii")).hexdigest()

    @property
    def text(self) -> str:
        return "\n\n".join(content for _, content in self.messages)


@dataclass(frozen=True)
class Completion:
    text: str
    latency: float


def policy_request(messages, model: str | None = None, max_tokens: int = 512) -> CompletionRequest:
    return CompletionRequest(tuple(messages), POLICY_TEMPERATURE, max_tokens,
                             model or os.environ.get(ENV_POLICY_MODEL, DEFAULT_POLICY_MODEL), "policy")


def debrief_request(messages, model: str | None = None, max_tokens: int = 1024) -> CompletionRequest:
    return CompletionRequest(tuple(messages), POLICY_TEMPERATURE, max_tokens,
                             model or os.environ.get(ENV_DEBRIEF_MODEL, DEFAULT_DEBRIEF_MODEL), "debrief")


class Backend:
    kind = "abstract"

    def complete(self, req: CompletionRequest) -> Completion:
        raise NotImplementedError


class MockBackend(Backend):
    """Ordered (pattern, response) rules; the first regex found in the request wins.

    A response may be a string or a pure function of the request.
    """

    kind = "mock"

    def __init__(self, rules=(), default=None):
        self.rules = [(re.compile(p, re.DOTALL), r) for p, r in rules]
        self.default = default

    def complete(self, req: CompletionRequest) -> Completion:
        text = req.text
        for pat, resp in self.rules:
            if pat.search(text):
                return Completion(resp(req) if callable(resp) else resp, 0.0)
        if self.default is None:
            raise BackendError("no mock rule matches the request")
        return Completion(self.default(req) if callable(self.default) else self.default, 0.0)


class RemoteBackend(Backend):
    """Chat-completions-compatible HTTP endpoint."""

    kind = "remote"

    def __init__(self, base_url: str | None = None, api_key: str | None = None,
                 client: httpx.Client | None = None, timeout: float = 60.0):
        self.base_url = (base_url or os.environ.get(ENV_API_BASE) or "https://api.openai.com/v1").rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY)
        if not self.api_key:
            raise MissingCredentials(f"set {ENV_API_KEY} to use the remote backend")
        self.client = client or httpx.Client(timeout=timeout)

    def complete(self, req: CompletionRequest) -> Completion:
        payload = {
            "model": req.model,
            "messages": [{"role": r, "content": c} for r, c in req.messages],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        t0 = time.perf_counter()
        try:
            resp = self.client.post(
                f"{self.base_url}/chat/completions",
                json=payload,
                headers={"Authorization": f"Bearer {self.api_key}"},
            )
        except httpx.TransportError as exc:
            raise TransientBackendError(str(exc)) from exc
        latency = time.perf_counter() - t0
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientBackendError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            text = resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise BackendError("malformed completion response") from exc
        return Completion(text, latency)


class ReplayBackend(Backend):
    """Content-addressed request/response cache.

    In strict mode an unseen request is a hard error; otherwise it is
    forwarded to ``inner`` and recorded.
    """

    kind = "replay"

    def __init__(self, cache_dir, inner: Backend | None = None, strict: bool = True):
        self.cache_dir = Path(cache_dir)
        self.inner = inner
        self.strict = strict
        self._lock = threading.Lock()
        if not strict and inner is None:
            raise ValueError("non-strict replay needs an inner backend to record from")

    def _path(self, key: str) -> Path:
        return self.cache_dir / key[:2] / f"{key}.json"

    def complete(self, req: CompletionRequest) -> Completion:
        key = req.key()
        path = self._path(key)
        if path.exists():
            rec = json.loads(path.read_text())
            return Completion(rec["response"], rec.get("latency", 0.0))
        if self.strict:
            raise CacheMiss(f"no recorded response for request {key[:12]}")
        out = self.inner.complete(req)
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_text(json.dumps({"request": json.loads(req.canonical()), "response": out.text,
                                       "latency": out.latency}, indent=1, sort_keys=True))
            tmp.replace(path)
        return out


@dataclass
class BudgetedBackend(Backend):
    """Wraps a backend and fails with BackendExhausted after ``max_calls``."""

    inner: Backend
    max_calls: int
    calls: int = field(default=0)
    kind = "budgeted"

    def complete(self, req: CompletionRequest) -> Completion:
        if self.calls >= self.max_calls:
            raise BackendExhausted(f"call budget of {self.max_calls} exhausted")
        self.calls += 1
        return self.inner.complete(req)


def complete(req: CompletionRequest, backend: Backend) -> Completion:
    return backend.complete(req)


def load_mock_rules(path) -> MockBackend:
    """Rule table from a JSON or YAML file: ``{"rules": [[pattern, response], ...], "default": ...}``."""
    import yaml

    doc = yaml.safe_load(Path(path).read_text())
    rules = []
    for r in doc.get("rules", []):
        resp = r[1] if isinstance(r[1], str) else json.dumps(r[1], sort_keys=True)
        rules.append((r[0], resp))
    default = doc.get("default")
    if default is not None and not isinstance(default, str):
        default = json.dumps(default, sort_keys=True)
    return MockBackend(rules, default)


def make_backend(kind: str, *, mock_rules=None, cache_dir=None, api_base=None) -> Backend:
    """Backend factory for the CLI. ``kind`` is mock, remote, replay (strict) or record."""
    if kind == "mock":
        return load_mock_rules(mock_rules) if mock_rules else default_mock()
    if kind == "remote":
        return RemoteBackend(api_base)
    if kind == "replay":
        return ReplayBackend(cache_dir, strict=True)
    if kind == "record":
        return ReplayBackend(cache_dir, inner=RemoteBackend(api_base), strict=False)
    raise ValueError(f"unknown backend kind {kind!r}")


def default_mock() -> MockBackend:
    """A cautious offline stand-in: reasons tersely, proceeds at 8 m/s, summarises plainly."""
    return MockBackend(
        rules=[
            (r"Respond with a JSON object with keys \"knowledge\" and \"strategy\"",
             json.dumps({"knowledge": "Watch for hidden traffic and coordinate before committing.",
                         "strategy": "Announce intentions early and yield when asked."})),
            (r"Respond with a JSON object with the key \"knowledge\"",
             json.dumps({"knowledge": "Slow down early when the view ahead is blocked."})),
            (r"Respond with a JSON object with keys \"command\" and \"message\"",
             json.dumps({"command": "go 8", "message": "Proceeding."})),
            (r"Propose a joint cooperative strategy|Respond to the proposal",
             "Proposal: announce intentions early; the vehicle with the better view warns the others."),
            (r"Think step by step", "The road ahead looks manageable; I will proceed carefully."),
        ],
        default="Proceeding carefully.",
    )
