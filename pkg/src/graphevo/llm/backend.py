"""Chat-completion backends: a live HTTP client and a scripted stand-in for tests."""
from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import httpx

from ..errors import BackendError, Exhausted, NoScriptMatch

log = logging.getLogger(__name__)

API_KEY_ENV = "HIVA_API_KEY"
MAX_TOKENS_CAP = 4096


@dataclass(frozen=True)
class ChatRequest:
    system: str
    user: str
    temperature: float = 1.0
    max_tokens: int = 1000
    template: str | None = None

    def __post_init__(self):
        if not self.user:
            raise ValueError("user message must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.max_tokens <= MAX_TOKENS_CAP:
            raise ValueError(f"max_tokens must be in (0, {MAX_TOKENS_CAP}]")


@dataclass(frozen=True)
class BackendPolicy:
    timeout: float = 60.0
    max_retries: int = 3
    backoff: float = 0.5

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


class ChatBackend:
    """Common bookkeeping: call count and character volume for cost estimates."""

    def __init__(self):
        self._lock = threading.Lock()
        self.calls: list[ChatRequest] = []
        self.prompt_chars = 0
        self.completion_chars = 0

    def complete(self, request: ChatRequest, policy: BackendPolicy | None = None) -> str:
        text = self._complete(request, policy or BackendPolicy())
        with self._lock:
            self.calls.append(request)
            self.prompt_chars += len(request.system) + len(request.user)
            self.completion_chars += len(text)
        return text

    def _complete(self, request: ChatRequest, policy: BackendPolicy) -> str:
        raise NotImplementedError

    @property
    def call_count(self) -> int:
        return len(self.calls)

    def estimated_tokens(self) -> float:
        return (self.prompt_chars + self.completion_chars) / 4.0


class LiveBackend(ChatBackend):
    """OpenAI-style ``POST {base_url}/chat/completions`` client with retries.

    Timeouts, transport failures and 5xx/429 responses are retried with
    exponential backoff; other HTTP errors fail immediately.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        super().__init__()
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self._transport = transport
        self._sleep = sleep
        self.attempts = 0

    def payload(self, request: ChatRequest) -> dict:
        messages = []
        if request.system:
            messages.append({"role": "system", "content": request.system})
        messages.append({"role": "user", "content": request.user})
        return {
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }

    def _complete(self, request: ChatRequest, policy: BackendPolicy) -> str:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        last: Exception | None = None
        with httpx.Client(transport=self._transport, timeout=policy.timeout) as client:
            for attempt in range(policy.max_retries + 1):
                if attempt:
                    self._sleep(policy.backoff * 2 ** (attempt - 1))
                self.attempts += 1
                try:
                    resp = client.post(f"{self.base_url}/chat/completions", json=self.payload(request), headers=headers)
                except (httpx.TimeoutException, httpx.TransportError) as exc:
                    last = exc
                    log.warning("chat request attempt %d failed: %s", attempt + 1, exc)
                    continue
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = BackendError(f"HTTP {resp.status_code}")
                    continue
                if resp.status_code >= 400:
                    raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                try:
                    return resp.json()["choices"][0]["message"]["content"]
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    raise BackendError(f"malformed completion payload: {exc}") from exc
        raise Exhausted(policy.max_retries + 1, last)


Responder = str | list | Callable[[ChatRequest], str]


@dataclass
class ScriptRule:
    """One scripted reply.

    ``match`` is ``"exact"`` or ``"contains"``; ``pattern`` may be a list for
    contains-rules, in which case every fragment must occur. A list response is
    consumed in order and its last entry repeats.
    """

    pattern: str | list[str]
    response: Responder
    match: str = "contains"
    field: str = "user"
    template: str | None = None
    hits: int = 0

    def matches(self, request: ChatRequest) -> bool:
        if self.template is not None and request.template != self.template:
            return False
        text = request.user if self.field == "user" else request.system
        if self.match == "exact":
            return text == self.pattern
        fragments = [self.pattern] if isinstance(self.pattern, str) else self.pattern
        return all(f in text for f in fragments)

    def reply(self, request: ChatRequest) -> str:
        resp = self.response
        self.hits += 1
        if callable(resp):
            return resp(request)
        if isinstance(resp, list):
            return resp[min(self.hits, len(resp)) - 1]
        return resp


class ScriptedBackend(ChatBackend):
    """Deterministic backend: exact rules first, then contains rules, then the default."""

    def __init__(self, rules: list[ScriptRule] = (), default: Responder | None = None):
        super().__init__()
        self.rules = list(rules)
        self.default = default

    def add(self, pattern, response: Responder, **kw) -> ScriptedBackend:
        self.rules.append(ScriptRule(pattern, response, **kw))
        return self

    def _complete(self, request: ChatRequest, policy: BackendPolicy) -> str:
        with self._lock:
            ordered = [r for r in self.rules if r.match == "exact"] + [r for r in self.rules if r.match != "exact"]
            for rule in ordered:
                if rule.matches(request):
                    return rule.reply(request)
            if self.default is None:
                raise NoScriptMatch(f"no scripted reply for request: {request.user[:120]!r}")
            if callable(self.default):
                return self.default(request)
            return self.default

    @classmethod
    def from_dict(cls, data: dict) -> ScriptedBackend:
        rules = []
        for raw in data.get("rules", []):
            response = raw["responses"] if "responses" in raw else raw["response"]
            rules.append(
                ScriptRule(
                    pattern=raw["pattern"],
                    response=response,
                    match=raw.get("match", "contains"),
                    field=raw.get("field", "user"),
                    template=raw.get("template"),
                )
            )
        return cls(rules, data.get("default"))

    @classmethod
    def load(cls, path: str | Path) -> ScriptedBackend:
        return cls.from_dict(json.loads(Path(path).read_text()))
