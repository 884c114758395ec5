"""Chat-completion backends.

Every backend shares the same call path: a conservative context-budget
check, a shared per-endpoint rate limiter, bounded exponential-backoff
retries on transport errors, and a thread-safe transcript of exchanges.
Subclasses only implement :meth:`LMBackend._send`.
"""

from __future__ import annotations

import logging
import math
import os
import re
import threading
import time
from collections import deque
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import httpx

from .env_graph import NavGraph, geodesic
from .errors import (
    BackendFailure,
    ConfigError,
    ContextOverflow,
    RateLimited,
    TransportFailure,
)

if TYPE_CHECKING:
    from .dataset import EpisodeSpec

log = logging.getLogger(__name__)

Message = Mapping[str, str]

CHARS_PER_TOKEN = 4
MESSAGE_OVERHEAD_TOKENS = 4
ROLES = ("system", "user", "assistant")


def estimate_tokens(messages: Iterable[Message]) -> int:
    """Character-count token bound: ceil(chars / 4) plus a fixed per-message overhead."""
    chars = 0
    count = 0
    for m in messages:
        chars += len(m["content"])
        count += 1
    return math.ceil(chars / CHARS_PER_TOKEN) + MESSAGE_OVERHEAD_TOKENS * count


def check_roles(messages: Sequence[Message]) -> None:
    for i, m in enumerate(messages):
        role = m.get("role")
        if role not in ROLES:
            raise ValueError(f"message {i} has unknown role {role!r}")
        if role == "system" and i != 0:
            raise ValueError("a system message may only appear first")


@dataclass(frozen=True)
class ChatExchange:
    model_id: str
    messages: tuple[dict[str, str], ...]
    response: str
    token_estimate: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "model_id": self.model_id,
            "messages": [dict(m) for m in self.messages],
            "response": self.response,
            "token_estimate": self.token_estimate,
        }


class TokenBucket:
    """Blocking token-bucket limiter; ``rate_per_minute`` tokens refill per minute."""

    def __init__(self, rate_per_minute: float, capacity: float | None = None, clock=time.monotonic, sleep=time.sleep):
        if rate_per_minute <= 0:
            raise ValueError("rate_per_minute must be positive")
        self.rate = rate_per_minute / 60.0
        self.capacity = capacity if capacity is not None else max(1.0, rate_per_minute / 60.0)
        self._tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            self._sleep(wait)


_LIMITERS: dict[str, TokenBucket] = {}
_LIMITERS_LOCK = threading.Lock()


def shared_limiter(endpoint: str, rate_per_minute: float) -> TokenBucket:
    """One limiter per endpoint, shared by every backend that talks to it."""
    with _LIMITERS_LOCK:
        bucket = _LIMITERS.get(endpoint)
        if bucket is None:
            bucket = _LIMITERS[endpoint] = TokenBucket(rate_per_minute)
        return bucket


class LMBackend:
    """Base chat backend. Subclasses implement :meth:`_send`."""

    endpoint = "builtin"

    def __init__(
        self,
        model_id: str,
        context_window: int = 8192,
        temperature: float = 0.0,
        max_tokens: int = 512,
        max_attempts: int = 3,
        backoff: float = 0.5,
        limiter: TokenBucket | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not model_id:
            raise ValueError("model_id must be nonempty")
        if context_window <= 0:
            raise ValueError("context_window must be positive")
        if max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")
        self.model_id = model_id
        self.context_window = context_window
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.limiter = limiter
        self._sleep = sleep
        self._transcript: list[ChatExchange] = []
        self._lock = threading.Lock()
        self.send_count = 0

    @property
    def transcript(self) -> list[ChatExchange]:
        with self._lock:
            return list(self._transcript)

    def complete(self, messages: Sequence[Message]) -> str:
        """Send one chat request and return the response text.

        Raises :class:`ContextOverflow` before any transport when the
        estimated prompt plus ``max_tokens`` exceeds the context window.
        """
        frozen = tuple(dict(m) for m in messages)
        check_roles(frozen)
        estimate = estimate_tokens(frozen)
        if estimate + self.max_tokens > self.context_window:
            raise ContextOverflow(
                f"{self.model_id}: ~{estimate} prompt tokens + {self.max_tokens} output "
                f"exceed the {self.context_window}-token window"
            )
        last: BackendFailure | None = None
        for attempt in range(self.max_attempts):
            if self.limiter is not None:
                self.limiter.acquire()
            with self._lock:
                self.send_count += 1
            try:
                text = self._send(frozen)
                if not text or not text.strip():
                    raise TransportFailure(f"{self.model_id}: empty response")
            except (TransportFailure, RateLimited) as exc:
                last = exc
                log.warning("%s attempt %d/%d failed: %s", self.model_id, attempt + 1, self.max_attempts, exc)
                if attempt + 1 < self.max_attempts:
                    self._sleep(self.backoff * 2**attempt)
                continue
            with self._lock:
                self._transcript.append(ChatExchange(self.model_id, frozen, text, estimate))
            return text
        assert last is not None
        raise last

    def _send(self, messages: tuple[dict[str, str], ...]) -> str:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}(model_id={self.model_id!r})"


class ScriptedBackend(LMBackend):
    """Replays a fixed queue of responses.

    Queue items are strings, exception instances (raised when reached) or
    callables ``f(messages) -> str``. An exhausted queue is a non-retried
    :class:`BackendFailure`.
    """

    def __init__(self, responses: Iterable[Any], model_id: str = "scripted", **kwargs):
        kwargs.setdefault("context_window", 1_000_000)
        kwargs.setdefault("sleep", lambda _s: None)
        super().__init__(model_id, **kwargs)
        self._queue = deque(responses)

    @property
    def remaining(self) -> int:
        with self._lock:
            return len(self._queue)

    def _send(self, messages):
        with self._lock:
            if not self._queue:
                raise BackendFailure(f"{self.model_id}: script exhausted")
            item = self._queue.popleft()
        if isinstance(item, BaseException):
            raise item
        if callable(item):
            return item(messages)
        return str(item)


class FunctionBackend(LMBackend):
    """Deterministic backend computing each reply as ``fn(messages)``."""

    def __init__(self, fn: Callable[[tuple[dict[str, str], ...]], str], model_id: str = "function", **kwargs):
        kwargs.setdefault("context_window", 1_000_000)
        kwargs.setdefault("sleep", lambda _s: None)
        super().__init__(model_id, **kwargs)
        self._fn = fn

    def _send(self, messages):
        return self._fn(messages)


# The step prompt always carries the current viewpoint under one of these labels.
CURRENT_VIEWPOINT_LABELS = ("Current viewpoint", "نقطة المشاهدة الحالية")
_CURRENT_VP = re.compile(
    r"(?:" + "|".join(re.escape(lbl) for lbl in CURRENT_VIEWPOINT_LABELS) + r")\s*:\s*([A-Za-z0-9_\-]+)"
)


def find_current_viewpoint(messages: Sequence[Message]) -> str | None:
    found = None
    for m in messages:
        for match in _CURRENT_VP.finditer(m["content"]):
            found = match.group(1)
    return found


def oracle_response(episode: EpisodeSpec, graph: NavGraph | None, viewpoint: str | None) -> str:
    """Canonical ReAct reply that follows the episode's ground truth."""
    path = episode.ground_truth_path
    if viewpoint is None:
        return "Thought: I cannot locate my current viewpoint.\nAction: stop\nAction Input: stop"
    if viewpoint == path[-1]:
        return "Thought: I have reached the goal.\nAction: stop\nAction Input: stop"
    if viewpoint in path:
        idx = len(path) - 1 - path[::-1].index(viewpoint)
        nxt = path[idx + 1]
        return f"Thought: The route continues to {nxt}.\nAction: move\nAction Input: {nxt}"
    if graph is None or viewpoint not in graph:
        return "Thought: I am off the route and cannot recover.\nAction: stop\nAction Input: stop"
    dist = graph.distances_from(viewpoint)
    reachable = [(dist[p], -i, p) for i, p in enumerate(path) if p in dist]
    if not reachable:
        return "Thought: The route is unreachable from here.\nAction: stop\nAction Input: stop"
    _, _, target = min(reachable)
    nxt = min(graph.neighbors(viewpoint).items(), key=lambda kv: (kv[1] + geodesic(graph, kv[0], target), kv[0]))[0]
    return f"Thought: I am off the route; heading back toward {target}.\nAction: move\nAction Input: {nxt}"


class OracleBackend(LMBackend):
    """Deterministic stand-in model that emits ground-truth moves for one episode."""

    def __init__(self, episode: EpisodeSpec, graph: NavGraph | None = None, model_id: str = "oracle", **kwargs):
        kwargs.setdefault("context_window", 1_000_000)
        super().__init__(model_id, **kwargs)
        self.episode = episode
        self.graph = graph

    def _send(self, messages):
        return oracle_response(self.episode, self.graph, find_current_viewpoint(messages))


def make_oracle_backend(episode: EpisodeSpec, graph: NavGraph | None = None, **kwargs) -> OracleBackend:
    return OracleBackend(episode, graph, **kwargs)


_OVERFLOW_HINTS = ("context_length_exceeded", "context length", "maximum context", "too many tokens", "context window")


class OpenAICompatibleBackend(LMBackend):
    """Chat-completions over HTTP (OpenAI schema; Azure when ``api_version`` is set)."""

    def __init__(
        self,
        model_id: str,
        base_url: str,
        api_key: str | None = None,
        api_version: str | None = None,
        timeout: float = 60.0,
        rate_per_minute: float | None = None,
        client: httpx.Client | None = None,
        **kwargs,
    ):
        if rate_per_minute and "limiter" not in kwargs:
            kwargs["limiter"] = shared_limiter(base_url, rate_per_minute)
        super().__init__(model_id, **kwargs)
        self.endpoint = base_url.rstrip("/")
        self.api_key = api_key
        self.api_version = api_version
        self._client = client or httpx.Client(timeout=timeout)

    def _request(self, messages) -> httpx.Request:
        headers = {"Content-Type": "application/json"}
        params = {}
        if self.api_version:
            params["api-version"] = self.api_version
            if self.api_key:
                headers["api-key"] = self.api_key
        elif self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": self.model_id,
            "messages": list(messages),
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        return self._client.build_request(
            "POST", f"{self.endpoint}/chat/completions", json=body, headers=headers, params=params
        )

    def _send(self, messages):
        try:
            resp = self._client.send(self._request(messages))
        except httpx.HTTPError as exc:
            raise TransportFailure(f"{self.model_id}: {exc}") from exc
        if resp.status_code == 429:
            raise RateLimited(f"{self.model_id}: HTTP 429")
        if resp.status_code >= 500:
            raise TransportFailure(f"{self.model_id}: HTTP {resp.status_code}")
        if resp.status_code >= 400:
            detail = resp.text.lower()
            if any(h in detail for h in _OVERFLOW_HINTS):
                raise ContextOverflow(f"{self.model_id}: endpoint reported context overflow")
            raise BackendFailure(f"{self.model_id}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            payload = resp.json()
            choice = payload["choices"][0]
            content = choice["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportFailure(f"{self.model_id}: unreadable response body") from exc
        if choice.get("finish_reason") == "length" and not content.strip():
            raise ContextOverflow(f"{self.model_id}: generation truncated by context limit")
        return content


@dataclass
class BackendConfig:
    """Per-backend configuration block."""

    kind: str = "openai"
    model_id: str = "gpt-4o-mini"
    label: str | None = None
    base_url: str | None = None
    api_key_env: str | None = None
    api_version: str | None = None
    context_window: int = 8192
    temperature: float = 0.0
    max_tokens: int = 512
    rate_per_minute: float | None = None
    max_attempts: int = 3
    script: list[str] = field(default_factory=list)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> BackendConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown backend keys {sorted(unknown)}")
        try:
            cfg = cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        if cfg.kind not in ("openai", "azure", "oracle", "scripted"):
            raise ConfigError(f"unknown backend kind {cfg.kind!r}")
        if cfg.context_window <= 0:
            raise ConfigError("context_window must be positive")
        if not cfg.model_id:
            raise ConfigError("model_id must be nonempty")
        if cfg.kind in ("openai", "azure") and not cfg.base_url:
            raise ConfigError(f"{cfg.kind} backend needs base_url")
        return cfg

    @property
    def display_label(self) -> str:
        return self.label or self.model_id


def build_backend(cfg: BackendConfig, episode: EpisodeSpec | None = None, graph: NavGraph | None = None) -> LMBackend:
    common = dict(
        context_window=cfg.context_window,
        temperature=cfg.temperature,
        max_tokens=cfg.max_tokens,
        max_attempts=cfg.max_attempts,
    )
    if cfg.kind == "oracle":
        if episode is None:
            raise ConfigError("oracle backend is built per episode")
        return OracleBackend(episode, graph, model_id=cfg.model_id, **common)
    if cfg.kind == "scripted":
        return ScriptedBackend(list(cfg.script), model_id=cfg.model_id, **common)
    api_key = None
    if cfg.api_key_env:
        api_key = os.environ.get(cfg.api_key_env)
        if api_key is None:
            raise ConfigError(f"environment variable {cfg.api_key_env} is not set")
    return OpenAICompatibleBackend(
        cfg.model_id,
        cfg.base_url,
        api_key=api_key,
        api_version=cfg.api_version if cfg.kind == "azure" else None,
        rate_per_minute=cfg.rate_per_minute,
        **common,
    )


__all__ = [
    "BackendConfig",
    "ChatExchange",
    "FunctionBackend",
    "LMBackend",
    "OpenAICompatibleBackend",
    "OracleBackend",
    "ScriptedBackend",
    "TokenBucket",
    "build_backend",
    "estimate_tokens",
    "find_current_viewpoint",
    "make_oracle_backend",
]
