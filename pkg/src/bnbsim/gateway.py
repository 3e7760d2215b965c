"""Client for chat-completions and embeddings endpoints.

Speaks the common JSON wire protocol (``POST {base_url}/chat/completions`` and
``POST {base_url}/embeddings``) so any compatible provider or local server
works. Transient failures (timeouts, 429, 5xx) are retried with exponential
backoff and jitter; authentication failures are not.
"""
from __future__ import annotations

import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable

import httpx

__all__ = [
    "AuthError",
    "ChatRequest",
    "Gateway",
    "GatewayConfig",
    "GatewayError",
    "GatewayStats",
    "MalformedResponse",
    "RetriesExhausted",
    "RetryPolicy",
]

log = logging.getLogger(__name__)

LATENCY_BUCKETS = (0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0, float("inf"))


class GatewayError(Exception):
    pass


class AuthError(GatewayError):
    pass


class RetriesExhausted(GatewayError):
    pass


class MalformedResponse(GatewayError):
    pass


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 5
    base_delay: float = 1.0
    factor: float = 2.0
    jitter: float = 0.2
    max_delay: float = 30.0

    def delay(self, retry: int, rng: random.Random) -> float:
        """Sleep before retry number ``retry`` (1-based)."""
        d = min(self.base_delay * self.factor ** (retry - 1), self.max_delay)
        return max(0.0, d * (1 + rng.uniform(-self.jitter, self.jitter)))


@dataclass(frozen=True)
class GatewayConfig:
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4o"
    embedding_model: str = "text-embedding-3-small"
    temperature: float = 0.7
    max_tokens: int | None = None
    timeout: float = 60.0
    max_concurrency: int = 4
    api_key_env: str = "OPENAI_API_KEY"
    embed_batch_size: int = 64
    retry: RetryPolicy = field(default_factory=RetryPolicy)


@dataclass
class ChatRequest:
    messages: list[dict[str, str]]
    model: str | None = None
    temperature: float = 0.7
    max_tokens: int | None = None

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("chat request needs at least one message")
        for i, m in enumerate(self.messages):
            if m.get("role") not in ("system", "user", "assistant"):
                raise ValueError(f"messages[{i}].role must be system, user or assistant")
            if not isinstance(m.get("content"), str):
                raise ValueError(f"messages[{i}].content must be a string")
        if self.messages[0]["role"] != "system":
            raise ValueError("first message must be the role's system prompt")


@dataclass
class GatewayStats:
    requests: int = 0
    retries: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    total_tokens: int = 0
    latency: dict[str, int] = field(default_factory=lambda: {f"le_{b:g}": 0 for b in LATENCY_BUCKETS})

    def observe(self, seconds: float) -> None:
        for b in LATENCY_BUCKETS:
            if seconds <= b:
                self.latency[f"le_{b:g}"] += 1
                break

    def snapshot(self) -> dict[str, Any]:
        return {
            "requests": self.requests,
            "retries": self.retries,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "total_tokens": self.total_tokens,
            "latency": dict(self.latency),
        }


class Gateway:
    """Shareable handle; at most ``config.max_concurrency`` requests in flight."""

    def __init__(
        self,
        config: GatewayConfig | None = None,
        *,
        api_key: str | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self.config = config or GatewayConfig()
        key = api_key if api_key is not None else os.environ.get(self.config.api_key_env)
        if not key:
            raise AuthError(f"no API key: set the {self.config.api_key_env} environment variable")
        self._key = key
        self._client = httpx.Client(
            base_url=self.config.base_url.rstrip("/"),
            timeout=self.config.timeout,
            transport=transport,
            headers={"Authorization": f"Bearer {key}", "Content-Type": "application/json"},
        )
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._slots = threading.BoundedSemaphore(max(1, self.config.max_concurrency))
        self._lock = threading.Lock()
        self.stats = GatewayStats()

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "Gateway":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _scrub(self, text: str) -> str:
        return text.replace(self._key, "***")

    def _post(self, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        policy = self.config.retry
        last_error = "no attempt made"
        for attempt in range(1, policy.attempts + 1):
            if attempt > 1:
                with self._lock:
                    self.stats.retries += 1
                self._sleep(policy.delay(attempt - 1, self._rng))
            if log.isEnabledFor(logging.DEBUG):
                log.debug("POST %s attempt %d body=%s", path, attempt, self._scrub(json.dumps(payload)))
            t0 = time.perf_counter()
            try:
                with self._slots:
                    resp = self._client.post(path, json=payload)
            except (httpx.TimeoutException, httpx.TransportError) as exc:
                last_error = f"{type(exc).__name__}: {self._scrub(str(exc))}"
                log.warning("transient transport error on %s (attempt %d): %s", path, attempt, last_error)
                continue
            finally:
                with self._lock:
                    self.stats.requests += 1
                    self.stats.observe(time.perf_counter() - t0)
            if resp.status_code in (401, 403):
                raise AuthError(f"{path}: HTTP {resp.status_code} (check credentials)")
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = f"HTTP {resp.status_code}"
                log.warning("transient HTTP %d on %s (attempt %d)", resp.status_code, path, attempt)
                continue
            if resp.status_code >= 400:
                raise GatewayError(f"{path}: HTTP {resp.status_code}: {self._scrub(resp.text[:500])}")
            if log.isEnabledFor(logging.DEBUG):
                log.debug("response %s body=%s", path, self._scrub(resp.text[:2000]))
            try:
                body = resp.json()
            except ValueError as exc:
                raise MalformedResponse(f"{path}: response is not JSON") from exc
            if not isinstance(body, dict):
                raise MalformedResponse(f"{path}: response is not a JSON object")
            self._record_usage(body.get("usage"))
            return body
        raise RetriesExhausted(f"{path}: gave up after {policy.attempts} attempts ({last_error})")

    def _record_usage(self, usage: Any) -> None:
        if not isinstance(usage, dict):
            return
        with self._lock:
            for key in ("prompt_tokens", "completion_tokens", "total_tokens"):
                value = usage.get(key)
                if isinstance(value, int):
                    setattr(self.stats, key, getattr(self.stats, key) + value)

    def chat(self, request: ChatRequest) -> str:
        payload: dict[str, Any] = {
            "model": request.model or self.config.model,
            "messages": request.messages,
            "temperature": request.temperature,
        }
        max_tokens = request.max_tokens or self.config.max_tokens
        if max_tokens:
            payload["max_tokens"] = max_tokens
        body = self._post("/chat/completions", payload)
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse("chat response lacks choices[0].message.content") from exc
        if not isinstance(content, str) or not content.strip():
            raise MalformedResponse("chat response content is empty")
        return content

    def embed_texts(self, texts: list[str], *, model: str | None = None) -> list[list[float]]:
        if not texts:
            raise ValueError("embed_texts needs at least one input")
        for i, t in enumerate(texts):
            if not isinstance(t, str) or not t.strip():
                raise ValueError(f"texts[{i}] is empty; embeddings need non-empty input")
        size = max(1, self.config.embed_batch_size)
        out: list[list[float]] = []
        for lo in range(0, len(texts), size):
            batch = texts[lo : lo + size]
            body = self._post("/embeddings", {"model": model or self.config.embedding_model, "input": batch})
            data = body.get("data")
            if not isinstance(data, list) or len(data) != len(batch):
                raise MalformedResponse(f"embedding response has {len(data) if isinstance(data, list) else 'no'} items for {len(batch)} inputs")
            # providers may return items out of order; "index" is authoritative
            try:
                items = sorted(data, key=lambda d: d.get("index", 0))
                vectors = [list(map(float, d["embedding"])) for d in items]
            except (KeyError, TypeError, ValueError, AttributeError) as exc:
                raise MalformedResponse("embedding response item lacks a numeric 'embedding'") from exc
            out.extend(vectors)
        return out
