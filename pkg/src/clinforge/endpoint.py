"""Client for OpenAI-compatible ``/chat/completions`` endpoints."""
from __future__ import annotations

import json
import logging
import os
import threading
import time
import uuid
from dataclasses import asdict, dataclass, fields
from typing import Mapping, Sequence

import httpx

log = logging.getLogger(__name__)

_FILTER_MARKERS = ("content_filter", "content management policy", "moderation", "flagged")


class ConfigError(ValueError):
    pass


class EndpointError(RuntimeError):
    """Non-retryable failure (auth, bad request, malformed response)."""


class GenerationSkipped(Exception):
    reason = "skipped"

    def __init__(self, message: str, request_id: str | None = None):
        super().__init__(message)
        self.request_id = request_id


class ContentFiltered(GenerationSkipped):
    reason = "content_filtered"


class ExhaustedRetries(GenerationSkipped):
    reason = "exhausted_retries"


class EmptyResponse(GenerationSkipped):
    reason = "empty"


def read_key_value(path: str | os.PathLike) -> dict[str, str]:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are ignored."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


@dataclass(frozen=True)
class ChatEndpointConfig:
    base_url: str
    model_name: str = "gpt-35-turbo"
    temperature: float = 0.7
    max_output_tokens: int = 1024
    api_key_env: str = "OPENAI_API_KEY"
    max_retries: int = 5
    max_in_flight: int = 4
    min_request_interval: float = 0.0
    backoff_base: float = 1.0
    backoff_max: float = 60.0
    timeout: float = 120.0
    max_note_tokens: int = 1500

    def __post_init__(self):
        if not self.base_url:
            raise ConfigError("base_url must be set")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if self.max_in_flight < 1:
            raise ConfigError("max_in_flight must be >= 1")
        if self.min_request_interval < 0:
            raise ConfigError("min_request_interval must be >= 0")

    @classmethod
    def from_mapping(cls, values: Mapping[str, str]) -> "ChatEndpointConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        unknown = set(values) - set(kinds)
        if unknown:
            raise ConfigError(f"unknown endpoint config keys: {', '.join(sorted(unknown))}")
        kw = {}
        for k, v in values.items():
            conv = {"int": int, "float": float}.get(kinds[k], str)
            try:
                kw[k] = conv(v)
            except ValueError:
                raise ConfigError(f"{k}: cannot parse {v!r}") from None
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "ChatEndpointConfig":
        return cls.from_mapping(read_key_value(path))

    def api_key(self) -> str | None:
        if not self.api_key_env:
            return None
        key = os.environ.get(self.api_key_env)
        if not key:
            raise ConfigError(f"API key environment variable {self.api_key_env} is not set")
        return key

    def to_json(self) -> dict:
        return asdict(self)


class RateLimiter:
    """Spaces request starts at least ``interval`` seconds apart across threads.

    Waiters are serialized on the lock, so the gap holds between actual
    start times, not just scheduled ones.
    """

    def __init__(self, interval: float):
        self.interval = interval
        self._last = float("-inf")
        self._lock = threading.Lock()

    def wait(self) -> None:
        if self.interval <= 0:
            return
        with self._lock:
            remaining = self._last + self.interval - time.monotonic()
            while remaining > 0:
                time.sleep(remaining)
                remaining = self._last + self.interval - time.monotonic()
            self._last = time.monotonic()


def _is_filtered(status: int, body: str) -> bool:
    try:
        err = json.loads(body).get("error") or {}
    except (ValueError, AttributeError):
        err = {}
    if isinstance(err, dict) and err.get("code") == "content_filter":
        return True
    return status == 400 and any(m in body.lower() for m in _FILTER_MARKERS)


class ChatClient:
    """Thread-safe chat-completion client with retry, backoff and rate limiting."""

    def __init__(self, config: ChatEndpointConfig, http: httpx.Client | None = None):
        self.config = config
        headers = {"Content-Type": "application/json"}
        key = config.api_key()
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._owns_http = http is None
        self._http = http or httpx.Client(timeout=config.timeout)
        self._headers = headers
        self._limiter = RateLimiter(config.min_request_interval)
        self._slots = threading.BoundedSemaphore(config.max_in_flight)
        self._lock = threading.Lock()
        self.requests = 0
        self.retries = 0

    @property
    def url(self) -> str:
        return self.config.base_url.rstrip("/") + "/chat/completions"

    def close(self) -> None:
        if self._owns_http:
            self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _delay(self, attempt: int, resp: httpx.Response | None) -> float:
        if resp is not None:
            ra = resp.headers.get("retry-after")
            if ra:
                try:
                    return min(float(ra), self.config.backoff_max)
                except ValueError:
                    pass
        return min(self.config.backoff_base * 2 ** attempt, self.config.backoff_max)

    def complete(self, messages: Sequence[Mapping[str, str]]) -> str:
        cfg = self.config
        body = {"model": cfg.model_name, "messages": list(messages),
                "temperature": cfg.temperature, "max_tokens": cfg.max_output_tokens}
        request_id = None
        for attempt in range(cfg.max_retries + 1):
            request_id = uuid.uuid4().hex
            headers = dict(self._headers, **{"X-Request-ID": request_id})
            resp = None
            with self._slots:
                self._limiter.wait()
                with self._lock:
                    self.requests += 1
                try:
                    resp = self._http.post(self.url, json=body, headers=headers)
                except httpx.TransportError as exc:
                    log.warning("request %s failed: %s", request_id, exc)
            if resp is not None:
                request_id = resp.headers.get("x-request-id", request_id)
                if resp.status_code == 200:
                    return self._content(resp, request_id)
                if _is_filtered(resp.status_code, resp.text):
                    raise ContentFiltered("prompt rejected by content filter", request_id)
                if resp.status_code != 429 and resp.status_code < 500:
                    raise EndpointError(f"HTTP {resp.status_code} from {self.url}: {resp.text[:200]}")
            if attempt == cfg.max_retries:
                break
            delay = self._delay(attempt, resp)
            log.info("retrying request %s in %.2fs (attempt %d/%d)", request_id, delay,
                     attempt + 1, cfg.max_retries)
            with self._lock:
                self.retries += 1
            time.sleep(delay)
        raise ExhaustedRetries(f"gave up after {cfg.max_retries} retries", request_id)

    @staticmethod
    def _content(resp: httpx.Response, request_id: str) -> str:
        try:
            choice = resp.json()["choices"][0]
        except (ValueError, KeyError, IndexError, TypeError):
            raise EndpointError(f"malformed completion response: {resp.text[:200]}") from None
        if choice.get("finish_reason") == "content_filter":
            raise ContentFiltered("completion stopped by content filter", request_id)
        content = (choice.get("message") or {}).get("content") or ""
        if not content.strip():
            raise EmptyResponse("empty completion", request_id)
        return content


def call_endpoint(config: ChatEndpointConfig, messages: Sequence[Mapping[str, str]],
                  http: httpx.Client | None = None) -> str:
    with ChatClient(config, http) as client:
        return client.complete(messages)
