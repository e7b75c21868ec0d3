"""Completion backends: a remote chat-completions client and a scripted stand-in.

The remote client speaks the standard chat-completions wire format (one user
message carrying the rendered prompt) and retries transport failures with
exponential backoff. The scripted backend replays canned responses so every
pipeline stage is testable offline and deterministically.
"""

from __future__ import annotations

import math
import os
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Mapping, Protocol

import httpx


class BackendError(Exception):
    """Base class for completion failures."""


class TransportError(BackendError):
    """The request never produced an HTTP response, even after retries."""


class ApiError(BackendError):
    """The endpoint answered with a non-2xx status or an unusable body."""

    def __init__(self, message: str, status_code: int | None = None, body: str = ""):
        super().__init__(message)
        self.status_code = status_code
        self.body = body


class ScriptExhausted(BackendError):
    """A scripted backend received a request it has no response for."""


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    temperature: float = 0.2
    max_new_tokens: int = 512
    stop: tuple[str, ...] | None = None

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 1.0:
            raise ValueError(f"temperature must be in [0, 1], got {self.temperature}")
        if self.max_new_tokens < 1:
            raise ValueError(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")


REMOTE_CHAT_API = "remote_chat_api"
SCRIPTED = "scripted"


@dataclass(frozen=True)
class BackendDescriptor:
    """Where completions come from; remote backends need an endpoint and model."""

    kind: str
    endpoint: str | None = None
    model_name: str | None = None
    auth_env: str | None = None

    def __post_init__(self):
        if self.kind not in (REMOTE_CHAT_API, SCRIPTED):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.kind == REMOTE_CHAT_API and not (self.endpoint and self.model_name):
            raise ValueError("remote backends require endpoint and model_name")


class Backend(Protocol):
    def complete(self, request: CompletionRequest) -> str: ...


def estimate_tokens(text: str) -> int:
    """Deterministic approximate token count: ceil(chars / 4).

    Conservative enough for budgeting; swap in an exact tokenizer via the
    ``token_counter`` hooks where precision matters.
    """
    return math.ceil(len(text) / 4)


@dataclass(frozen=True)
class ScriptedExchange:
    """One canned response; ``contains`` None means a plain queue entry."""

    response: str
    contains: str | None = None


class ScriptedBackend:
    """Replays canned responses for tests and offline runs.

    Substring rules (``contains``) are persistent and checked in order;
    everything else is a FIFO queue consumed one entry per request. An
    unmatched request fails loudly with ScriptExhausted.
    """

    def __init__(self, script: Iterable[str | ScriptedExchange] = ()):
        self._rules: list[ScriptedExchange] = []
        self._queue: deque[str] = deque()
        for entry in script:
            if isinstance(entry, str):
                self._queue.append(entry)
            elif entry.contains is None:
                self._queue.append(entry.response)
            else:
                self._rules.append(entry)
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> str:
        with self._lock:
            for rule in self._rules:
                if rule.contains in request.prompt:
                    return rule.response
            if self._queue:
                return self._queue.popleft()
            raise ScriptExhausted(
                f"no scripted response for prompt starting {request.prompt[:80]!r}"
            )


class RemoteChatBackend:
    """Chat-completions client with bounded retries on transport failures only.

    Parse- or API-level failures are never retried here; what to do with a
    bad completion is the pipeline's decision.
    """

    def __init__(
        self,
        descriptor: BackendDescriptor,
        *,
        max_retries: int = 3,
        backoff_seconds: float = 0.5,
        timeout: float = 60.0,
        client: httpx.Client | None = None,
    ):
        if descriptor.kind != REMOTE_CHAT_API:
            raise ValueError(f"descriptor kind must be {REMOTE_CHAT_API!r}")
        self.descriptor = descriptor
        self._max_retries = max_retries
        self._backoff = backoff_seconds
        self._client = client or httpx.Client(timeout=timeout)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.descriptor.auth_env:
            secret = os.environ.get(self.descriptor.auth_env)
            if not secret:
                raise ApiError(
                    f"auth environment variable {self.descriptor.auth_env!r} is not set"
                )
            headers["Authorization"] = f"Bearer {secret}"
        return headers

    def complete(self, request: CompletionRequest) -> str:
        payload: dict = {
            "model": self.descriptor.model_name,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_new_tokens,
        }
        if request.stop:
            payload["stop"] = list(request.stop)
        last_exc: Exception | None = None
        for attempt in range(self._max_retries + 1):
            try:
                response = self._client.post(
                    self.descriptor.endpoint, json=payload, headers=self._headers()
                )
            except httpx.TransportError as exc:
                last_exc = exc
                if attempt < self._max_retries:
                    time.sleep(self._backoff * (2**attempt))
                continue
            if response.status_code >= 400:
                raise ApiError(
                    f"backend returned {response.status_code}",
                    status_code=response.status_code,
                    body=response.text,
                )
            try:
                return response.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise ApiError(f"unexpected response shape: {exc}") from exc
        raise TransportError(f"request failed after {self._max_retries + 1} attempts: {last_exc}")


def build_backend(config: Mapping) -> Backend:
    """Construct a backend from a config mapping (engine config file entries).

    Remote: {"kind": "remote_chat_api", "endpoint": ..., "model_name": ...,
    "auth_env": ...}. Scripted: {"kind": "scripted", "script": [{"response":
    ..., "contains": ...?} | "text", ...]}.
    """
    kind = config.get("kind")
    if kind == SCRIPTED:
        script: list[str | ScriptedExchange] = []
        for entry in config.get("script", []):
            if isinstance(entry, str):
                script.append(entry)
            else:
                script.append(
                    ScriptedExchange(entry["response"], entry.get("contains"))
                )
        return ScriptedBackend(script)
    if kind == REMOTE_CHAT_API:
        descriptor = BackendDescriptor(
            kind=REMOTE_CHAT_API,
            endpoint=config.get("endpoint"),
            model_name=config.get("model_name"),
            auth_env=config.get("auth_env"),
        )
        return RemoteChatBackend(
            descriptor,
            max_retries=int(config.get("max_retries", 3)),
            timeout=float(config.get("timeout", 60.0)),
        )
    raise ValueError(f"unknown backend kind {kind!r}")
