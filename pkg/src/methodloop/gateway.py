"""Chat-completion backends behind one interface.

``HttpBackend`` talks to any OpenAI-compatible ``/chat/completions`` endpoint
with bounded retries; ``ScriptedBackend`` replays a canned transcript for
deterministic tests and smoke runs.  The same backend instance serves both the
selection and the reasoning role.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Protocol, Sequence

import requests

from .prompts import PromptBundle

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT_S = 120.0
DEFAULT_MAX_RETRIES = 3
DEFAULT_BACKOFF_S = (1.0, 2.0, 4.0)
DEFAULT_MAX_CONCURRENCY = 4


class GatewayError(Exception):
    """Base class for backend failures."""


class AuthenticationError(GatewayError):
    pass


class MalformedReplyError(GatewayError):
    pass


class RetryExhaustedError(GatewayError):
    pass


class ScriptError(GatewayError):
    """Scripted backend ran out of entries or nothing matched."""


@dataclass(frozen=True)
class SamplingSettings:
    max_tokens: int = 1024
    temperature: float = 0.2
    top_k: int = 40
    top_p: float = 0.95
    n: int = 1

    def __post_init__(self):
        if self.max_tokens < 1 or self.top_k < 1 or self.n < 1:
            raise ValueError("max_tokens, top_k and n must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    prompt_tokens: int = 0  # 0 when the endpoint omits usage
    completion_tokens: int = 0
    latency: float = 0.0


class Backend(Protocol):
    def complete(self, bundle: PromptBundle, settings: SamplingSettings) -> ChatResponse: ...


def complete(backend: Backend, bundle: PromptBundle, settings: SamplingSettings | None = None) -> ChatResponse:
    """Run one completion against any backend."""
    return backend.complete(bundle, settings or SamplingSettings())


class HttpBackend:
    """OpenAI-compatible HTTP client with retry/backoff.

    Transport errors, 429s, and 5xx replies are retried up to ``max_retries``
    times with the configured backoff; other 4xx replies fail immediately.
    ``top_k`` is sent only while the endpoint accepts it: a 400 complaining
    about it drops the field for the rest of the session (logged once).
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "OPENAI_API_KEY",
        timeout_s: float = DEFAULT_TIMEOUT_S,
        max_retries: int = DEFAULT_MAX_RETRIES,
        backoff_s: Sequence[float] = DEFAULT_BACKOFF_S,
        max_concurrency: int = DEFAULT_MAX_CONCURRENCY,
        send_top_k: bool = True,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.timeout_s = timeout_s
        self.max_retries = max_retries
        self.backoff_s = tuple(backoff_s)
        self._send_top_k = send_top_k
        self._sem = threading.BoundedSemaphore(max_concurrency)
        self._session = session or requests.Session()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _payload(self, bundle: PromptBundle, settings: SamplingSettings) -> dict:
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": bundle.system_text},
                {"role": "user", "content": bundle.user_text},
            ],
            "max_tokens": settings.max_tokens,
            "temperature": settings.temperature,
            "top_p": settings.top_p,
            "n": settings.n,
        }
        if self._send_top_k:
            payload["top_k"] = settings.top_k
        return payload

    def complete(self, bundle: PromptBundle, settings: SamplingSettings) -> ChatResponse:
        url = f"{self.base_url}/chat/completions"
        attempt = 0
        last_error: Exception | None = None
        while attempt <= self.max_retries:
            started = time.perf_counter()
            try:
                with self._sem:
                    resp = self._session.post(
                        url,
                        json=self._payload(bundle, settings),
                        headers=self._headers(),
                        timeout=self.timeout_s,
                    )
            except requests.RequestException as exc:
                last_error = exc
            else:
                latency = time.perf_counter() - started
                if resp.status_code == 200:
                    return self._parse_reply(resp, latency)
                if resp.status_code in (401, 403):
                    raise AuthenticationError(f"endpoint rejected credentials ({resp.status_code})")
                if resp.status_code == 400 and self._send_top_k and "top_k" in resp.text:
                    log.info("endpoint rejected top_k; dropping the field for this session")
                    self._send_top_k = False
                    continue  # resend immediately, not a transient failure
                if resp.status_code != 429 and 400 <= resp.status_code < 500:
                    raise GatewayError(f"endpoint returned {resp.status_code}: {resp.text[:200]}")
                last_error = GatewayError(f"endpoint returned {resp.status_code}")
            if attempt < self.max_retries:
                delay = self.backoff_s[min(attempt, len(self.backoff_s) - 1)]
                log.debug("retrying after %s (attempt %d): %s", delay, attempt + 1, last_error)
                time.sleep(delay)
            attempt += 1
        raise RetryExhaustedError(f"gave up after {attempt} attempts: {last_error}")

    def _parse_reply(self, resp: requests.Response, latency: float) -> ChatResponse:
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedReplyError(f"unexpected endpoint reply shape: {exc}") from exc
        if not isinstance(text, str):
            raise MalformedReplyError("message content is not a string")
        usage = data.get("usage") or {}
        return ChatResponse(
            text=text,
            prompt_tokens=int(usage.get("prompt_tokens", 0) or 0),
            completion_tokens=int(usage.get("completion_tokens", 0) or 0),
            latency=latency,
        )


class ScriptedBackend:
    """Deterministic backend replaying a transcript.

    Each entry is ``(matcher, response)``: a ``None`` matcher accepts any
    prompt, a string matches as a substring of the prompt text.  A call
    consumes the first remaining entry whose matcher accepts.  Received
    bundles are kept in ``calls`` for assertions.
    """

    def __init__(self, transcript: Sequence):
        if not transcript:
            raise ValueError("transcript must be non-empty")
        self._entries: list[tuple[str | None, str]] = []
        for item in transcript:
            if isinstance(item, str):
                self._entries.append((None, item))
            else:
                matcher, response = item
                self._entries.append((matcher, response))
        self._lock = threading.Lock()
        self.calls: list[PromptBundle] = []

    @property
    def remaining(self) -> int:
        return len(self._entries)

    def complete(self, bundle: PromptBundle, settings: SamplingSettings) -> ChatResponse:
        haystack = bundle.system_text + "\n" + bundle.user_text
        with self._lock:
            self.calls.append(bundle)
            if not self._entries:
                raise ScriptError("script underflow: no responses left")
            for i, (matcher, response) in enumerate(self._entries):
                if matcher is None or matcher in haystack:
                    del self._entries[i]
                    return ChatResponse(text=response)
            raise ScriptError(f"no scripted entry matches prompt starting {haystack[:80]!r}")


def script_backend(transcript: Sequence) -> ScriptedBackend:
    """Build a scripted backend from (matcher, response) pairs or bare strings."""
    return ScriptedBackend(transcript)
