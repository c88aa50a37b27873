"""Minimal OpenAI-compatible ``/chat/completions`` client with retries."""

from __future__ import annotations

import base64
import logging
import mimetypes
import os
import random
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import httpx

log = logging.getLogger(__name__)


class EndpointError(RuntimeError):
    def __init__(self, message: str, status: Optional[int] = None):
        super().__init__(message)
        self.status = status


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_name: str
    api_key_env_var_name: Optional[str] = None
    timeout_ms: int = 120_000
    max_retries: int = 3
    temperature: float = 1.0
    top_p: Optional[float] = None
    max_tokens: Optional[int] = None
    backoff_base_ms: float = 500.0

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    @classmethod
    def captioner(cls, base_url: str, model_name: str, **kw) -> "EndpointConfig":
        kw.setdefault("temperature", 1.0)
        kw.setdefault("max_tokens", 800)
        return cls(base_url, model_name, **kw)

    @classmethod
    def reasoner(cls, base_url: str, model_name: str, **kw) -> "EndpointConfig":
        kw.setdefault("temperature", 0.6)
        kw.setdefault("top_p", 0.95)
        kw.setdefault("max_tokens", 100_000)
        return cls(base_url, model_name, **kw)


def image_data_url(path) -> str:
    path = Path(path)
    mime = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
    return f"data:{mime};base64,{base64.b64encode(path.read_bytes()).decode()}"


def _with_attachments(messages: Sequence[dict], attachments: Sequence[str]) -> list[dict]:
    msgs = [dict(m) for m in messages]
    if not attachments:
        return msgs
    last = msgs[-1]
    text = last["content"]
    parts = [{"type": "text", "text": text}] if isinstance(text, str) else list(text)
    parts += [{"type": "image_url", "image_url": {"url": a}} for a in attachments]
    last["content"] = parts
    return msgs


def _backoff(endpoint: EndpointConfig, attempt: int, jitter: Callable[[], float]) -> float:
    return endpoint.backoff_base_ms / 1000.0 * (2 ** attempt) * (1.0 + 0.25 * jitter())


def chat(
    endpoint: EndpointConfig,
    messages: Sequence[dict],
    attachments: Sequence[str] = (),
    *,
    client: Optional[httpx.Client] = None,
    sleep: Callable[[float], None] = time.sleep,
    jitter: Callable[[], float] = random.random,
    idempotency_key: Optional[str] = None,
) -> str:
    """Send one chat request; retry timeouts, transport errors and 5xx with exponential backoff."""
    body = {
        "model": endpoint.model_name,
        "messages": _with_attachments(messages, attachments),
        "temperature": endpoint.temperature,
    }
    if endpoint.top_p is not None:
        body["top_p"] = endpoint.top_p
    if endpoint.max_tokens is not None:
        body["max_tokens"] = endpoint.max_tokens
    headers = {"Content-Type": "application/json"}
    if endpoint.api_key_env_var_name:
        key = os.environ.get(endpoint.api_key_env_var_name)
        if key:
            headers["Authorization"] = f"Bearer {key}"
    if idempotency_key:
        headers["Idempotency-Key"] = idempotency_key
    url = endpoint.base_url.rstrip("/") + "/chat/completions"

    own = client is None
    if own:
        client = httpx.Client(timeout=endpoint.timeout_ms / 1000.0)
    try:
        last_error = "no attempt made"
        last_status = None
        for attempt in range(endpoint.max_retries + 1):
            if attempt:
                sleep(_backoff(endpoint, attempt - 1, jitter))
            try:
                resp = client.post(url, json=body, headers=headers, timeout=endpoint.timeout_ms / 1000.0)
            except (httpx.TimeoutException, httpx.TransportError) as exc:
                last_error, last_status = f"{type(exc).__name__}: {exc}", None
                log.warning("chat attempt %d failed: %s", attempt + 1, last_error)
                continue
            if resp.status_code >= 500:
                last_error, last_status = f"server error {resp.status_code}", resp.status_code
                log.warning("chat attempt %d failed: %s", attempt + 1, last_error)
                continue
            if resp.status_code >= 400:
                raise EndpointError(f"client error {resp.status_code}: {resp.text[:200]}", resp.status_code)
            try:
                return resp.json()["choices"][0]["message"]["content"] or ""
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise EndpointError(f"malformed completion body: {exc}", resp.status_code) from exc
        raise EndpointError(
            f"gave up after {endpoint.max_retries + 1} attempts: {last_error}", last_status
        )
    finally:
        if own:
            client.close()
