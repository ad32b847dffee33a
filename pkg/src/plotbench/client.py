"""Chat client for OpenAI-compatible and Ollama-native endpoints."""
from __future__ import annotations

import base64
import json
import mimetypes
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import httpx

from .prompts import ImagePart, PromptBundle

AUTH_ENV = "PLOTBENCH_API_KEY"


class ChatError(Exception):
    kind = "error"


class ChatTimeout(ChatError):
    kind = "timeout"


class TransportError(ChatError):
    kind = "transport"


class HttpStatusError(ChatError):
    kind = "http_status"

    def __init__(self, status: int, body: str = ""):
        super().__init__(f"HTTP {status}: {body[:200]}")
        self.status = status


class MalformedResponse(ChatError):
    kind = "malformed_response"


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_name: str
    wire: str = "openai"                # openai | ollama
    context_window_tokens: int = 32768
    temperature: float = 0.0
    request_timeout_s: float = 300.0
    max_retries: int = 2
    backoff_s: float = 1.0
    max_in_flight: int = 4
    auth_env: str = AUTH_ENV

    def __post_init__(self):
        if self.context_window_tokens < 1:
            raise ValueError("context_window_tokens must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.wire not in ("openai", "ollama"):
            raise ValueError(f"unknown wire format {self.wire!r}")

    @property
    def url(self) -> str:
        base = self.base_url.rstrip("/")
        return f"{base}/chat/completions" if self.wire == "openai" else f"{base}/api/chat"


@dataclass(frozen=True)
class RawResponse:
    text: str
    latency_ms: float
    prompt_tokens: int | None = None
    completion_tokens: int | None = None
    finish_reason: str | None = None
    attempts: int = 1


def _read_image(part: ImagePart, root: Path | None) -> tuple[str, str]:
    path = Path(part.path)
    if root is not None and not path.is_absolute():
        path = root / path
    mime = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
    return mime, base64.b64encode(path.read_bytes()).decode("ascii")


def request_body(cfg: EndpointConfig, bundle: PromptBundle, image_root: Path | None = None,
                 seed: int | None = None) -> dict:
    messages = []
    for m in bundle.messages:
        if cfg.wire == "openai":
            if all(isinstance(p, str) for p in m.parts):
                messages.append({"role": m.role, "content": "\n".join(m.parts)})
                continue
            content = []
            for p in m.parts:
                if isinstance(p, ImagePart):
                    mime, data = _read_image(p, image_root)
                    content.append({"type": "image_url", "image_url": {"url": f"data:{mime};base64,{data}"}})
                else:
                    content.append({"type": "text", "text": p})
            messages.append({"role": m.role, "content": content})
        else:
            msg = {"role": m.role, "content": m.text()}
            images = [_read_image(p, image_root)[1] for p in m.images()]
            if images:
                msg["images"] = images
            messages.append(msg)

    if cfg.wire == "openai":
        body = {"model": cfg.model_name, "messages": messages, "temperature": cfg.temperature, "stream": False}
        if seed is not None:
            body["seed"] = seed
    else:
        options = {"temperature": cfg.temperature, "num_ctx": cfg.context_window_tokens}
        if seed is not None:
            options["seed"] = seed
        body = {"model": cfg.model_name, "messages": messages, "stream": False, "options": options}
    return body


def encode_request(cfg: EndpointConfig, bundle: PromptBundle, image_root: Path | None = None,
                   seed: int | None = None) -> bytes:
    """Request body bytes; identical inputs give identical bytes."""
    return json.dumps(request_body(cfg, bundle, image_root, seed), ensure_ascii=False,
                      separators=(",", ":")).encode("utf-8")


def _decode(cfg: EndpointConfig, payload: dict) -> tuple[str, int | None, int | None, str | None]:
    try:
        if cfg.wire == "openai":
            choice = payload["choices"][0]
            text = choice["message"]["content"]
            usage = payload.get("usage") or {}
            return (text or "", usage.get("prompt_tokens"), usage.get("completion_tokens"),
                    choice.get("finish_reason"))
        return (payload["message"]["content"] or "", payload.get("prompt_eval_count"),
                payload.get("eval_count"), payload.get("done_reason"))
    except (KeyError, IndexError, TypeError) as e:
        raise MalformedResponse(f"unexpected response shape: {e!r}") from None


class VLMClient:
    """Shareable client; at most ``cfg.max_in_flight`` requests run at once."""

    def __init__(self, cfg: EndpointConfig, image_root: Path | None = None,
                 sleep: Callable[[float], None] = time.sleep, transport: httpx.BaseTransport | None = None):
        self.cfg = cfg
        self.image_root = image_root
        self._sleep = sleep
        self._slots = threading.Semaphore(cfg.max_in_flight)
        self._http = httpx.Client(timeout=cfg.request_timeout_s, transport=transport)

    def close(self) -> None:
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.cfg.auth_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def chat(self, bundle: PromptBundle, seed: int | None = None) -> RawResponse:
        body = encode_request(self.cfg, bundle, self.image_root, seed)
        last: ChatError | None = None
        for attempt in range(self.cfg.max_retries + 1):
            if attempt:
                self._sleep(self.cfg.backoff_s * 2 ** (attempt - 1))
            t0 = time.perf_counter()
            try:
                with self._slots:
                    resp = self._http.post(self.cfg.url, content=body, headers=self._headers())
            except httpx.TimeoutException as e:
                last = ChatTimeout(str(e) or "request timed out")
                continue
            except httpx.TransportError as e:
                last = TransportError(str(e) or type(e).__name__)
                continue
            latency = (time.perf_counter() - t0) * 1000.0
            if resp.status_code >= 500 or resp.status_code == 429:
                last = HttpStatusError(resp.status_code, resp.text)
                continue
            if resp.status_code >= 400:
                raise HttpStatusError(resp.status_code, resp.text)
            try:
                payload = resp.json()
            except ValueError:
                raise MalformedResponse("response body is not JSON") from None
            text, pt, ct, finish = _decode(self.cfg, payload)
            return RawResponse(text, latency, pt, ct, finish, attempt + 1)
        raise last


def chat(cfg: EndpointConfig, bundle: PromptBundle, image_root: Path | None = None,
         seed: int | None = None) -> RawResponse:
    with VLMClient(cfg, image_root) as client:
        return client.chat(bundle, seed)
