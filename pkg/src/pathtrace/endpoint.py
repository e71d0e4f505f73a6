"""Chat-completions client for OpenAI-compatible multimodal endpoints."""

from __future__ import annotations

import base64
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import httpx

from .errors import AuthError, EndpointError, Timeout, TransportError
from .raster import png_bytes

log = logging.getLogger(__name__)


@dataclass
class EndpointConfig:
    base_url: str
    model_name: str
    token_env: str | None = None
    params: dict = field(default_factory=dict)
    max_in_flight: int = 4
    max_retries: int = 3
    backoff_s: float = 1.0
    timeout_s: float = 120.0

    def to_dict(self):
        # the token itself is never part of the config
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class RawResponse:
    task_id: str
    model: str
    text: str | None
    latency_ms: float
    error: str | None = None
    timestamp: float = 0.0


def _image_b64(task, image_root):
    root = Path(image_root or ".")
    png = root / task.image
    if png.exists():
        data = png.read_bytes()
    else:
        svg = root / task.svg
        if not svg.exists():
            raise FileNotFoundError(f"no image for task {task.task_id}: {png}")
        data = png_bytes(svg.read_text(encoding="utf-8"))
    return base64.b64encode(data).decode("ascii")


def build_payload(task, config, image_b64):
    payload = {
        "model": config.model_name,
        "messages": [
            {"role": "system", "content": task.prompt_system},
            {
                "role": "user",
                "content": [
                    {"type": "text", "text": task.prompt_user},
                    {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{image_b64}"}},
                ],
            },
        ],
    }
    payload.update(config.params)
    return payload


def _extract_text(body):
    try:
        content = body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise TransportError(f"unexpected response shape: {exc}") from exc
    if isinstance(content, list):
        content = "".join(part.get("text", "") for part in content if isinstance(part, dict))
    return content or ""


class Endpoint:
    """Thread-safe client; at most ``max_in_flight`` requests run at once."""

    def __init__(self, config, client=None, sleep=time.sleep):
        self.config = config
        self._client = client or httpx.Client(timeout=config.timeout_s)
        self._slots = threading.BoundedSemaphore(max(1, config.max_in_flight))
        self._sleep = sleep

    def _headers(self):
        headers = {"Content-Type": "application/json"}
        if self.config.token_env:
            token = os.environ.get(self.config.token_env)
            if not token:
                raise AuthError(f"environment variable {self.config.token_env} is not set")
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _post_once(self, payload):
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        try:
            resp = self._client.post(url, json=payload, headers=self._headers(), timeout=self.config.timeout_s)
        except httpx.TimeoutException as exc:
            raise Timeout(f"request timed out after {self.config.timeout_s}s") from exc
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"HTTP {resp.status_code}")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise EndpointError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return _extract_text(resp.json())
        except ValueError as exc:
            raise TransportError("response body is not JSON") from exc

    def complete(self, payload):
        """Text of one completion, retrying transport, rate-limit and timeout failures."""
        delay = self.config.backoff_s
        for attempt in range(self.config.max_retries + 1):
            try:
                with self._slots:
                    return self._post_once(payload)
            except (TransportError, Timeout) as exc:
                if attempt == self.config.max_retries:
                    raise
                log.warning("attempt %d failed (%s); retrying in %.1fs", attempt + 1, exc, delay)
                self._sleep(delay)
                delay *= 2

    def query(self, task, image_root=None):
        t0 = time.perf_counter()
        try:
            payload = build_payload(task, self.config, _image_b64(task, image_root))
            text = self.complete(payload)
            err = None
        except EndpointError as exc:
            text, err = None, f"{exc.kind}: {exc}"
        latency = (time.perf_counter() - t0) * 1000.0
        return RawResponse(task.task_id, self.config.model_name, text, latency, err, time.time())

    def close(self):
        self._client.close()
