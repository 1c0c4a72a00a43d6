"""Dispatch prompts to an OpenAI-compatible chat completions endpoint."""

from __future__ import annotations

import base64
import io
import logging
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import httpx
from PIL import Image, UnidentifiedImageError

from .errors import BackendError, BackendUnavailable, IoError
from .reasoner import PromptSpec, image_path

logger = logging.getLogger(__name__)

API_KEY_ENV = "CARMA_API_KEY"


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4o"
    api_key: Optional[str] = field(default=None, repr=False)
    timeout: float = 30.0
    max_retries: int = 1
    temperature: float = 0.0
    max_image_edge: int = 512
    max_in_flight: int = 2

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")

    @classmethod
    def from_env(cls, **overrides) -> "EndpointConfig":
        return cls(api_key=os.environ.get(API_KEY_ENV), **overrides)


def load_image(ref: str, max_edge: int, base: Optional[Path] = None) -> bytes:
    """Read an image reference, apply its ``#x,y,w,h`` crop and downscale to ``max_edge``; PNG bytes."""
    path = Path(image_path(ref))
    if base is not None and not path.is_absolute():
        path = base / path
    try:
        with Image.open(path) as im:
            im.load()
            img = im.convert("RGB")
    except (OSError, UnidentifiedImageError) as exc:
        raise IoError(f"cannot read image {path}: {exc}", str(path)) from None
    if "#" in ref:
        try:
            x, y, w, h = (int(v) for v in ref.split("#", 1)[1].split(","))
        except ValueError:
            raise IoError(f"malformed crop suffix in {ref!r}", str(path)) from None
        img = img.crop((x, y, x + w, y + h))
    if max(img.size) > max_edge:
        img.thumbnail((max_edge, max_edge))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def build_request(prompt: PromptSpec, cfg: EndpointConfig, base: Optional[Path] = None) -> dict:
    """Chat-completions request body: one user message, caption text before each image."""
    kinds = [b.kind for b in prompt.blocks]
    if not kinds or kinds[0] != "text" or kinds[-1] != "text":
        raise ValueError("prompt must start with the intro text and end with the task text")
    parts = []
    for block in prompt.blocks:
        if block.kind == "text":
            parts.append({"type": "text", "text": block.text})
        else:
            data = base64.b64encode(load_image(block.image_ref, cfg.max_image_edge, base)).decode()
            parts.append({"type": "text", "text": block.caption})
            parts.append({"type": "image_url",
                          "image_url": {"url": f"data:image/png;base64,{data}"}})
    return {
        "model": cfg.model,
        "temperature": cfg.temperature,
        "messages": [{"role": "user", "content": parts}],
    }


def _scrub(text: str, secret: Optional[str]) -> str:
    return text.replace(secret, "***") if secret else text


class VLMBackend:
    """Stateless dispatcher with a cap on concurrent in-flight requests."""

    def __init__(self, cfg: EndpointConfig, base: Optional[Path] = None,
                 client: Optional[httpx.Client] = None):
        self.cfg = cfg
        self.base = base
        self._client = client or httpx.Client(timeout=cfg.timeout)
        self._slots = threading.BoundedSemaphore(cfg.max_in_flight)

    def dispatch(self, prompt: PromptSpec) -> str:
        return dispatch(prompt, self.cfg, self.base, self._client, self._slots)

    def close(self) -> None:
        self._client.close()


def dispatch(prompt: PromptSpec, cfg: EndpointConfig, base: Optional[Path] = None,
             client: Optional[httpx.Client] = None,
             slots: Optional[threading.BoundedSemaphore] = None) -> str:
    """POST the prompt and return the first choice's content verbatim.

    Failed attempts (HTTP errors, timeouts) are retried up to
    ``cfg.max_retries`` times.
    """
    body = build_request(prompt, cfg, base)
    url = cfg.base_url.rstrip("/") + "/chat/completions"
    headers = {"Content-Type": "application/json"}
    if cfg.api_key:
        headers["Authorization"] = f"Bearer {cfg.api_key}"

    own_client = client is None
    client = client or httpx.Client(timeout=cfg.timeout)
    last: Exception | None = None
    try:
        for attempt in range(cfg.max_retries + 1):
            logger.debug("POST %s (attempt %d, %d content parts)", url, attempt + 1,
                         len(body["messages"][0]["content"]))
            try:
                if slots is not None:
                    with slots:
                        resp = client.post(url, json=body, headers=headers, timeout=cfg.timeout)
                else:
                    resp = client.post(url, json=body, headers=headers, timeout=cfg.timeout)
            except httpx.TimeoutException:
                last = BackendUnavailable(f"request to {url} timed out after {cfg.timeout}s")
                logger.warning("reasoner endpoint timed out (attempt %d)", attempt + 1)
                continue
            except httpx.TransportError as exc:
                last = BackendUnavailable(f"cannot reach {url}: {_scrub(str(exc), cfg.api_key)}")
                logger.warning("reasoner endpoint unreachable (attempt %d)", attempt + 1)
                continue
            if resp.status_code >= 400:
                last = BackendError(resp.status_code, _scrub(resp.text, cfg.api_key))
                logger.warning("reasoner endpoint returned HTTP %d (attempt %d)",
                               resp.status_code, attempt + 1)
                continue
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError):
                raise BackendError(resp.status_code, _scrub(resp.text, cfg.api_key)) from None
        assert last is not None
        raise last
    finally:
        if own_client:
            client.close()
