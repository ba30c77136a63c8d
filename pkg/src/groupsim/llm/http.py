"""HTTP backend speaking the common JSON chat-completion wire protocol."""

from __future__ import annotations

import os

import httpx

from .client import BackendError, BackendReply, PromptRequest, TransientBackendError, Usage

API_KEY_ENV = "AGENTGR_API_KEY"


class HttpBackend:
    """POSTs ``{model, messages, temperature, max_tokens}`` and reads
    ``choices[0].message.content``. 429 and 5xx responses are retryable."""

    backend_id = "http"

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 60.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def close(self) -> None:
        self._client.close()

    def generate(self, request: PromptRequest, messages: list[dict]) -> BackendReply:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        try:
            resp = self._client.post(self.endpoint, json=body, headers=headers)
        except httpx.TransportError as exc:
            raise TransientBackendError(f"transport error: {exc}") from exc

        if resp.status_code == 429 or resp.status_code >= 500:
            retry_after = None
            if "retry-after" in resp.headers:
                try:
                    retry_after = float(resp.headers["retry-after"])
                except ValueError:
                    pass
            raise TransientBackendError(f"HTTP {resp.status_code}", retry_after=retry_after)
        if not resp.is_success:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")

        try:
            payload = resp.json()
            text = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed completion payload: {resp.text[:200]}") from exc
        usage = payload.get("usage") or {}
        return BackendReply(
            text or "",
            Usage(int(usage.get("prompt_tokens", 0) or 0), int(usage.get("completion_tokens", 0) or 0)),
        )
