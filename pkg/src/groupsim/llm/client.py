"""Chat-completion client: prompt rendering under a token budget, response
cache, retries with exponential backoff and per-client telemetry."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import tempfile
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence, Union

from .templates import Template, get_template

logger = logging.getLogger(__name__)

Variable = Union[str, Sequence[str]]


class BackendError(RuntimeError):
    """Backend failed permanently (after retries, bad status, empty reply)."""


class TransientBackendError(BackendError):
    """Failure worth retrying (rate limit, server error, connection problem)."""

    def __init__(self, message: str, retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


class PromptBudgetError(ValueError):
    """Prompt cannot fit the token budget even with every list variable emptied."""


class UnparseableReply(ValueError):
    def __init__(self, message: str, raw: str):
        super().__init__(f"{message}: {raw[:200]!r}")
        self.raw = raw


@dataclass(frozen=True)
class PromptRequest:
    template_name: str
    variables: Mapping[str, Variable]
    temperature: float = 0.0
    max_tokens: int = 1024
    # Bumped when a reply could not be parsed so the retry bypasses the cached reply.
    retry_index: int = 0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass(frozen=True)
class BackendReply:
    text: str
    usage: Usage = Usage()


@dataclass(frozen=True)
class Completion:
    text: str
    backend_id: str
    cached: bool
    usage: Usage = Usage()


class Backend(Protocol):
    backend_id: str
    model: str

    def generate(self, request: PromptRequest, messages: list[dict]) -> BackendReply: ...


def estimate_tokens(text: str) -> int:
    """Rough token count (about four characters per token)."""
    return max(1, math.ceil(len(text) / 4))


def _render_value(value: Variable) -> str:
    if isinstance(value, str):
        return value
    return "\n".join(value) if value else "(none)"


def render(template: Template, variables: Mapping[str, Variable]) -> tuple[str, str]:
    missing = [f for f in template.fields if f not in variables]
    if missing:
        raise KeyError(f"template {template.name} missing variables {missing}")
    values = {k: _render_value(v) for k, v in variables.items()}
    return template.system, template.user.format(**values)


def fit_to_budget(
    template: Template, variables: Mapping[str, Variable], budget: int
) -> dict[str, Variable]:
    """Drop items from the tail of list variables until the prompt fits.

    Callers order lists most relevant first. Items are never cut mid-way; the
    longest list (in characters) loses its last item at each step.
    """
    current: dict[str, Variable] = {
        k: (v if isinstance(v, str) else list(v)) for k, v in variables.items()
    }

    def size() -> int:
        system, user = render(template, current)
        return estimate_tokens(system) + estimate_tokens(user)

    if size() <= budget:
        return current
    lists = [k for k, v in current.items() if not isinstance(v, str) and k in template.fields]
    total = size()
    while total > budget:
        nonempty = [k for k in lists if current[k]]
        if not nonempty:
            raise PromptBudgetError(
                f"template {template.name} needs {total} tokens, budget is {budget}"
            )
        key = max(nonempty, key=lambda k: (sum(len(s) + 1 for s in current[k]), k))
        current[key] = current[key][:-1]
        total = size()
    return current


class ResponseCache:
    """Completion texts keyed by content hash.

    With a directory, each entry is one JSON file written via temp file and
    rename, so concurrent writers never expose partial entries. Without one
    the cache lives in memory.
    """

    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory is not None else None
        self._memory: dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        assert self.directory is not None
        return self.directory / key[:2] / f"{key}.json"

    def get(self, key: str) -> dict | None:
        if self.directory is None:
            with self._lock:
                return self._memory.get(key)
        path = self._path(key)
        if not path.exists():
            return None
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            logger.warning("ignoring unreadable cache entry %s", path)
            return None

    def put(self, key: str, value: str, usage: Usage) -> None:
        entry = {
            "key": key,
            "value": value,
            "usage": {"prompt_tokens": usage.prompt_tokens, "completion_tokens": usage.completion_tokens},
            "created_at": time.time(),
        }
        if self.directory is None:
            with self._lock:
                self._memory[key] = entry
            return
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(entry, fh, ensure_ascii=False)
        os.replace(tmp, path)


def cache_key(backend: Backend, template: Template, messages: list[dict], req: PromptRequest) -> str:
    payload = {
        "backend": backend.backend_id,
        "model": backend.model,
        "template": template.name,
        "version": template.version,
        "messages": messages,
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
        "retry": req.retry_index,
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


@dataclass
class Telemetry:
    requests: int = 0  # logical completions asked for (cache-independent)
    backend_calls: int = 0
    cache_hits: int = 0
    retries: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    wall_time: float = 0.0

    def add(self, other: "Telemetry") -> None:
        for f in self.__dataclass_fields__:
            setattr(self, f, getattr(self, f) + getattr(other, f))

    def as_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}

    def deterministic(self) -> dict:
        """Counters that do not depend on cache warmth or timing."""
        return {
            "requests": self.requests,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
        }


@dataclass
class LLMClient:
    backend: Backend
    cache: ResponseCache = field(default_factory=ResponseCache)
    token_budget: int = 8000
    max_retries: int = 3
    backoff: float = 0.5
    temperature: float = 0.0
    max_tokens: int = 1024
    in_flight_limit: int = 4
    sleep: Callable[[float], None] = time.sleep
    telemetry: Telemetry = field(default_factory=Telemetry)
    _gate: threading.BoundedSemaphore | None = None
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def __post_init__(self) -> None:
        if self._gate is None:
            self._gate = threading.BoundedSemaphore(max(1, self.in_flight_limit))

    def fork(self) -> "LLMClient":
        """Client sharing backend, cache and in-flight gate, with its own telemetry."""
        return replace(self, telemetry=Telemetry(), _lock=threading.Lock())

    def request(self, template_name: str, retry_index: int = 0, **variables: Variable) -> PromptRequest:
        return PromptRequest(
            template_name, variables, temperature=self.temperature,
            max_tokens=self.max_tokens, retry_index=retry_index,
        )

    def ask(self, template_name: str, retry_index: int = 0, **variables: Variable) -> str:
        return self.complete(self.request(template_name, retry_index, **variables)).text

    def complete(self, req: PromptRequest) -> Completion:
        template = get_template(req.template_name)
        fitted = fit_to_budget(template, req.variables, self.token_budget)
        req = replace(req, variables=fitted)
        system, user = render(template, fitted)
        messages = [{"role": "system", "content": system}, {"role": "user", "content": user}]
        key = cache_key(self.backend, template, messages, req)
        use_cache = req.temperature == 0

        if use_cache:
            hit = self.cache.get(key)
            if hit is not None:
                usage = Usage(**hit.get("usage", {}))
                self._record(requests=1, cache_hits=1, usage=usage)
                return Completion(hit["value"], self.backend.backend_id, True, usage)

        start = time.perf_counter()
        reply = self._call_with_retries(req, messages)
        elapsed = time.perf_counter() - start
        if not reply.text or not reply.text.strip():
            raise BackendError(f"empty reply from {self.backend.backend_id} for {req.template_name}")
        usage = reply.usage
        if usage == Usage():
            usage = Usage(estimate_tokens(system) + estimate_tokens(user), estimate_tokens(reply.text))
        if use_cache:
            self.cache.put(key, reply.text, usage)
        self._record(requests=1, usage=usage, wall_time=elapsed)
        return Completion(reply.text, self.backend.backend_id, False, usage)

    def _call_with_retries(self, req: PromptRequest, messages: list[dict]) -> BackendReply:
        attempt = 0
        while True:
            try:
                assert self._gate is not None
                with self._gate:
                    self._record(backend_calls=1)
                    return self.backend.generate(req, messages)
            except TransientBackendError as exc:
                if attempt >= self.max_retries:
                    raise BackendError(
                        f"{self.backend.backend_id}: giving up after {attempt + 1} attempts: {exc}"
                    ) from exc
                delay = exc.retry_after if exc.retry_after is not None else self.backoff * 2**attempt
                logger.info("transient backend failure (%s); retrying in %.2fs", exc, delay)
                self._record(retries=1)
                self.sleep(delay)
                attempt += 1

    def _record(self, usage: Usage | None = None, **counts: float) -> None:
        with self._lock:
            t = self.telemetry
            for name, value in counts.items():
                setattr(t, name, getattr(t, name) + value)
            if usage is not None:
                t.prompt_tokens += usage.prompt_tokens
                t.completion_tokens += usage.completion_tokens
