"""Prompt templates and chat-completion backends.

Backends implement ``complete(request) -> str``. :class:`Gateway` wraps one
with retry and exponential backoff for transport failures.

Fixture files for :class:`MockBackend` are JSON lines::

    {"digest": "<sha256 of the request messages>", "response": "...", "prompt_head": "..."}

``prompt_head`` is informational only.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import mimetypes
import os
import re
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol

import httpx

from .errors import InvalidArgument, ModelError, TemplateError, TransportError

log = logging.getLogger(__name__)

DEFAULT_MODEL = "gpt-4o-mini-2024-07-18"
DEFAULT_TEMPERATURE = 0.0
DEFAULT_SAMPLE_COUNT = 1

TEMPLATE_NAMES = (
    "feedback_generation",
    "memory_refinement",
    "image_description_generic",
    "image_description_fewshot",
    "image_description_toolmem",
    "image_score_generic",
    "image_score_fewshot",
    "image_score_toolmem",
    "text_score_generic",
    "text_score_fewshot",
    "text_score_toolmem",
)

_SLOT = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str
    required_placeholders: frozenset[str] = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "required_placeholders", frozenset(_SLOT.findall(self.body)))


def load_template(name: str, directory: str | os.PathLike | None = None) -> PromptTemplate:
    """Load ``<name>.txt`` from ``directory`` or from the bundled prompt assets."""
    if directory is not None:
        text = Path(directory, f"{name}.txt").read_text(encoding="utf-8")
    else:
        try:
            text = resources.files("toolmem.prompts").joinpath(f"{name}.txt").read_text(encoding="utf-8")
        except FileNotFoundError:
            raise InvalidArgument(f"unknown template {name!r}") from None
    # asset files end with one newline that is not part of the prompt
    if text.endswith("\n"):
        text = text[:-1]
    return PromptTemplate(name, text)


def render_template(template: PromptTemplate, bindings: Mapping[str, object]) -> str:
    missing = sorted(template.required_placeholders - bindings.keys())
    if missing:
        raise TemplateError(missing[0])
    extra = sorted(bindings.keys() - template.required_placeholders)
    if extra:
        log.warning("template %s: ignoring unknown bindings %s", template.name, extra)
    # single pass, so braces inside bound values are never re-expanded
    return _SLOT.sub(lambda m: str(bindings[m.group(1)]), template.body)


@dataclass(frozen=True)
class ChatMessage:
    role: str
    text: str
    image_ref: str | None = None

    def __post_init__(self) -> None:
        if self.role not in ("system", "user"):
            raise InvalidArgument(f"unsupported role {self.role!r}")
        if not self.text and self.image_ref is None:
            raise InvalidArgument("message text is empty and has no attachment")


@dataclass(frozen=True)
class CompletionRequest:
    messages: tuple[ChatMessage, ...]
    temperature: float = DEFAULT_TEMPERATURE
    sample_count: int = DEFAULT_SAMPLE_COUNT
    model_id: str = DEFAULT_MODEL

    def __post_init__(self) -> None:
        if not isinstance(self.messages, tuple):
            object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise InvalidArgument("a request needs at least one message")
        if self.temperature < 0:
            raise InvalidArgument("temperature must be >= 0")
        if self.sample_count < 1:
            raise InvalidArgument("sample_count must be >= 1")

    @classmethod
    def user(cls, text: str, image_ref: str | None = None, **kwargs) -> "CompletionRequest":
        return cls((ChatMessage("user", text, image_ref),), **kwargs)

    @property
    def prompt(self) -> str:
        return "\n\n".join(m.text for m in self.messages)


def prompt_digest(request: CompletionRequest) -> str:
    """Key used by fixture tables. Depends on the messages only, not on decoding params."""
    payload = json.dumps(
        [[m.role, m.text, m.image_ref] for m in request.messages], ensure_ascii=False
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class Backend(Protocol):
    def complete(self, request: CompletionRequest) -> str: ...


# -- mock / recording backends -------------------------------------------------


def load_fixtures(path: str | os.PathLike) -> dict[str, str]:
    table: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                table[rec["digest"]] = rec["response"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise InvalidArgument(f"{path}:{lineno}: bad fixture record ({exc})") from None
    return table


def write_fixtures(path: str | os.PathLike, records: Iterable[tuple[str, str, str]]) -> None:
    """Write ``(digest, prompt, response)`` triples sorted by digest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for digest, prompt, response in sorted(records):
            head = prompt[:120]
            fh.write(json.dumps({"digest": digest, "response": response, "prompt_head": head}, ensure_ascii=False) + "\n")


class MockBackend:
    """Answers from a digest -> response table.

    Unknown prompts go to ``responder`` if one is given; otherwise a strict mock
    raises :class:`ModelError` and a lenient one returns ``default``.
    """

    def __init__(
        self,
        fixtures: Mapping[str, str] | None = None,
        responder: Callable[[CompletionRequest], str] | None = None,
        strict: bool = True,
        default: str = "",
    ) -> None:
        self.fixtures = dict(fixtures or {})
        self.responder = responder
        self.strict = strict
        self.default = default

    @classmethod
    def from_file(cls, path: str | os.PathLike, **kwargs) -> "MockBackend":
        return cls(load_fixtures(path), **kwargs)

    def complete(self, request: CompletionRequest) -> str:
        digest = prompt_digest(request)
        if digest in self.fixtures:
            return self.fixtures[digest]
        if self.responder is not None:
            return self.responder(request)
        if self.strict:
            raise ModelError(f"no fixture for prompt digest {digest[:12]}")
        return self.default


class RecordingBackend:
    """Passes requests through and keeps every ``(digest, prompt, response)`` seen."""

    def __init__(self, inner: Backend) -> None:
        self.inner = inner
        self._lock = threading.Lock()
        self.records: dict[str, tuple[str, str]] = {}

    def complete(self, request: CompletionRequest) -> str:
        response = self.inner.complete(request)
        with self._lock:
            self.records[prompt_digest(request)] = (request.prompt, response)
        return response

    def save(self, path: str | os.PathLike) -> None:
        write_fixtures(path, [(d, p, r) for d, (p, r) in self.records.items()])


# -- remote backend --------------------------------------------------------------


class TokenBucket:
    """Blocking token bucket: ``rate`` tokens per second, at most ``capacity`` banked."""

    def __init__(self, rate: float, capacity: int = 1, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep) -> None:
        if rate <= 0 or capacity < 1:
            raise InvalidArgument("rate must be > 0 and capacity >= 1")
        self.rate = rate
        self.capacity = capacity
        self._clock = clock
        self._sleep = sleep
        self._tokens = float(capacity)
        self._stamp = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._stamp) * self.rate)
                self._stamp = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            self._sleep(wait)


def _image_part(ref: str) -> dict:
    if ref.startswith(("http://", "https://", "data:")):
        url = ref
    else:
        mime = mimetypes.guess_type(ref)[0] or "image/png"
        url = f"data:{mime};base64," + base64.b64encode(Path(ref).read_bytes()).decode("ascii")
    return {"type": "image_url", "image_url": {"url": url}}


class RemoteBackend:
    """OpenAI-compatible ``/chat/completions`` endpoint."""

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        client: httpx.Client | None = None,
        limiter: TokenBucket | None = None,
        timeout: float = 60.0,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get("TOOLMEM_API_KEY", "")
        self._client = client or httpx.Client(timeout=timeout)
        self._limiter = limiter

    def _payload(self, request: CompletionRequest) -> dict:
        messages = []
        for m in request.messages:
            if m.image_ref is None:
                messages.append({"role": m.role, "content": m.text})
            else:
                parts = [{"type": "text", "text": m.text}] if m.text else []
                parts.append(_image_part(m.image_ref))
                messages.append({"role": m.role, "content": parts})
        return {
            "model": request.model_id,
            "messages": messages,
            "temperature": request.temperature,
            "n": request.sample_count,
        }

    def complete(self, request: CompletionRequest) -> str:
        if self._limiter is not None:
            self._limiter.acquire()
        try:
            resp = self._client.post(
                f"{self.base_url}/chat/completions",
                json=self._payload(request),
                headers={"Authorization": f"Bearer {self.api_key}"},
            )
        except httpx.TransportError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code >= 400:
            raise ModelError(f"HTTP {resp.status_code}: {resp.text[:500]}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ModelError(f"malformed completion payload: {exc}") from exc
        return content or ""


# -- gateway -----------------------------------------------------------------------


class Gateway:
    """Retries :class:`TransportError` with exponential backoff; everything else propagates."""

    def __init__(
        self,
        backend: Backend,
        model_id: str = DEFAULT_MODEL,
        temperature: float = DEFAULT_TEMPERATURE,
        sample_count: int = DEFAULT_SAMPLE_COUNT,
        max_attempts: int = 3,
        backoff: float = 1.0,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if max_attempts < 1:
            raise InvalidArgument("max_attempts must be >= 1")
        self.backend = backend
        self.model_id = model_id
        self.temperature = temperature
        self.sample_count = sample_count
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._sleep = sleep

    def request(self, text: str, image_ref: str | None = None) -> CompletionRequest:
        return CompletionRequest.user(
            text, image_ref,
            model_id=self.model_id, temperature=self.temperature, sample_count=self.sample_count,
        )

    def complete(self, request: CompletionRequest) -> str:
        delay = self.backoff
        for attempt in range(1, self.max_attempts + 1):
            try:
                return self.backend.complete(request)
            except TransportError as exc:
                if attempt == self.max_attempts:
                    raise TransportError(f"giving up after {attempt} attempts: {exc}") from exc
                log.warning("transport failure (attempt %d/%d): %s", attempt, self.max_attempts, exc)
                self._sleep(delay)
                delay *= 2
        raise AssertionError("unreachable")

    def ask(self, text: str, image_ref: str | None = None) -> str:
        return self.complete(self.request(text, image_ref))
