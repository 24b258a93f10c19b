"""Chat and embedding provider interfaces, HTTP adapters and the scripted mock.

Every model call in the engine goes through :func:`chat_complete` or
:func:`embed_text`; nothing else builds provider payloads.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Literal, Protocol, Sequence

from .litclients.plumbing import RetryPolicy
from .litclients.transport import Clock, HttpRequest, SystemClock, Transport, TransportError

logger = logging.getLogger(__name__)

PURPOSES = ("planning", "interpretation", "synthesis", "judge", "fallback")
Purpose = Literal["planning", "interpretation", "synthesis", "judge", "fallback"]
Profile = Literal["deterministic", "provider-default"]
DEFAULT_DIMENSION = 768


class ProviderError(Exception):
    """The provider could not produce an answer (after retries)."""


class TokenLimitError(ProviderError):
    pass


class EmbeddingProtocolError(ProviderError):
    """The provider returned a vector of the wrong shape or with non-finite values."""


class StructuredOutputError(Exception):
    """A completion did not contain the JSON object we asked for."""


class MockScriptError(Exception):
    """Invalid or conflicting scripted-mock registration."""


class UnregisteredDigestError(Exception):
    """The scripted mock has no entry for this prompt or text; never fabricated."""

    def __init__(self, kind: str, purpose: str | None, digest: str, preview: str = ""):
        self.kind = kind
        self.purpose = purpose
        self.digest = digest
        where = f"{purpose}/" if purpose else ""
        super().__init__(f"no scripted {kind} for {where}{digest[:16]} {preview[:80]!r}")


@dataclass(frozen=True)
class Message:
    role: Literal["system", "user", "assistant"]
    content: str


@dataclass(frozen=True)
class GenerationRequest:
    messages: tuple[Message, ...]
    purpose: Purpose
    profile: Profile = "deterministic"
    max_tokens: int = 2048

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("a generation request needs at least one message")
        if self.purpose not in PURPOSES:
            raise ValueError(f"unknown purpose {self.purpose!r}")
        if self.profile not in ("deterministic", "provider-default"):
            raise ValueError(f"unknown sampling profile {self.profile!r}")

    @property
    def temperature(self) -> float | None:
        return 0.0 if self.profile == "deterministic" else None

    def digest(self) -> str:
        return prompt_digest(self.messages)

    def followed_by(self, *messages: Message) -> GenerationRequest:
        return GenerationRequest(self.messages + tuple(messages), self.purpose, self.profile, self.max_tokens)


def request(purpose: Purpose, system: str, user: str, profile: Profile = "deterministic", max_tokens: int = 2048) -> GenerationRequest:
    return GenerationRequest((Message("system", system), Message("user", user)), purpose, profile, max_tokens)


def _canon(text: str) -> str:
    return " ".join(text.split())


def prompt_digest(messages: Iterable[Message]) -> str:
    """Hash of the whitespace-normalized message sequence."""
    canon = [[m.role, _canon(m.content)] for m in messages]
    return hashlib.sha256(json.dumps(canon, ensure_ascii=False, separators=(",", ":")).encode()).hexdigest()


def text_digest(text: str) -> str:
    return hashlib.sha256(_canon(text).encode()).hexdigest()


class ChatProvider(Protocol):
    name: str
    live: bool

    def complete(self, request: GenerationRequest) -> str: ...


class EmbeddingProvider(Protocol):
    name: str
    live: bool
    dimension: int

    def embed(self, text: str) -> list[float]: ...


def chat_complete(request: GenerationRequest, provider: ChatProvider) -> str:
    out = provider.complete(request)
    if not isinstance(out, str) or not out.strip():
        raise ProviderError(f"{provider.name} returned an empty completion")
    return out


def embed_text(text: str, provider: EmbeddingProvider) -> list[float]:
    if not text or not text.strip():
        raise ValueError("text must be non-empty")
    vec = [float(x) for x in provider.embed(text)]
    if len(vec) != provider.dimension:
        raise EmbeddingProtocolError(f"{provider.name} returned {len(vec)} components, expected {provider.dimension}")
    if not all(math.isfinite(x) for x in vec):
        raise EmbeddingProtocolError(f"{provider.name} returned non-finite components")
    return vec


# -- structured output -----------------------------------------------------


def extract_json(text: str) -> Any:
    """Return the first balanced JSON object embedded in ``text``."""
    decoder = json.JSONDecoder()
    start = text.find("{")
    while start != -1:
        try:
            obj, _ = decoder.raw_decode(text, start)
        except json.JSONDecodeError:
            start = text.find("{", start + 1)
            continue
        if isinstance(obj, dict):
            return obj
        start = text.find("{", start + 1)
    raise StructuredOutputError("no JSON object found in completion")


REPROMPT = "Your previous reply could not be used ({problem}). Reply again with only one valid JSON object in the requested format."


def complete_json(
    request: GenerationRequest,
    provider: ChatProvider,
    validate: Callable[[Any], Any] | None = None,
) -> Any:
    """Ask for a JSON object; on a parse or validation failure reprompt exactly once.

    ``validate`` may transform the parsed object; it signals a bad shape by
    raising :class:`StructuredOutputError` (or ``ValueError``).
    """
    req = request
    for attempt in (1, 2):
        text = chat_complete(req, provider)
        try:
            obj = extract_json(text)
            return validate(obj) if validate else obj
        except (StructuredOutputError, ValueError, KeyError, TypeError) as exc:
            if attempt == 2:
                raise StructuredOutputError(f"{request.purpose} output unusable after reprompt: {exc}") from exc
            logger.info("reprompting %s after unusable output: %s", request.purpose, exc)
            req = request.followed_by(Message("assistant", text), Message("user", REPROMPT.format(problem=exc)))
    raise AssertionError("unreachable")


# -- scripted mock ---------------------------------------------------------


@dataclass
class ScriptedMock:
    """Canned completions keyed by (purpose, prompt digest) and vectors keyed by text digest."""

    name: str = "scripted-mock"
    dimension: int = DEFAULT_DIMENSION
    completions: dict[tuple[str, str], str] = field(default_factory=dict)
    vectors: dict[str, tuple[float, ...]] = field(default_factory=dict)
    live: bool = False

    def __post_init__(self) -> None:
        self._lock = threading.Lock()
        self.calls: list[tuple[str, str]] = []

    def register_script(self, entries: Iterable[dict[str, Any]]) -> ScriptedMock:
        """Add entries of the form ``{purpose, messages|digest, completion}`` or ``{text|digest, vector}``."""
        for entry in entries:
            if "completion" in entry:
                purpose = entry.get("purpose")
                if purpose not in PURPOSES:
                    raise MockScriptError(f"bad purpose {purpose!r}")
                digest = entry.get("digest") or prompt_digest(_messages(entry["messages"]))
                _check_digest(digest)
                self._put(self.completions, (purpose, digest), str(entry["completion"]))
            elif "vector" in entry:
                digest = entry.get("digest") or text_digest(entry["text"])
                _check_digest(digest)
                vec = tuple(float(x) for x in entry["vector"])
                self._put(self.vectors, digest, vec)
            else:
                raise MockScriptError(f"entry has neither completion nor vector: {sorted(entry)}")
        return self

    def _put(self, table: dict, key: Any, value: Any) -> None:
        with self._lock:
            if key in table and table[key] != value:
                raise MockScriptError(f"conflicting registration for {key}")
            table[key] = value

    @classmethod
    def from_file(cls, path: str | Path, **kwargs: Any) -> ScriptedMock:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        mock = cls(**{**{k: data[k] for k in ("dimension",) if k in data}, **kwargs})
        return mock.register_script(data.get("entries", []))

    def complete(self, request: GenerationRequest) -> str:
        digest = request.digest()
        with self._lock:
            self.calls.append(("chat:" + request.purpose, digest))
            out = self.completions.get((request.purpose, digest))
        if out is None:
            raise UnregisteredDigestError("completion", request.purpose, digest, request.messages[-1].content)
        return out

    def embed(self, text: str) -> list[float]:
        digest = text_digest(text)
        with self._lock:
            self.calls.append(("embed", digest))
            vec = self.vectors.get(digest)
        if vec is None:
            raise UnregisteredDigestError("vector", None, digest, text)
        return list(vec)


def _messages(raw: Sequence[Any]) -> tuple[Message, ...]:
    return tuple(m if isinstance(m, Message) else Message(m["role"], m["content"]) for m in raw)


def _check_digest(digest: str) -> None:
    if not (isinstance(digest, str) and len(digest) == 64 and all(c in "0123456789abcdef" for c in digest)):
        raise MockScriptError(f"malformed digest {digest!r}")


class ScriptRecorder:
    """Wraps a chat and/or embedding provider and records every exchange as mock entries."""

    def __init__(self, inner: Any, name: str = "recorder"):
        self.inner = inner
        self.name = name
        self.live = getattr(inner, "live", False)
        self.dimension = getattr(inner, "dimension", DEFAULT_DIMENSION)
        self.entries: dict[tuple[str, str], dict[str, Any]] = {}
        self._lock = threading.Lock()

    def complete(self, request: GenerationRequest) -> str:
        out = self.inner.complete(request)
        with self._lock:
            self.entries[(request.purpose, request.digest())] = {
                "purpose": request.purpose,
                "digest": request.digest(),
                "completion": out,
            }
        return out

    def embed(self, text: str) -> list[float]:
        vec = self.inner.embed(text)
        with self._lock:
            self.entries[("embed", text_digest(text))] = {"digest": text_digest(text), "vector": list(vec)}
        return vec

    def script(self) -> list[dict[str, Any]]:
        return [self.entries[k] for k in sorted(self.entries)]

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({"dimension": self.dimension, "entries": self.script()}, indent=1), encoding="utf-8")


class AuditingProvider:
    """Pass-through wrapper that logs purpose and digest of every call."""

    def __init__(self, inner: Any):
        self.inner = inner
        self.name = getattr(inner, "name", "provider")
        self.live = getattr(inner, "live", False)
        self.dimension = getattr(inner, "dimension", DEFAULT_DIMENSION)
        self.log: list[tuple[str, str]] = []
        self._lock = threading.Lock()

    def complete(self, request: GenerationRequest) -> str:
        with self._lock:
            self.log.append((request.purpose, request.digest()))
        return self.inner.complete(request)

    def embed(self, text: str) -> list[float]:
        with self._lock:
            self.log.append(("embed", text_digest(text)))
        return self.inner.embed(text)


class UnavailableProvider:
    """A slot whose provider is down; every call raises :class:`ProviderError`."""

    live = False

    def __init__(self, name: str = "unavailable", dimension: int = DEFAULT_DIMENSION):
        self.name = name
        self.dimension = dimension
        self.calls = 0

    def complete(self, request: GenerationRequest) -> str:
        self.calls += 1
        raise ProviderError(f"{self.name} is unavailable")

    def embed(self, text: str) -> list[float]:
        self.calls += 1
        raise ProviderError(f"{self.name} is unavailable")


# -- HTTP providers --------------------------------------------------------


class _HttpProviderBase:
    live = True

    def __init__(
        self,
        name: str,
        url: str,
        model: str,
        transport: Transport,
        api_key_env: str | None = None,
        retry: RetryPolicy | None = None,
        clock: Clock | None = None,
    ):
        self.name = name
        self.url = url
        self.model = model
        self.transport = transport
        self.api_key_env = api_key_env
        self.retry = retry or RetryPolicy()
        self.clock = clock or SystemClock()

    def _headers(self) -> dict[str, str]:
        key = os.environ.get(self.api_key_env) if self.api_key_env else None
        return {"Authorization": f"Bearer {key}"} if key else {}

    def _post(self, body: dict[str, Any]) -> Any:
        last: Exception | None = None
        for attempt in range(1, self.retry.max_attempts + 1):
            try:
                resp = self.transport.send(HttpRequest.post(self.url, body, self._headers()))
            except TransportError as exc:
                last = exc
            else:
                if resp.status == 429 or resp.status >= 500:
                    last = ProviderError(f"{self.name}: HTTP {resp.status}")
                elif resp.status >= 400:
                    raise ProviderError(f"{self.name}: HTTP {resp.status}: {resp.body[:200]}")
                else:
                    try:
                        return resp.json()
                    except json.JSONDecodeError as exc:
                        raise ProviderError(f"{self.name}: response is not JSON") from exc
            if attempt < self.retry.max_attempts:
                self.clock.sleep(self.retry.delay(attempt))
        raise ProviderError(f"{self.name} failed after {self.retry.max_attempts} attempts: {last}")


class HttpChatProvider(_HttpProviderBase):
    """Chat-completions endpoint in the widely used ``messages``/``choices`` schema."""

    def complete(self, request: GenerationRequest) -> str:
        body: dict[str, Any] = {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "max_tokens": request.max_tokens,
        }
        if request.temperature is not None:
            body["temperature"] = request.temperature
        data = self._post(body)
        try:
            choice = data["choices"][0]
            text = choice["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"{self.name}: unexpected response shape") from exc
        if choice.get("finish_reason") == "length":
            raise TokenLimitError(f"{self.name}: output hit the {request.max_tokens}-token cap")
        return text


class HttpEmbeddingProvider(_HttpProviderBase):
    def __init__(self, *args: Any, dimension: int = DEFAULT_DIMENSION, **kwargs: Any):
        super().__init__(*args, **kwargs)
        self.dimension = dimension

    def embed(self, text: str) -> list[float]:
        data = self._post({"model": self.model, "input": text})
        try:
            return list(data["data"][0]["embedding"])
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"{self.name}: unexpected response shape") from exc
