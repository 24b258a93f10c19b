"""HTTP transports: live, recorded-fixture replay, and a stub that refuses to dial."""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Protocol

# never part of a request digest or a fixture file
SECRET_PARAMS = frozenset({"api_key", "apikey", "key", "token"})


class TransportError(Exception):
    """The request never produced an HTTP response."""


class FixtureMissingError(TransportError):
    def __init__(self, request: HttpRequest, digest: str):
        self.request = request
        self.digest = digest
        super().__init__(f"no recorded fixture for {request.method} {request.url} {dict(request.params)} ({digest[:12]})")


@dataclass(frozen=True)
class HttpRequest:
    method: str
    url: str
    params: tuple[tuple[str, str], ...] = ()
    body: Any = None
    headers: tuple[tuple[str, str], ...] = ()

    @classmethod
    def get(cls, url: str, params: dict[str, Any] | None = None, headers: dict[str, str] | None = None) -> HttpRequest:
        return cls("GET", url, _params(params), None, tuple(sorted((headers or {}).items())))

    @classmethod
    def post(cls, url: str, body: Any, headers: dict[str, str] | None = None) -> HttpRequest:
        return cls("POST", url, (), body, tuple(sorted((headers or {}).items())))

    def public_params(self) -> tuple[tuple[str, str], ...]:
        return tuple((k, v) for k, v in self.params if k not in SECRET_PARAMS)

    def canonical(self) -> dict[str, Any]:
        """Normalized form used for cache keys and fixture digests."""
        out: dict[str, Any] = {"method": self.method, "url": self.url, "params": [list(p) for p in self.public_params()]}
        if self.body is not None:
            out["body"] = self.body
        return out

    def digest(self) -> str:
        raw = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        return hashlib.sha256(raw.encode("utf-8")).hexdigest()


def _params(params: dict[str, Any] | None) -> tuple[tuple[str, str], ...]:
    if not params:
        return ()
    return tuple(sorted((str(k), str(v)) for k, v in params.items() if v is not None))


@dataclass(frozen=True)
class HttpResponse:
    status: int
    body: str
    headers: dict[str, str] = field(default_factory=dict)

    def json(self) -> Any:
        return json.loads(self.body)


class Transport(Protocol):
    def send(self, request: HttpRequest) -> HttpResponse: ...


class LiveTransport:
    """Real HTTP over httpx."""

    def __init__(self, timeout: float = 30.0, user_agent: str = "deeper/0.1"):
        import httpx

        self._client = httpx.Client(timeout=timeout, headers={"User-Agent": user_agent}, follow_redirects=True)
        self._httpx = httpx

    def send(self, request: HttpRequest) -> HttpResponse:
        try:
            resp = self._client.request(
                request.method,
                request.url,
                params=list(request.params) or None,
                json=request.body,
                headers=dict(request.headers) or None,
            )
        except self._httpx.HTTPError as exc:
            raise TransportError(f"{request.method} {request.url}: {exc}") from exc
        return HttpResponse(resp.status_code, resp.text, dict(resp.headers))

    def close(self) -> None:
        self._client.close()


class ReplayTransport:
    """Serves canned responses keyed by request digest; never touches the network.

    Each fixture is ``<digest>.json`` holding ``{request, status, body, recorded_at}``.
    """

    def __init__(self, fixture_dir: str | Path):
        self.fixture_dir = Path(fixture_dir)
        self._lock = threading.Lock()
        self.calls: list[HttpRequest] = []

    def send(self, request: HttpRequest) -> HttpResponse:
        digest = request.digest()
        path = self.fixture_dir / f"{digest}.json"
        with self._lock:
            self.calls.append(request)
        if not path.exists():
            raise FixtureMissingError(request, digest)
        rec = json.loads(path.read_text(encoding="utf-8"))
        return HttpResponse(int(rec["status"]), rec["body"], rec.get("headers", {}))


def write_fixture(fixture_dir: str | Path, request: HttpRequest, status: int, body: str | Any, recorded_at: str | None = None) -> Path:
    """Store one replay record; non-string bodies are JSON-encoded."""
    fixture_dir = Path(fixture_dir)
    fixture_dir.mkdir(parents=True, exist_ok=True)
    if not isinstance(body, str):
        body = json.dumps(body, sort_keys=True)
    rec = {
        "request": request.canonical(),
        "status": status,
        "body": body,
        "recorded_at": recorded_at or datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    path = fixture_dir / f"{request.digest()}.json"
    path.write_text(json.dumps(rec, indent=1, sort_keys=True, ensure_ascii=False), encoding="utf-8")
    return path


class RecordingTransport:
    """Forwards to an inner transport and stores every exchange as a fixture."""

    def __init__(self, inner: Transport, fixture_dir: str | Path):
        self.inner = inner
        self.fixture_dir = Path(fixture_dir)

    def send(self, request: HttpRequest) -> HttpResponse:
        resp = self.inner.send(request)
        write_fixture(self.fixture_dir, request, resp.status, resp.body)
        return resp


class DialFailingTransport:
    """Raises on every call; proves a code path stays offline."""

    def __init__(self) -> None:
        self.attempts = 0

    def send(self, request: HttpRequest) -> HttpResponse:
        self.attempts += 1
        raise TransportError(f"network access refused: {request.method} {request.url}")


class Clock(Protocol):
    def monotonic(self) -> float: ...
    def sleep(self, seconds: float) -> None: ...
    def now(self) -> datetime: ...


class SystemClock:
    def monotonic(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)

    def now(self) -> datetime:
        return datetime.now(timezone.utc)


class FakeClock:
    """Manually advanced clock; ``sleep`` advances time instantly."""

    def __init__(self, start: float = 0.0, wall: datetime | None = None):
        self._t = start
        self._wall0 = wall or datetime(2025, 6, 1, tzinfo=timezone.utc)
        self._start = start
        self._lock = threading.Lock()
        self.sleeps: list[float] = []

    def monotonic(self) -> float:
        with self._lock:
            return self._t

    def sleep(self, seconds: float) -> None:
        with self._lock:
            self.sleeps.append(seconds)
            if seconds > 0:
                self._t += seconds

    def advance(self, seconds: float) -> None:
        with self._lock:
            self._t += seconds

    def now(self) -> datetime:
        from datetime import timedelta

        with self._lock:
            return self._wall0 + timedelta(seconds=self._t - self._start)
