"""Rate limiting, response caching and retries shared by every API client."""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .transport import Clock, HttpRequest, HttpResponse, SystemClock, Transport, TransportError

logger = logging.getLogger(__name__)

DAY = 86400.0
DEFAULT_TTL = 7 * DAY
NEGATIVE_TTL = 1 * DAY


class RateLimitedError(Exception):
    """The service kept answering 429 after all retries."""

    def __init__(self, endpoint: str, retry_after: float | None):
        self.endpoint = endpoint
        self.retry_after = retry_after
        hint = f"; retry after {retry_after:g}s" if retry_after is not None else ""
        super().__init__(f"{endpoint} rejected the request (HTTP 429){hint}")


@dataclass
class RetryPolicy:
    max_attempts: int = 3
    backoff_base: float = 0.5

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    def delay(self, attempt: int) -> float:
        """Backoff before retry number ``attempt`` (1-based)."""
        return self.backoff_base * (2 ** (attempt - 1))


@dataclass
class ClientConfig:
    rate_limits: dict[str, float] = field(default_factory=dict)
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    cache_dir: Path | None = None
    ttl: float = DEFAULT_TTL
    negative_ttl: float = NEGATIVE_TTL
    ncbi_api_key_env: str = "DEEPER_NCBI_API_KEY"
    ncbi_api_key: str | None = None
    pubmed_sort: str | None = None  # None = service-default relevance
    throttle: bool = True  # False only for transports with no remote service behind them

    def __post_init__(self) -> None:
        for name, rate in self.rate_limits.items():
            if rate <= 0:
                raise ValueError(f"rate limit for {name} must be > 0")

    def rate_for(self, endpoint: str) -> float:
        if endpoint in self.rate_limits:
            return self.rate_limits[endpoint]
        if endpoint == "ncbi":
            return 10.0 if self.ncbi_api_key else 3.0
        return 1.0


class RateLimiter:
    """Minimum-interval limiter: call ``i`` starts no earlier than ``first + i / rate``."""

    def __init__(self, rate: float, clock: Clock):
        if rate <= 0:
            raise ValueError("rate must be > 0")
        self.interval = 1.0 / rate
        self.clock = clock
        self._next = None
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            now = self.clock.monotonic()
            slot = now if self._next is None else max(now, self._next)
            self._next = slot + self.interval
        wait = slot - now
        if wait > 0:
            self.clock.sleep(wait)


class ResponseCache:
    """File-backed cache addressed by the normalized request digest."""

    def __init__(self, directory: str | Path | None, clock: Clock):
        self.directory = Path(directory) if directory else None
        self.clock = clock
        self._memory: dict[str, dict[str, Any]] = {}
        self._lock = threading.Lock()
        if self.directory:
            self.directory.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(namespace: str, canonical: Any) -> str:
        raw = json.dumps({"ns": namespace, "req": canonical}, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(raw.encode()).hexdigest()

    def _path(self, key: str) -> Path | None:
        return self.directory / key[:2] / f"{key}.json" if self.directory else None

    def get(self, key: str) -> Any | None:
        with self._lock:
            entry = self._memory.get(key)
            path = self._path(key)
            if entry is None and path is not None and path.exists():
                try:
                    entry = json.loads(path.read_text(encoding="utf-8"))
                except (OSError, json.JSONDecodeError):
                    entry = None
            if entry is None:
                return None
            if self.clock.now().timestamp() - entry["stored_at"] > entry["ttl"]:
                self._memory.pop(key, None)
                if path is not None:
                    path.unlink(missing_ok=True)
                return None
            self._memory[key] = entry
            return entry["payload"]

    def put(self, key: str, payload: Any, ttl: float) -> None:
        entry = {"stored_at": self.clock.now().timestamp(), "ttl": ttl, "payload": payload}
        with self._lock:
            self._memory[key] = entry
            path = self._path(key)
            if path is not None:
                path.parent.mkdir(parents=True, exist_ok=True)
                tmp = path.with_suffix(".tmp")
                tmp.write_text(json.dumps(entry), encoding="utf-8")
                tmp.replace(path)


class HttpGateway:
    """Cache -> rate limit -> retry -> transport, for one shared set of endpoints."""

    def __init__(self, transport: Transport, config: ClientConfig | None = None, clock: Clock | None = None):
        self.transport = transport
        self.config = config or ClientConfig()
        self.clock = clock or SystemClock()
        self.cache = ResponseCache(self.config.cache_dir, self.clock)
        self._limiters: dict[str, RateLimiter] = {}
        self._lock = threading.Lock()
        self.upstream_calls = 0

    def limiter(self, endpoint: str) -> RateLimiter:
        with self._lock:
            lim = self._limiters.get(endpoint)
            if lim is None:
                lim = self._limiters[endpoint] = RateLimiter(self.config.rate_for(endpoint), self.clock)
            return lim

    def fetch(
        self,
        endpoint: str,
        request: HttpRequest,
        cache_statuses: tuple[int, ...] = (200,),
        ttl_for: Callable[[HttpResponse], float] | None = None,
    ) -> HttpResponse:
        """Send ``request`` through the shared machinery.

        Responses with a status in ``cache_statuses`` are cached, for
        ``ttl_for(response)`` seconds when given, else the default TTL.
        Transport errors, 5xx and 429 are retried; any other status is returned.
        """
        key = ResponseCache.key(endpoint, request.canonical())
        hit = self.cache.get(key)
        if hit is not None:
            return HttpResponse(hit["status"], hit["body"])

        policy = self.config.retry
        last_exc: Exception | None = None
        for attempt in range(1, policy.max_attempts + 1):
            if self.config.throttle:
                self.limiter(endpoint).acquire()
            retry_after = None
            try:
                with self._lock:
                    self.upstream_calls += 1
                resp = self.transport.send(request)
            except TransportError as exc:
                last_exc = exc
                logger.debug("%s attempt %d failed: %s", endpoint, attempt, exc)
            else:
                if resp.status == 429:
                    retry_after = _retry_after(resp)
                    last_exc = RateLimitedError(endpoint, retry_after)
                elif resp.status >= 500:
                    last_exc = TransportError(f"{endpoint}: HTTP {resp.status}")
                else:
                    if resp.status in cache_statuses:
                        ttl = ttl_for(resp) if ttl_for else self.config.ttl
                        self.cache.put(key, {"status": resp.status, "body": resp.body}, ttl)
                    return resp
            if attempt < policy.max_attempts:
                delay = policy.delay(attempt)
                if retry_after is not None:
                    delay = max(delay, retry_after)
                self.clock.sleep(delay)
        assert last_exc is not None
        raise last_exc


def _retry_after(resp: HttpResponse) -> float | None:
    for k, v in resp.headers.items():
        if k.lower() == "retry-after":
            try:
                return float(v)
            except ValueError:
                return None
    return None
