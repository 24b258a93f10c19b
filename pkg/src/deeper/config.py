"""Engine configuration: one TOML file with providers, clients and pipeline sections.

Every key is optional; the defaults below are the documented ones.

    [pipeline]
    offline = false          # true forbids live transports and HTTP providers
    decompose = true         # false answers the question as a single sub-question
    use_kg = true            # false removes knowledge-graph query expansion
    parallelism = 4          # worker bound for sub-questions, queries and service runs
    k_max = 6                # most sub-questions a plan may hold
    kg_path = ""             # knowledge graph file; empty disables expansion
    kg_format = "primekg-csv"  # or "tsv"
    kg_threshold = 0.5       # trigram similarity cut-off for entity matching
    rubric = ""              # file whose text replaces the appraisal system prompt
    cache_dir = ""           # response cache; DEEPER_CACHE_DIR overrides
    token_budget = 24000     # evidence budget of the synthesis prompt
    runs_dir = "runs"        # where run directories are created

    [pipeline.caps]
    pubmed = 20
    trials = 10
    wikipedia = 1

    [clients]
    transport = "live"       # live | replay | record | dial-failing
    fixture_dir = ""         # replay source / record destination
    pubmed_sort = ""         # empty keeps the service's relevance order
    [clients.rate_limits]    # requests per second by endpoint family
    ncbi = 3.0               # 10.0 is used automatically when DEEPER_NCBI_API_KEY is set

    [providers.<slot>]       # slots: planning, interpretation, synthesis, fallback, judge, embedding
    kind = "none"            # none | mock | http | unavailable
    script = ""              # mock: JSON script of canned completions/vectors
    url = ""                 # http: endpoint
    model = ""               # http: model name sent in the body
    api_key_env = ""         # http: env var holding the key (DEEPER_LLM_API_KEY / DEEPER_EMBED_API_KEY)
    dimension = 768          # embedding slot only

The fallback slot defaults to the synthesis slot when left out.
Relative paths resolve against the directory of the config file.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import tomli

SLOTS = ("planning", "interpretation", "synthesis", "fallback", "judge", "embedding")
PROVIDER_KINDS = ("none", "mock", "http", "unavailable")
TRANSPORTS = ("live", "replay", "record", "dial-failing")
OFFLINE_TRANSPORTS = ("replay", "dial-failing")
KG_FORMATS = ("primekg-csv", "tsv")

CACHE_ENV = "DEEPER_CACHE_DIR"
LLM_KEY_ENV = "DEEPER_LLM_API_KEY"
EMBED_KEY_ENV = "DEEPER_EMBED_API_KEY"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ProviderSlot:
    kind: str = "none"
    script: Path | None = None
    url: str = ""
    model: str = ""
    api_key_env: str = ""
    dimension: int = 768

    @property
    def live(self) -> bool:
        return self.kind == "http"


@dataclass(frozen=True)
class SourceCaps:
    pubmed: int = 20
    trials: int = 10
    wikipedia: int = 1


@dataclass(frozen=True)
class ClientSettings:
    transport: str = "live"
    fixture_dir: Path | None = None
    pubmed_sort: str = ""
    rate_limits: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class EngineConfig:
    providers: dict[str, ProviderSlot] = field(default_factory=dict)
    clients: ClientSettings = field(default_factory=ClientSettings)
    offline: bool = False
    decompose: bool = True
    use_kg: bool = True
    parallelism: int = 4
    k_max: int = 6
    kg_path: Path | None = None
    kg_format: str = "primekg-csv"
    kg_threshold: float = 0.5
    rubric: Path | None = None
    cache_dir: Path | None = None
    token_budget: int = 24_000
    runs_dir: Path = Path("runs")
    caps: SourceCaps = field(default_factory=SourceCaps)

    def slot(self, name: str) -> ProviderSlot:
        if name not in SLOTS:
            raise KeyError(name)
        if name == "fallback" and "fallback" not in self.providers:
            return self.slot("synthesis")
        return self.providers.get(name, ProviderSlot())

    def with_overrides(self, **changes: Any) -> EngineConfig:
        """Copy with toggles flipped (CLI flags); the result is re-validated."""
        cfg = replace(self, **{k: v for k, v in changes.items() if v is not None})
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.parallelism < 1:
            raise ConfigError("pipeline.parallelism must be >= 1")
        if self.k_max < 1:
            raise ConfigError("pipeline.k_max must be >= 1")
        if self.token_budget < 1:
            raise ConfigError("pipeline.token_budget must be >= 1")
        if not 0.0 <= self.kg_threshold <= 1.0:
            raise ConfigError("pipeline.kg_threshold must lie in [0, 1]")
        if self.kg_format not in KG_FORMATS:
            raise ConfigError(f"pipeline.kg_format must be one of {KG_FORMATS}")
        for name in ("pubmed", "trials", "wikipedia"):
            if getattr(self.caps, name) < 0:
                raise ConfigError(f"pipeline.caps.{name} must be >= 0")
        t = self.clients.transport
        if t not in TRANSPORTS:
            raise ConfigError(f"clients.transport must be one of {TRANSPORTS}")
        if t in ("replay", "record") and self.clients.fixture_dir is None:
            raise ConfigError(f"clients.transport = {t!r} needs clients.fixture_dir")
        for name, rate in self.clients.rate_limits.items():
            if rate <= 0:
                raise ConfigError(f"clients.rate_limits.{name} must be > 0")
        for name, slot in self.providers.items():
            if slot.kind not in PROVIDER_KINDS:
                raise ConfigError(f"providers.{name}.kind must be one of {PROVIDER_KINDS}")
            if slot.kind == "mock" and slot.script is None:
                raise ConfigError(f"providers.{name}: mock provider needs a script")
            if slot.kind == "http" and not (slot.url and slot.model):
                raise ConfigError(f"providers.{name}: http provider needs url and model")
        if self.offline:
            if t not in OFFLINE_TRANSPORTS:
                raise ConfigError(f"offline mode forbids clients.transport = {t!r}; use replay or dial-failing")
            live = [f"providers.{n} ({s.url})" for n, s in sorted(self.providers.items()) if s.live]
            if live:
                raise ConfigError("offline mode forbids live providers: " + ", ".join(live))

    def snapshot(self) -> dict[str, Any]:
        """JSON-safe view, used for run records and run-id digests."""

        def clean(v: Any) -> Any:
            if isinstance(v, Path):
                return str(v)
            if isinstance(v, dict):
                return {k: clean(x) for k, x in sorted(v.items())}
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            return v

        return clean(asdict(self))


def _path(value: Any, base: Path, key: str) -> Path | None:
    if value in (None, ""):
        return None
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a path string")
    p = Path(value).expanduser()
    return p if p.is_absolute() else base / p


def _typed(table: dict[str, Any], key: str, kind: type | tuple[type, ...], default: Any, prefix: str) -> Any:
    if key not in table:
        return default
    value = table[key]
    # bool is an int subclass; keep them apart
    if isinstance(value, bool) and kind is not bool or not isinstance(value, kind):
        raise ConfigError(f"{prefix}{key} has the wrong type ({type(value).__name__})")
    return value


def _known(table: dict[str, Any], allowed: set[str], prefix: str) -> None:
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in [{prefix.rstrip('.') or 'top level'}]: {', '.join(unknown)}")


def config_from_dict(data: dict[str, Any], base: Path | None = None) -> EngineConfig:
    base = base or Path.cwd()
    _known(data, {"pipeline", "clients", "providers"}, "")
    pipe = data.get("pipeline", {})
    _known(pipe, {
        "offline", "decompose", "use_kg", "parallelism", "k_max", "kg_path", "kg_format", "kg_threshold",
        "rubric", "cache_dir", "token_budget", "runs_dir", "caps",
    }, "pipeline.")
    caps = pipe.get("caps", {})
    _known(caps, {"pubmed", "trials", "wikipedia"}, "pipeline.caps.")
    cl = data.get("clients", {})
    _known(cl, {"transport", "fixture_dir", "pubmed_sort", "rate_limits"}, "clients.")
    rates = cl.get("rate_limits", {})
    for k, v in rates.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"clients.rate_limits.{k} must be a number")

    providers: dict[str, ProviderSlot] = {}
    for name, table in data.get("providers", {}).items():
        if name not in SLOTS:
            raise ConfigError(f"unknown provider slot {name!r}; slots are {', '.join(SLOTS)}")
        pre = f"providers.{name}."
        _known(table, {"kind", "script", "url", "model", "api_key_env", "dimension"}, pre)
        default_env = EMBED_KEY_ENV if name == "embedding" else LLM_KEY_ENV
        providers[name] = ProviderSlot(
            kind=_typed(table, "kind", str, "none", pre),
            script=_path(table.get("script"), base, pre + "script"),
            url=_typed(table, "url", str, "", pre),
            model=_typed(table, "model", str, "", pre),
            api_key_env=_typed(table, "api_key_env", str, default_env, pre),
            dimension=_typed(table, "dimension", int, 768, pre),
        )

    env_cache = os.environ.get(CACHE_ENV)
    cfg = EngineConfig(
        providers=providers,
        clients=ClientSettings(
            transport=_typed(cl, "transport", str, "live", "clients."),
            fixture_dir=_path(cl.get("fixture_dir"), base, "clients.fixture_dir"),
            pubmed_sort=_typed(cl, "pubmed_sort", str, "", "clients."),
            rate_limits={k: float(v) for k, v in rates.items()},
        ),
        offline=_typed(pipe, "offline", bool, False, "pipeline."),
        decompose=_typed(pipe, "decompose", bool, True, "pipeline."),
        use_kg=_typed(pipe, "use_kg", bool, True, "pipeline."),
        parallelism=_typed(pipe, "parallelism", int, 4, "pipeline."),
        k_max=_typed(pipe, "k_max", int, 6, "pipeline."),
        kg_path=_path(pipe.get("kg_path"), base, "pipeline.kg_path"),
        kg_format=_typed(pipe, "kg_format", str, "primekg-csv", "pipeline."),
        kg_threshold=float(_typed(pipe, "kg_threshold", (int, float), 0.5, "pipeline.")),
        rubric=_path(pipe.get("rubric"), base, "pipeline.rubric"),
        cache_dir=Path(env_cache) if env_cache else _path(pipe.get("cache_dir"), base, "pipeline.cache_dir"),
        token_budget=_typed(pipe, "token_budget", int, 24_000, "pipeline."),
        runs_dir=_path(pipe.get("runs_dir"), base, "pipeline.runs_dir") or Path("runs"),
        caps=SourceCaps(
            pubmed=_typed(caps, "pubmed", int, 20, "pipeline.caps."),
            trials=_typed(caps, "trials", int, 10, "pipeline.caps."),
            wikipedia=_typed(caps, "wikipedia", int, 1, "pipeline.caps."),
        ),
    )
    cfg.validate()
    return cfg


def load_config(path: str | Path | None = None) -> EngineConfig:
    """Read a TOML config; no path gives the all-defaults config."""
    if path is None:
        return config_from_dict({})
    p = Path(path)
    try:
        data = tomli.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: {exc}") from exc
    return config_from_dict(data, p.resolve().parent)
