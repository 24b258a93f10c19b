"""End-to-end driver: plan, collaborate, interpret, constrain, synthesize, persist."""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import traceback
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .collab import CollabContext, RetrievalLimits, SubQuestionOutcome, run_collaboration, write_collab_artifacts
from .config import EngineConfig
from .evalkit import MetricReport, write_metrics, year_distribution
from .kgstore import KnowledgeGraph, load_graph
from .litclients import (
    Clock,
    ClientConfig,
    DialFailingTransport,
    HttpGateway,
    LiteratureClients,
    LiveTransport,
    RecordingTransport,
    ReplayTransport,
    SystemClock,
    Transport,
)
from .llm import HttpChatProvider, HttpEmbeddingProvider, ScriptedMock, UnavailableProvider
from .planner import ResearchPlan, ResearchQuestion, Toggles, build_plan
from .synthesis import (
    AnswerBundle,
    CitationIntegrityError,
    ConstrainedEvidence,
    InterpretedEvidence,
    apply_constraints,
    interpret_evidence,
    synthesize_answer,
)

logger = logging.getLogger(__name__)

STAGES = ("plan", "retrieve", "interpret", "constrain", "synthesize")
STATUSES = ("queued", "planned", "retrieving", "synthesizing", "done", "failed")
RUN_ID = re.compile(r"^[0-9a-f]{12}-\d{8}T\d{12}Z(-\d+)?$")
_ISO_TS = re.compile(r"\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}:\d{2}(\.\d+)?(Z|[+-]\d{2}:?\d{2})?")


def dump_json(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def canonicalize_timestamps(text: str) -> str:
    """Replace ISO-8601 timestamps so artifacts from different runs compare equal."""
    return _ISO_TS.sub("<timestamp>", text)


# -- runtime -----------------------------------------------------------------


class GraphSource:
    """Loads the configured graph on first use and shares it between runs."""

    def __init__(self, path: Path, fmt: str = "primekg-csv", graph: KnowledgeGraph | None = None):
        self.path = path
        self.format = fmt
        self._graph = graph
        self._lock = threading.Lock()

    @property
    def loaded(self) -> bool:
        return self._graph is not None

    def graph(self) -> KnowledgeGraph:
        with self._lock:
            if self._graph is None:
                self._graph = load_graph(self.path, self.format)
            return self._graph


class CountingGraph:
    """Per-run proxy that counts every graph operation before delegating."""

    def __init__(self, source: GraphSource):
        self._source = source
        self._lock = threading.Lock()
        self.calls: Counter = Counter()

    def __getattr__(self, name: str) -> Any:
        if name.startswith("_"):
            raise AttributeError(name)
        with self._lock:
            self.calls[name] += 1
        return getattr(self._source.graph(), name)

    @property
    def total(self) -> int:
        return sum(self.calls.values())


@dataclass
class Runtime:
    providers: dict[str, Any]
    clients: LiteratureClients
    clock: Clock
    graph: GraphSource | None = None
    rubric: str | None = None

    def provider(self, slot: str) -> Any:
        return self.providers.get(slot)


def build_transport(config: EngineConfig) -> Transport:
    c = config.clients
    if c.transport == "replay":
        return ReplayTransport(c.fixture_dir)
    if c.transport == "dial-failing":
        return DialFailingTransport()
    if c.transport == "record":
        return RecordingTransport(LiveTransport(), c.fixture_dir)
    return LiveTransport()


def build_providers(config: EngineConfig, clock: Clock) -> dict[str, Any]:
    mocks: dict[tuple[Path, int], ScriptedMock] = {}
    live: Transport | None = None
    out: dict[str, Any] = {}
    for name in ("planning", "interpretation", "synthesis", "fallback", "judge", "embedding"):
        slot = config.slot(name)
        if slot.kind == "none":
            out[name] = None
        elif slot.kind == "unavailable":
            out[name] = UnavailableProvider(name, slot.dimension)
        elif slot.kind == "mock":
            key = (slot.script.resolve(), slot.dimension)
            if key not in mocks:
                mocks[key] = ScriptedMock.from_file(slot.script, name=f"mock:{slot.script.name}", dimension=slot.dimension)
            out[name] = mocks[key]
        else:
            live = live or LiveTransport()
            cls = HttpEmbeddingProvider if name == "embedding" else HttpChatProvider
            extra = {"dimension": slot.dimension} if name == "embedding" else {}
            out[name] = cls(name, slot.url, slot.model, live, api_key_env=slot.api_key_env, clock=clock, **extra)
    return out


def build_runtime(
    config: EngineConfig,
    clock: Clock | None = None,
    transport: Transport | None = None,
    providers: dict[str, Any] | None = None,
) -> Runtime:
    """Wire transports, clients, providers and the graph from a validated config."""
    config.validate()
    clock = clock or SystemClock()
    client_cfg = ClientConfig(
        rate_limits=dict(config.clients.rate_limits),
        cache_dir=config.cache_dir,
        pubmed_sort=config.clients.pubmed_sort or None,
        # fixtures and dial-failing stubs have no service to protect
        throttle=config.clients.transport not in ("replay", "dial-failing"),
    )
    clients = LiteratureClients(HttpGateway(transport or build_transport(config), client_cfg, clock))
    if providers is None:
        providers = build_providers(config, clock)
    else:
        providers = {**dict.fromkeys(("planning", "interpretation", "synthesis", "fallback", "judge", "embedding")), **providers}
        if providers.get("fallback") is None:
            providers["fallback"] = providers.get("synthesis")
    graph = GraphSource(config.kg_path, config.kg_format) if config.kg_path else None
    rubric = config.rubric.read_text(encoding="utf-8") if config.rubric else None
    return Runtime(providers, clients, clock, graph, rubric)


# -- run records ---------------------------------------------------------------


@dataclass
class RunRecord:
    run_id: str
    question: ResearchQuestion
    config: dict[str, Any]
    run_dir: Path
    status: str = "queued"
    failed_stage: str | None = None
    error: str | None = None
    created_at: str = ""
    finished_at: str | None = None
    kg_calls: int = 0

    def __post_init__(self) -> None:
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")

    @property
    def done(self) -> bool:
        return self.status == "done"

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "question": self.question.to_dict(),
            "config": self.config,
            "run_dir": str(self.run_dir),
            "status": self.status,
            "failed_stage": self.failed_stage,
            "error": self.error,
            "created_at": self.created_at,
            "finished_at": self.finished_at,
            "kg_calls": self.kg_calls,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RunRecord:
        return cls(
            run_id=data["run_id"],
            question=ResearchQuestion.from_dict(data["question"]),
            config=data.get("config", {}),
            run_dir=Path(data["run_dir"]),
            status=data["status"],
            failed_stage=data.get("failed_stage"),
            error=data.get("error"),
            created_at=data.get("created_at", ""),
            finished_at=data.get("finished_at"),
            kg_calls=data.get("kg_calls", 0),
        )

    def save(self) -> None:
        tmp = self.run_dir / "run.json.tmp"
        tmp.write_text(dump_json(self.to_dict()), encoding="utf-8")
        tmp.replace(self.run_dir / "run.json")

    @classmethod
    def load(cls, run_dir: str | Path) -> RunRecord:
        return cls.from_dict(json.loads((Path(run_dir) / "run.json").read_text(encoding="utf-8")))


def run_digest(question: ResearchQuestion, config: EngineConfig) -> str:
    """Content digest of a run; output locations do not change what a run computes."""
    snap = {k: v for k, v in config.snapshot().items() if k not in ("runs_dir", "cache_dir")}
    payload = json.dumps({"question": question.to_dict(), "config": snap}, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def start_run(question: ResearchQuestion, config: EngineConfig, clock: Clock, runs_dir: Path | None = None) -> RunRecord:
    """Allocate a run id and directory; the record starts queued."""
    now = clock.now()
    base = f"{run_digest(question, config)[:12]}-{now.strftime('%Y%m%dT%H%M%S%f')}Z"
    root = Path(runs_dir or config.runs_dir)
    root.mkdir(parents=True, exist_ok=True)
    run_id, n = base, 1
    while True:
        try:
            (root / run_id).mkdir()
            break
        except FileExistsError:
            n += 1
            run_id = f"{base}-{n}"
    record = RunRecord(run_id, question, config.snapshot(), root / run_id, created_at=now.isoformat(timespec="seconds"))
    record.save()
    return record


class Tracer:
    def __init__(self, path: Path, clock: Clock):
        self.path = path
        self.clock = clock
        self._lock = threading.Lock()

    def event(self, event: str, **fields: Any) -> None:
        line = json.dumps({"at": self.clock.now().isoformat(timespec="seconds"), "event": event, **fields}, sort_keys=True)
        with self._lock, self.path.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")


# -- stages --------------------------------------------------------------------


def _trace_summary(plan: ResearchPlan, outcomes: list[SubQuestionOutcome]) -> str:
    parts = [f"k={len(plan.sub_questions)}"]
    for o in outcomes:
        ev = o.evidence
        part = f"sq{o.routing.i}:{o.routing.strategy}:{len(ev.included)}/{len(ev.items)} included"
        if ev.fallback_used:
            part += ":fallback"
        parts.append(part)
    return "; ".join(parts)


def _metrics(
    record: RunRecord,
    plan: ResearchPlan,
    outcomes: list[SubQuestionOutcome],
    bundle: AnswerBundle,
    current_year: int,
) -> list[MetricReport]:
    digest = record.run_id.split("-")[0]
    pool = {it.item.source_id: it.item for o in outcomes for it in o.evidence.items}
    cited = [pool[r.source_id] for r in bundle.references if r.source_id in pool]
    years = year_distribution(cited, current_year)
    reports = [
        MetricReport("sub_questions", len(plan.sub_questions), digest),
        MetricReport("evidence_items", sum(len(o.evidence.items) for o in outcomes), digest),
        MetricReport("included_items", sum(len(o.evidence.included) for o in outcomes), digest),
        MetricReport("fallback_used", sum(o.evidence.fallback_used for o in outcomes), digest),
        MetricReport("source_failures", sum(len(o.failures) for o in outcomes), digest),
        MetricReport("references", len(bundle.references), digest),
        MetricReport("kg_calls", record.kg_calls, digest),
    ]
    if years.defined:
        reports.append(MetricReport("recent_reference_share", years.recent_share, digest, {"current_year": current_year, "window_years": 5}))
    return reports


def execute_run(record: RunRecord, config: EngineConfig, runtime: Runtime) -> RunRecord:
    """Run every stage for an allocated record; failures name one stage."""
    run_dir = record.run_dir
    tracer = Tracer(run_dir / "trace.jsonl", runtime.clock)
    kg = CountingGraph(runtime.graph) if runtime.graph is not None else None
    current_year = runtime.clock.now().year
    question = record.question
    stage = "plan"

    def advance(status: str) -> None:
        record.status = status
        record.save()
        tracer.event("status", status=status)

    tracer.event("start", run_id=record.run_id, question=question.text)
    try:
        tracer.event("stage", stage="plan")
        plan = build_plan(question, runtime.provider("planning"), config.k_max, Toggles(config.decompose, config.use_kg))
        (run_dir / "plan.json").write_text(plan.to_json(), encoding="utf-8")
        advance("planned")

        stage = "retrieve"
        advance("retrieving")
        ctx = CollabContext(
            clients=runtime.clients,
            kg=kg if config.use_kg else None,
            router=runtime.provider("planning"),
            appraiser=runtime.provider("interpretation"),
            fallback=runtime.provider("fallback"),
            use_kg=config.use_kg,
            preference=question.constraints.preference,
            limits=RetrievalLimits(config.caps.pubmed, config.caps.trials, config.caps.wikipedia),
            current_year=current_year,
            parallelism=config.parallelism,
            kg_threshold=config.kg_threshold,
            rubric=runtime.rubric,
        )
        outcomes = run_collaboration(plan, ctx)
        write_collab_artifacts(outcomes, run_dir, dump_json)
        for o in outcomes:
            tracer.event("evidence", i=o.routing.i, strategy=o.routing.strategy, items=len(o.evidence.items),
                         included=len(o.evidence.included), failures=len(o.failures))

        stage = "interpret"
        advance("synthesizing")
        interp = runtime.provider("interpretation")
        interpreted: list[InterpretedEvidence] = []
        (run_dir / "interpreted").mkdir(exist_ok=True)
        for sq, o in zip(plan.sub_questions, outcomes):
            ie = interpret_evidence(sq.text, o.evidence, interp)
            interpreted.append(ie)
            (run_dir / "interpreted" / f"sq-{sq.i}.json").write_text(dump_json(ie.to_dict()), encoding="utf-8")

        stage = "constrain"
        constrained: ConstrainedEvidence = apply_constraints(interpreted, question, interp)
        (run_dir / "constraints.json").write_text(dump_json(constrained.to_dict()), encoding="utf-8")

        stage = "synthesize"
        bundle = synthesize_answer(
            question, constrained, runtime.provider("synthesis"), runtime.clients,
            trace=_trace_summary(plan, outcomes), token_budget=config.token_budget,
        )
        unresolved = [r.source_id for r in bundle.references if not r.resolved]
        if unresolved:
            raise CitationIntegrityError(f"unresolved references: {unresolved}")
        record.kg_calls = kg.total if kg else 0
        write_metrics(_metrics(record, plan, outcomes, bundle, current_year), run_dir / "metrics.json")
        (run_dir / "answer.json").write_text(bundle.to_json(), encoding="utf-8")
    except Exception as exc:  # every stage failure is recorded, never propagated
        record.kg_calls = kg.total if kg else 0
        record.status = "failed"
        record.failed_stage = stage
        record.error = f"{type(exc).__name__}: {exc}"
        record.finished_at = runtime.clock.now().isoformat(timespec="seconds")
        record.save()
        tracer.event("failed", stage=stage, error=record.error, traceback=traceback.format_exc())
        logger.warning("run %s failed at %s: %s", record.run_id, stage, record.error)
        return record
    record.finished_at = runtime.clock.now().isoformat(timespec="seconds")
    advance("done")
    return record


def execute_pipeline(question: ResearchQuestion | str, config: EngineConfig, runtime: Runtime | None = None) -> RunRecord:
    """Plan, retrieve, appraise, interpret, constrain and synthesize one question."""
    if isinstance(question, str):
        question = ResearchQuestion(question)
    runtime = runtime or build_runtime(config)
    record = start_run(question, config, runtime.clock)
    return execute_run(record, config, runtime)


def plan_only(question: ResearchQuestion, config: EngineConfig, runtime: Runtime) -> ResearchPlan:
    return build_plan(question, runtime.provider("planning"), config.k_max, Toggles(config.decompose, config.use_kg))


def load_answer(record: RunRecord) -> AnswerBundle:
    return AnswerBundle.from_dict(json.loads((record.run_dir / "answer.json").read_text(encoding="utf-8")))
