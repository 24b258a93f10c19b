"""Agentic collaboration: routing, query expansion, retrieval, appraisal and LLM fallback."""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Literal

from . import prompts
from .kgstore import GraphPath, KGEntity, KnowledgeGraph
from .litclients import (
    DisambiguationError,
    EvidenceItem,
    LitClientError,
    LiteratureClients,
    NotFoundError,
    RateLimitedError,
    TransportError,
)
from .llm import ChatProvider, ProviderError, StructuredOutputError, complete_json, text_digest
from .planner import AgentAssignment, ResearchPlan, SubQuestion

logger = logging.getLogger(__name__)

Strategy = Literal["relational", "direct"]
Level = Literal["high", "moderate", "low"]
LEVELS = ("high", "moderate", "low")
SOURCES = ("pubmed", "trials", "wikipedia")
HEURISTIC_PREFIX = "heuristic:"
ROUTER_UNAVAILABLE = "router-unavailable"

# retrieval failures that are recorded per source instead of aborting the set
SOURCE_FAILURES = (LitClientError, TransportError, RateLimitedError)

STOPWORDS = frozenset(
    """a an and are as at be been by can could did do does for from has have how in into is it its
    of on or that the their there these this those to was were what when where which who whom why
    will with would versus vs between among about any other than affect affects effect effects role
    mechanism mechanisms associated association relationship""".split()
)


class CollabError(Exception):
    pass


class RetrievalError(CollabError):
    """Every source failed for every query of a bundle."""

    def __init__(self, failures: list[SourceFailure]):
        self.failures = failures
        named = ", ".join(f"{f.source}[{f.query}]: {f.error}" for f in failures)
        super().__init__(f"all evidence sources failed: {named}")


class AppraisalError(CollabError):
    pass


class FallbackPreconditionError(CollabError):
    pass


# -- domain types ------------------------------------------------------------


@dataclass(frozen=True)
class RoutingDecision:
    i: int
    strategy: Strategy
    reason: str

    def __post_init__(self) -> None:
        if self.strategy not in ("relational", "direct"):
            raise ValueError(f"unknown strategy {self.strategy!r}")

    def to_dict(self) -> dict[str, Any]:
        return {"i": self.i, "strategy": self.strategy, "reason": self.reason}


@dataclass(frozen=True)
class TraceStep:
    head: str
    relation: str
    tail: str

    def to_list(self) -> list[str]:
        return [self.head, self.relation, self.tail]


@dataclass(frozen=True)
class Query:
    text: str
    sources: tuple[str, ...] = ("pubmed",)
    trace: tuple[TraceStep, ...] = ()

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("query text must be non-empty")
        bad = [s for s in self.sources if s not in SOURCES]
        if bad or not self.sources:
            raise ValueError(f"query sources must be a non-empty subset of {SOURCES}")

    def to_dict(self) -> dict[str, Any]:
        return {"text": self.text, "sources": list(self.sources), "trace": [s.to_list() for s in self.trace]}


@dataclass(frozen=True)
class QueryBundle:
    i: int
    queries: tuple[Query, ...]
    strategy: Strategy = "direct"
    degraded: bool = False
    note: str = ""

    def __post_init__(self) -> None:
        if not self.queries:
            raise ValueError("a query bundle needs at least one query")
        if self.strategy == "relational" and not all(q.trace for q in self.queries):
            raise ValueError("relational queries must carry an expansion trace")

    @property
    def texts(self) -> list[str]:
        return [q.text for q in self.queries]

    def to_dict(self) -> dict[str, Any]:
        return {
            "i": self.i,
            "strategy": self.strategy,
            "degraded": self.degraded,
            "note": self.note,
            "queries": [q.to_dict() for q in self.queries],
        }


@dataclass(frozen=True)
class AppraisalLabel:
    relevance: Level
    strength: Level
    quality: Level
    decision: Literal["include", "exclude"]
    reason: str = ""

    def __post_init__(self) -> None:
        for name in ("relevance", "strength", "quality"):
            if getattr(self, name) not in LEVELS:
                raise ValueError(f"{name} must be one of {LEVELS}")
        if self.decision not in ("include", "exclude"):
            raise ValueError("decision must be include or exclude")
        if self.decision == "include" and self.relevance == "low":
            raise ValueError("an included item cannot have low relevance")

    @property
    def included(self) -> bool:
        return self.decision == "include"

    @property
    def heuristic(self) -> bool:
        return self.reason.startswith(HEURISTIC_PREFIX)

    def to_dict(self) -> dict[str, Any]:
        return {k: getattr(self, k) for k in ("relevance", "strength", "quality", "decision", "reason")}


@dataclass(frozen=True)
class AppraisedItem:
    item: EvidenceItem
    label: AppraisalLabel

    def to_dict(self) -> dict[str, Any]:
        return {"item": self.item.to_dict(), "label": self.label.to_dict()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> AppraisedItem:
        return cls(EvidenceItem.from_dict(data["item"]), AppraisalLabel(**data["label"]))


@dataclass(frozen=True)
class SourceFailure:
    query: str
    source: str
    error: str

    def to_dict(self) -> dict[str, str]:
        return {"query": self.query, "source": self.source, "error": self.error}


@dataclass(frozen=True)
class EvidenceSet:
    """E_i: the appraised evidence for one sub-question."""

    i: int
    items: tuple[AppraisedItem, ...] = ()
    fallback_used: bool = False
    verification_queries: tuple[str, ...] = ()
    notes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        # included first, each group in retrieval order
        ordered = tuple(sorted(self.items, key=lambda a: not a.label.included))
        object.__setattr__(self, "items", ordered)
        keys = [a.item.key for a in ordered]
        if len(keys) != len(set(keys)):
            raise ValueError("evidence set contains duplicate items")
        generated = [a for a in ordered if not a.item.from_database]
        if generated:
            if not self.fallback_used:
                raise ValueError("a generated item requires fallback_used")
            if not any(a.label.included and a.item.from_database and a.item.query in self.verification_queries for a in ordered):
                raise ValueError("a generated item is retained only with included supporting evidence")

    @property
    def included(self) -> list[AppraisedItem]:
        return [a for a in self.items if a.label.included]

    def to_dict(self) -> dict[str, Any]:
        return {
            "i": self.i,
            "fallback_used": self.fallback_used,
            "verification_queries": list(self.verification_queries),
            "notes": list(self.notes),
            "items": [a.to_dict() for a in self.items],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> EvidenceSet:
        return cls(
            i=data["i"],
            items=tuple(AppraisedItem.from_dict(a) for a in data["items"]),
            fallback_used=data.get("fallback_used", False),
            verification_queries=tuple(data.get("verification_queries", ())),
            notes=tuple(data.get("notes", ())),
        )


@dataclass(frozen=True)
class RetrievalLimits:
    pubmed: int = 20
    trials: int = 10
    wikipedia: int = 1

    def __post_init__(self) -> None:
        if min(self.pubmed, self.trials, self.wikipedia) < 0:
            raise ValueError("retrieval caps must be non-negative")


@dataclass
class RetrievalResult:
    items: list[EvidenceItem]
    failures: list[SourceFailure] = field(default_factory=list)


# -- text helpers ------------------------------------------------------------

_WORD = re.compile(r"[A-Za-z0-9][A-Za-z0-9\-]*")


def content_terms(text: str) -> list[str]:
    """Lower-cased non-stopword tokens, first occurrence order."""
    out: dict[str, None] = {}
    for tok in _WORD.findall(text):
        low = tok.lower()
        if len(low) >= 3 and low not in STOPWORDS:
            out.setdefault(low, None)
    return list(out)


def heuristic_concepts(text: str) -> list[str]:
    """Quoted phrases and capitalized terms; all content terms when neither is present."""
    found: dict[str, None] = {}
    for m in re.finditer(r"[\"“]([^\"”]+)[\"”]", text):
        found.setdefault(m.group(1).strip(), None)
    # runs of capitalized words; the sentence-initial word only counts if it is not a stopword
    run: list[str] = []
    sentence_start = True
    for m in re.finditer(r"[^\W_][\w\-]*|[.?!]", text):
        tok = m.group(0)
        capital = tok[0].isupper() and not (sentence_start and tok.lower() in STOPWORDS)
        if capital:
            run.append(tok)
        elif run:
            found.setdefault(" ".join(run), None)
            run = []
        sentence_start = tok in ".?!"
    if run:
        found.setdefault(" ".join(run), None)
    return list(found) or content_terms(text)


def _definitional_subject(text: str) -> str | None:
    m = re.match(r"\s*(?:what\s+(?:is|are)|define)\s+(?:an?\s+|the\s+)?(.+?)\s*\??\s*$", text, re.IGNORECASE)
    if not m:
        return None
    subject = m.group(1).strip()
    return subject[:1].upper() + subject[1:] if subject else None


# -- routing -----------------------------------------------------------------


def _parse_route(obj: Any) -> tuple[str, str]:
    strategy = obj["strategy"]
    if strategy not in ("relational", "direct"):
        raise StructuredOutputError(f"strategy must be relational or direct, got {strategy!r}")
    return strategy, str(obj.get("reason", "")).strip()


def route_subquestion(
    sub_question: SubQuestion,
    assignment: AgentAssignment,
    provider: ChatProvider | None,
    use_kg: bool = True,
) -> RoutingDecision:
    if assignment.i != sub_question.i:
        raise ValueError("assignment does not belong to this sub-question")
    if not use_kg:
        return RoutingDecision(sub_question.i, "direct", "knowledge graph disabled")
    if not assignment.uses_kg:
        return RoutingDecision(sub_question.i, "direct", "query-expansion community not assigned")
    if provider is None:
        return RoutingDecision(sub_question.i, "direct", ROUTER_UNAVAILABLE)
    req = prompts.render("route", "planning", sub_question=sub_question.text)
    try:
        strategy, reason = complete_json(req, provider, _parse_route)
    except (ProviderError, StructuredOutputError) as exc:
        logger.warning("router failed for sub-question %d: %s", sub_question.i, exc)
        return RoutingDecision(sub_question.i, "direct", ROUTER_UNAVAILABLE)
    return RoutingDecision(sub_question.i, strategy, reason or f"router chose {strategy}")


# -- query construction ------------------------------------------------------


def _parse_queries(obj: Any) -> list[Query]:
    raw = obj["queries"]
    if not isinstance(raw, list) or not raw:
        raise StructuredOutputError("queries must be a non-empty list")
    out = []
    for r in raw:
        sources = r.get("sources") or ["pubmed"]
        out.append(Query(str(r["text"]).strip(), tuple(dict.fromkeys(str(s) for s in sources))))
    return out


def heuristic_queries(text: str) -> list[Query]:
    terms = content_terms(text)
    queries = []
    if terms:
        queries.append(Query(" ".join(terms), ("pubmed", "trials")))
    subject = _definitional_subject(text)
    if subject:
        queries.append(Query(subject, ("wikipedia",)))
    if not queries:
        queries.append(Query(text.strip(), ("pubmed",)))
    return queries


def parse_direct(sub_question: SubQuestion, provider: ChatProvider | None) -> QueryBundle:
    """Parse a sub-question straight into search queries."""
    if provider is not None:
        req = prompts.render("queries", "planning", sub_question=sub_question.text)
        try:
            return QueryBundle(sub_question.i, tuple(complete_json(req, provider, _parse_queries)))
        except (ProviderError, StructuredOutputError) as exc:
            logger.warning("query parser failed for sub-question %d: %s", sub_question.i, exc)
    return QueryBundle(sub_question.i, tuple(heuristic_queries(sub_question.text)), degraded=True, note="heuristic query parsing")


def _parse_concepts(obj: Any) -> tuple[list[str], str | None, str | None]:
    concepts = obj["concepts"]
    if not isinstance(concepts, list):
        raise StructuredOutputError("concepts must be a list")
    clean = [str(c).strip() for c in concepts if str(c).strip()]
    target = obj.get("target_type") or None
    via = obj.get("via_type") or None
    return clean, (str(target) if target else None), (str(via) if via else None)


def extract_concepts(sub_question: SubQuestion, provider: ChatProvider | None) -> tuple[list[str], str | None, str | None, bool]:
    """(concepts, target_type, via_type, degraded)."""
    if provider is not None:
        req = prompts.render("concepts", "planning", sub_question=sub_question.text)
        try:
            concepts, target, via = complete_json(req, provider, _parse_concepts)
            return concepts, target, via, False
        except (ProviderError, StructuredOutputError) as exc:
            logger.warning("concept extraction failed for sub-question %d: %s", sub_question.i, exc)
    return heuristic_concepts(sub_question.text), None, None, True


def _trial_shaped(nodes: Iterable[KGEntity]) -> bool:
    return any(n.entity_type in ("drug", "disease") for n in nodes)


def path_query(path: GraphPath) -> Query:
    """AND-join the node names of a path; relations live in the trace only."""
    names = list(dict.fromkeys(n.name for n in path.nodes))
    steps = tuple(TraceStep(h.name, r, t.name) for h, r, t in path.steps())
    sources = ("pubmed", "trials") if _trial_shaped(path.nodes) else ("pubmed",)
    return Query(" AND ".join(names), sources, steps)


MAX_EXPANSIONS = 3


def expand_queries(
    sub_question: SubQuestion,
    kg: KnowledgeGraph,
    provider: ChatProvider | None,
    threshold: float = 0.5,
) -> QueryBundle:
    """Relational strategy: normalize concepts on the graph and render expansion paths as queries."""
    if not sub_question.text.strip():
        raise ValueError("sub-question text must be non-empty")
    concepts, target_type, via_type, heuristic = extract_concepts(sub_question, provider)

    entities: dict[int, KGEntity] = {}
    for c in concepts:
        if not c.strip():
            continue
        matches = kg.get_normalized_entity(c, threshold=threshold)
        if matches:
            entities.setdefault(matches[0].entity.index, matches[0].entity)
    ents = list(entities.values())

    queries: dict[str, Query] = {}

    def add(q: Query) -> None:
        queries.setdefault(q.text, q)

    for a_pos, a in enumerate(ents):
        for b in ents[a_pos + 1 :]:
            paths = []
            for h, t in ((a, b), (b, a)):
                if via_type:
                    paths = kg.get_shortest_path_by_entity_type(h, t, via_type, max_paths=MAX_EXPANSIONS)
                if not paths:
                    paths = kg.get_shortest_paths(h, t, max_paths=MAX_EXPANSIONS)
                if paths:
                    break
            for p in paths:
                add(path_query(p))

    for e in ents:
        if target_type:
            for tail in kg.get_tail_entity_by_type(e, target_type)[:MAX_EXPANSIONS]:
                rel = kg.get_relation_type(e, tail)[0]
                add(Query(f"{e.name} AND {tail.name}", ("pubmed",) if not _trial_shaped((e, tail)) else ("pubmed", "trials"), (TraceStep(e.name, rel, tail.name),)))

    if not queries:
        # single concept without a target type: follow its most common relations
        for e in ents:
            rels = sorted({edge.relation for edge in kg.out_edges(e.index)}, key=lambda r: (-kg.relation_frequency[r], r))
            for rel in rels:
                for tail in kg.get_tail_entity_by_relation(e, rel):
                    if len(queries) >= MAX_EXPANSIONS:
                        break
                    add(Query(f"{e.name} AND {tail.name}", ("pubmed", "trials") if _trial_shaped((e, tail)) else ("pubmed",), (TraceStep(e.name, rel, tail.name),)))

    if not queries:
        reason = "no concept matched the knowledge graph" if not ents else "matched concepts have no expansion in the graph"
        direct = parse_direct(sub_question, provider)
        return QueryBundle(sub_question.i, direct.queries, "direct", True, reason)
    note = "heuristic concept extraction" if heuristic else ""
    return QueryBundle(sub_question.i, tuple(queries.values()), "relational", heuristic, note)


# -- retrieval ---------------------------------------------------------------


def dedupe_items(items: Iterable[EvidenceItem]) -> list[EvidenceItem]:
    """One item per (kind, source_id), keeping the richest copy at the first position seen."""
    best: dict[tuple[str, str], EvidenceItem] = {}
    for item in items:
        cur = best.get(item.key)
        if cur is None or item.richness() > cur.richness():
            best[item.key] = item
    return list(best.values())


def retrieve_evidence(
    bundle: QueryBundle,
    clients: LiteratureClients,
    limits: RetrievalLimits = RetrievalLimits(),
    max_workers: int = 4,
) -> RetrievalResult:
    tasks: list[tuple[str, str]] = []
    for q in bundle.queries:
        for src in q.sources:
            cap = getattr(limits, src)
            if cap > 0:
                tasks.append((q.text, src))

    def run(task: tuple[str, str]) -> list[EvidenceItem] | SourceFailure:
        query, src = task
        try:
            if src == "pubmed":
                return clients.get_pubmed_abstracts(query, max_results=limits.pubmed)
            if src == "trials":
                return clients.get_clinical_trials(query, max_results=limits.trials)
            return [clients.get_wikipedia_introduction(query)]
        except (NotFoundError, DisambiguationError):
            return []
        except SOURCE_FAILURES as exc:
            return SourceFailure(query, src, str(exc) or type(exc).__name__)

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        outcomes = list(pool.map(run, tasks))

    failures = [o for o in outcomes if isinstance(o, SourceFailure)]
    if tasks and len(failures) == len(tasks):
        raise RetrievalError(failures)
    found = dedupe_items(item for o in outcomes if not isinstance(o, SourceFailure) for item in o)

    def enrich(item: EvidenceItem) -> EvidenceItem | SourceFailure:
        try:
            return clients.enrich(item)
        except SOURCE_FAILURES as exc:
            return SourceFailure(item.query, "icite", f"{item.source_id}: {exc}")

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        enriched = list(pool.map(enrich, found))
    items = []
    for orig, out in zip(found, enriched):
        if isinstance(out, SourceFailure):
            failures.append(out)
            items.append(orig)
        else:
            items.append(out)
    return RetrievalResult(items, failures)


# -- appraisal ---------------------------------------------------------------


APPRAISAL_BATCH = 8
BODY_PREVIEW = 1200


def item_ref(item: EvidenceItem, duplicate_ids: set[str]) -> str:
    return f"{item.kind}:{item.source_id}" if item.source_id in duplicate_ids else item.source_id


def render_items(items: list[EvidenceItem], refs: list[str]) -> str:
    blocks = []
    for ref, it in zip(refs, items):
        meta = ", ".join(
            x for x in (it.kind, f"year {it.year}" if it.year else "", f"{it.citation_count} citations" if it.citation_count is not None else "") if x
        )
        body = it.body if len(it.body) <= BODY_PREVIEW else it.body[:BODY_PREVIEW] + " ..."
        blocks.append(f"[{ref}] ({meta}) {it.title}\n{body}")
    return "\n\n".join(blocks)


def _parse_labels(obj: Any, refs: list[str]) -> list[dict[str, Any]]:
    raw = obj["labels"]
    if not isinstance(raw, list):
        raise StructuredOutputError("labels must be a list")
    by_ref: dict[str, dict[str, Any]] = {}
    for r in raw:
        ref = str(r["source_id"])
        if ref not in refs:
            raise StructuredOutputError(f"label for unknown item {ref!r}")
        if ref in by_ref:
            raise StructuredOutputError(f"item {ref!r} labeled twice")
        for name in ("relevance", "strength", "quality"):
            if r.get(name) not in LEVELS:
                raise StructuredOutputError(f"{ref}: {name} must be one of {LEVELS}")
        if r.get("decision") not in ("include", "exclude"):
            raise StructuredOutputError(f"{ref}: decision must be include or exclude")
        by_ref[ref] = r
    missing = [ref for ref in refs if ref not in by_ref]
    if missing:
        raise StructuredOutputError(f"no label for {missing}")
    return [by_ref[ref] for ref in refs]


def heuristic_label(sub_question: str, item: EvidenceItem, current_year: int) -> AppraisalLabel:
    overlap = len(set(content_terms(sub_question)) & set(content_terms(item.text)))
    cited = item.citation_count is not None and item.citation_count >= 5
    recent = item.year is not None and item.year >= current_year - 5
    include = (cited or recent) and overlap >= 2
    return AppraisalLabel(
        relevance="moderate" if overlap >= 2 else "low",
        strength="moderate" if cited else "low",
        quality="moderate" if recent else "low",
        decision="include" if include else "exclude",
        reason=f"{HEURISTIC_PREFIX} overlap={overlap}, citations={item.citation_count}, year={item.year}",
    )


def appraise_evidence(
    sub_question: SubQuestion,
    items: list[EvidenceItem],
    preference: str,
    provider: ChatProvider | None,
    current_year: int,
    batch_size: int = APPRAISAL_BATCH,
    rubric: str | None = None,
) -> list[AppraisedItem]:
    """Label every item; batches run sequentially in input order."""
    out: list[AppraisedItem] = []
    counts: dict[str, int] = {}
    for it in items:
        counts[it.source_id] = counts.get(it.source_id, 0) + 1
    dupes = {k for k, n in counts.items() if n > 1}
    for start in range(0, len(items), batch_size):
        batch = items[start : start + batch_size]
        refs = [item_ref(it, dupes) for it in batch]
        raw = None
        if provider is not None:
            req = prompts.render(
                "appraise",
                "interpretation",
                system=rubric,
                sub_question=sub_question.text,
                preference=preference.strip() or "none stated",
                items=render_items(batch, refs),
            )
            try:
                raw = complete_json(req, provider, lambda obj: _parse_labels(obj, refs))
            except (ProviderError, StructuredOutputError) as exc:
                logger.warning("appraisal fell back to heuristics for sub-question %d: %s", sub_question.i, exc)
        if raw is None:
            out.extend(AppraisedItem(it, heuristic_label(sub_question.text, it, current_year)) for it in batch)
            continue
        for it, r in zip(batch, raw):
            try:
                label = AppraisalLabel(r["relevance"], r["strength"], r["quality"], r["decision"], str(r.get("reason", "")))
            except ValueError as exc:
                raise AppraisalError(f"label for {it.source_id} violates the rubric: {exc}") from exc
            out.append(AppraisedItem(it, label))
    return out


# -- LLM fallback ------------------------------------------------------------


@dataclass(frozen=True)
class FallbackOutcome:
    evidence: EvidenceSet
    generated: EvidenceItem | None
    retained: bool
    note: str


def _parse_fallback(obj: Any) -> tuple[str, list[str], list[str]]:
    answer = str(obj["answer"]).strip()
    if not answer:
        raise StructuredOutputError("fallback answer is empty")
    claims = [str(c).strip() for c in obj.get("claims", []) if str(c).strip()]
    queries = [str(q).strip() for q in obj.get("queries", []) if str(q).strip()]
    return answer, claims, queries


def llm_fallback(
    sub_question: SubQuestion,
    provider: ChatProvider | None,
    clients: LiteratureClients,
    appraiser: ChatProvider | None,
    preference: str,
    current_year: int,
    existing: Iterable[AppraisedItem] = (),
    limits: RetrievalLimits = RetrievalLimits(),
    max_workers: int = 4,
    rubric: str | None = None,
) -> FallbackOutcome:
    """Generate a provisional answer and keep it only if retrieval corroborates it."""
    if any(a.label.included for a in existing):
        raise FallbackPreconditionError("fallback runs only when no item was included")
    i = sub_question.i
    if provider is None:
        return FallbackOutcome(EvidenceSet(i, notes=("fallback provider not configured",)), None, False, "no provider")
    req = prompts.render("fallback", "fallback", sub_question=sub_question.text)
    try:
        answer, claims, queries = complete_json(req, provider, _parse_fallback)
    except (ProviderError, StructuredOutputError) as exc:
        note = f"fallback provider failed: {exc}"
        return FallbackOutcome(EvidenceSet(i, notes=(note,)), None, False, note)

    body = answer if not claims else answer + "\n" + "\n".join(f"- {c}" for c in claims)
    generated = EvidenceItem(
        kind="llm-generated",
        source_id="llm:" + text_digest(body)[:16],
        title=f"Provisional model answer to: {sub_question.text}"[:300],
        body=body,
        query=sub_question.text,
        retrieved_at=clients.gateway.clock.now().isoformat(timespec="seconds"),
    )
    texts = list(dict.fromkeys(queries or content_queries(claims) or [" ".join(content_terms(answer)[:6])]))
    texts = [t for t in texts if t.strip()]
    verification = tuple(texts)
    discarded = EvidenceSet(i, fallback_used=True, verification_queries=verification, notes=("generated answer discarded: no supporting evidence",))
    if not texts:
        return FallbackOutcome(discarded, generated, False, "no verification query")
    bundle = QueryBundle(i, tuple(Query(t, ("pubmed",)) for t in texts), note="fallback verification")
    try:
        found = retrieve_evidence(bundle, clients, limits, max_workers)
    except RetrievalError as exc:
        return FallbackOutcome(discarded, generated, False, str(exc))
    if not found.items:
        return FallbackOutcome(discarded, generated, False, "verification retrieval empty")
    appraised = appraise_evidence(sub_question, found.items, preference, appraiser, current_year, rubric=rubric)
    support = [a for a in appraised if a.label.included]
    if not support:
        return FallbackOutcome(discarded, generated, False, "verification evidence excluded on appraisal")
    gen_label = AppraisalLabel(
        "moderate", "low", "low", "include",
        f"provisional model answer corroborated by {', '.join(a.item.source_id for a in support)}",
    )
    kept = EvidenceSet(
        i,
        (AppraisedItem(generated, gen_label), *appraised),
        fallback_used=True,
        verification_queries=verification,
        notes=("generated answer retained with supporting evidence",),
    )
    return FallbackOutcome(kept, generated, True, "retained")


def content_queries(claims: list[str]) -> list[str]:
    return [" ".join(content_terms(c)[:6]) for c in claims if content_terms(c)]


# -- per-sub-question driver -------------------------------------------------


@dataclass
class CollabContext:
    clients: LiteratureClients
    kg: KnowledgeGraph | None = None
    router: ChatProvider | None = None
    appraiser: ChatProvider | None = None
    fallback: ChatProvider | None = None
    use_kg: bool = True
    preference: str = ""
    limits: RetrievalLimits = field(default_factory=RetrievalLimits)
    current_year: int = 2025
    parallelism: int = 4
    kg_threshold: float = 0.5
    rubric: str | None = None  # replaces the shipped appraisal system prompt


@dataclass
class SubQuestionOutcome:
    routing: RoutingDecision
    bundle: QueryBundle | None
    evidence: EvidenceSet
    failures: list[SourceFailure] = field(default_factory=list)
    fallback: FallbackOutcome | None = None

    def artifact(self) -> dict[str, Any]:
        data = self.evidence.to_dict()
        data["routing"] = self.routing.to_dict()
        data["bundle"] = self.bundle.to_dict() if self.bundle else None
        data["failures"] = [f.to_dict() for f in self.failures]
        return data


def process_subquestion(sub_question: SubQuestion, assignment: AgentAssignment, ctx: CollabContext) -> SubQuestionOutcome:
    use_kg = ctx.use_kg and ctx.kg is not None
    routing = route_subquestion(sub_question, assignment, ctx.router, use_kg)
    retrieves = "evidence-retrieval" in assignment.communities or assignment.uses_kg
    bundle = None
    failures: list[SourceFailure] = []
    appraised: list[AppraisedItem] = []
    notes: list[str] = []
    if retrieves:
        if routing.strategy == "relational":
            assert ctx.kg is not None
            bundle = expand_queries(sub_question, ctx.kg, ctx.router, ctx.kg_threshold)
        else:
            bundle = parse_direct(sub_question, ctx.router)
        if bundle.degraded and bundle.note:
            notes.append(bundle.note)
        try:
            result = retrieve_evidence(bundle, ctx.clients, ctx.limits, ctx.parallelism)
            failures = result.failures
            appraised = appraise_evidence(sub_question, result.items, ctx.preference, ctx.appraiser, ctx.current_year, rubric=ctx.rubric)
        except RetrievalError as exc:
            failures = exc.failures
            notes.append("all evidence sources failed")
    evidence = EvidenceSet(sub_question.i, tuple(appraised), notes=tuple(notes))
    fallback = None
    if not evidence.included:
        fallback = llm_fallback(
            sub_question, ctx.fallback, ctx.clients, ctx.appraiser, ctx.preference, ctx.current_year,
            appraised, ctx.limits, ctx.parallelism, ctx.rubric,
        )
        fb = fallback.evidence
        # the excluded first-round items stay visible unless the fallback produced its own set
        merged = dedupe_appraised([*fb.items, *appraised]) if fallback.retained else appraised
        evidence = EvidenceSet(
            sub_question.i,
            tuple(merged),
            fallback_used=fb.fallback_used,
            verification_queries=fb.verification_queries,
            notes=(*notes, *fb.notes),
        )
    return SubQuestionOutcome(routing, bundle, evidence, failures, fallback)


def dedupe_appraised(items: Iterable[AppraisedItem]) -> list[AppraisedItem]:
    seen: dict[tuple[str, str], AppraisedItem] = {}
    for a in items:
        seen.setdefault(a.item.key, a)
    return list(seen.values())


def run_collaboration(plan: ResearchPlan, ctx: CollabContext) -> list[SubQuestionOutcome]:
    """Fan out over sub-questions; results come back in index order."""
    with ThreadPoolExecutor(max_workers=max(1, ctx.parallelism)) as pool:
        futures = [pool.submit(process_subquestion, sq, plan.assignment(sq.i), ctx) for sq in plan.sub_questions]
        return [f.result() for f in futures]


def write_collab_artifacts(outcomes: list[SubQuestionOutcome], run_dir: str | Path, dump: Callable[[Any], str] | None = None) -> None:
    dump = dump or (lambda d: json.dumps(d, indent=2, sort_keys=True, ensure_ascii=False) + "\n")
    root = Path(run_dir)
    (root / "evidence").mkdir(parents=True, exist_ok=True)
    (root / "routing.json").write_text(dump([o.routing.to_dict() for o in outcomes]), encoding="utf-8")
    for o in outcomes:
        (root / "evidence" / f"sq-{o.routing.i}.json").write_text(dump(o.artifact()), encoding="utf-8")
