"""Research planning: decompose a question and assign agent communities."""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from typing import Any

from . import prompts
from .llm import ChatProvider, StructuredOutputError, complete_json

CATEGORIES = ("basic", "clinical", "translational", "uncategorized")
COMMUNITIES = ("query-expansion", "evidence-retrieval", "llm-response")
DEFAULT_K_MAX = 6

KG_WORKERS = (
    "get_normalized_entity",
    "get_tail_entity_by_relation",
    "get_tail_entity_by_type",
    "get_relation_type",
    "get_shortest_paths",
    "get_shortest_path_by_entity_type",
)
RETRIEVAL_WORKERS = (
    "get_pubmed_abstracts",
    "get_pubmed_full_text",
    "get_article_citation_details",
    "get_pubmed_citation_style",
    "get_wikipedia_introduction",
    "get_clinical_trials",
)
LLM_WORKERS = ("gemini_response",)
WORKER_COMMUNITY = {
    **{w: "query-expansion" for w in KG_WORKERS},
    **{w: "evidence-retrieval" for w in RETRIEVAL_WORKERS},
    **{w: "llm-response" for w in LLM_WORKERS},
}
WORKERS = tuple(WORKER_COMMUNITY)


class PlanningError(Exception):
    pass


class UnknownWorkerError(PlanningError, ValueError):
    def __init__(self, names: list[str]):
        self.names = names
        super().__init__(f"unknown worker(s): {', '.join(names)}")


@dataclass(frozen=True)
class Constraints:
    objectives: str = ""
    preference: str = ""

    @property
    def empty(self) -> bool:
        return not (self.objectives.strip() or self.preference.strip())


@dataclass(frozen=True)
class ResearchQuestion:
    text: str
    id: str = ""
    background: str = ""
    constraints: Constraints = field(default_factory=Constraints)
    category: str = "uncategorized"

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("question text must be non-empty")
        if self.category not in CATEGORIES:
            raise ValueError(f"category must be one of {CATEGORIES}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ResearchQuestion:
        if not isinstance(data, dict) or not isinstance(data.get("text"), str):
            raise ValueError("question must be an object with a string 'text'")
        cons = data.get("constraints") or {}
        return cls(
            text=data["text"],
            id=str(data.get("id", "")),
            background=data.get("background", "") or "",
            constraints=Constraints(cons.get("objectives", "") or "", cons.get("preference", "") or ""),
            category=data.get("category", "uncategorized") or "uncategorized",
        )


@dataclass(frozen=True)
class SubQuestion:
    i: int
    text: str
    rank: int = 1
    rationale: str = ""

    def __post_init__(self) -> None:
        if self.i < 1 or self.rank < 1:
            raise ValueError("index and rank must be >= 1")
        if not self.text.strip():
            raise ValueError("sub-question text must be non-empty")


@dataclass(frozen=True)
class AgentAssignment:
    i: int
    communities: tuple[str, ...]
    workers: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.communities:
            raise ValueError(f"sub-question {self.i} has no community")
        bad = [c for c in self.communities if c not in COMMUNITIES]
        if bad:
            raise ValueError(f"unknown communities {bad}")
        unknown = [w for w in self.workers if w not in WORKER_COMMUNITY]
        if unknown:
            raise UnknownWorkerError(unknown)

    @property
    def uses_kg(self) -> bool:
        return "query-expansion" in self.communities


@dataclass(frozen=True)
class Toggles:
    decompose: bool = True
    use_kg: bool = True


@dataclass(frozen=True)
class ResearchPlan:
    question: ResearchQuestion
    sub_questions: tuple[SubQuestion, ...]
    assignments: tuple[AgentAssignment, ...]
    toggles: Toggles = field(default_factory=Toggles)

    def __post_init__(self) -> None:
        if [s.i for s in self.sub_questions] != list(range(1, len(self.sub_questions) + 1)):
            raise ValueError("sub-question indices must be 1..k")
        if [a.i for a in self.assignments] != [s.i for s in self.sub_questions]:
            raise ValueError("need exactly one assignment per sub-question")
        ranks = [s.rank for s in self.sub_questions]
        if ranks != sorted(ranks):
            raise ValueError("complexity ranks must be non-decreasing")
        if not self.toggles.decompose and (
            len(self.sub_questions) != 1 or self.sub_questions[0].text != self.question.text
        ):
            raise ValueError("without decomposition the plan is the original question alone")

    def assignment(self, i: int) -> AgentAssignment:
        return self.assignments[i - 1]

    def to_dict(self) -> dict[str, Any]:
        return {
            "question": self.question.to_dict(),
            "toggles": asdict(self.toggles),
            "sub_questions": [asdict(s) for s in self.sub_questions],
            "assignments": [{"i": a.i, "communities": list(a.communities), "workers": list(a.workers)} for a in self.assignments],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ResearchPlan:
        return cls(
            question=ResearchQuestion.from_dict(data["question"]),
            sub_questions=tuple(SubQuestion(**s) for s in data["sub_questions"]),
            assignments=tuple(
                AgentAssignment(a["i"], tuple(a["communities"]), tuple(a.get("workers", ()))) for a in data["assignments"]
            ),
            toggles=Toggles(**data.get("toggles", {})),
        )


def _parse_sub_questions(obj: Any, k_max: int) -> list[SubQuestion]:
    raw = obj["sub_questions"]
    if not isinstance(raw, list) or not raw:
        raise StructuredOutputError("sub_questions must be a non-empty list")
    if len(raw) > k_max:
        raise StructuredOutputError(f"{len(raw)} sub-questions exceed the limit of {k_max}")
    items = [SubQuestion(int(r["i"]), str(r["text"]), int(r.get("rank", 1)), str(r.get("rationale", ""))) for r in raw]
    indices = sorted(s.i for s in items)
    if indices != list(range(1, len(items) + 1)):
        raise StructuredOutputError(f"sub-question indices {indices} are not contiguous from 1")
    items.sort(key=lambda s: s.i)
    # ordering is a presentation contract: re-sort stably by rank, never reject
    items.sort(key=lambda s: s.rank)
    return [SubQuestion(n, s.text, s.rank, s.rationale) for n, s in enumerate(items, start=1)]


def decompose_question(
    question: ResearchQuestion,
    provider: ChatProvider | None,
    k_max: int = DEFAULT_K_MAX,
    decompose: bool = True,
) -> list[SubQuestion]:
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if not decompose:
        return [SubQuestion(1, question.text, 1, "decomposition disabled")]
    if provider is None:
        raise ValueError("a planning provider is required when decomposition is on")
    req = prompts.render(
        "decompose",
        "planning",
        question=question.text,
        background=question.background or "none",
        objectives=question.constraints.objectives or "none",
        k_max=k_max,
    )
    try:
        return complete_json(req, provider, lambda obj: _parse_sub_questions(obj, k_max))
    except StructuredOutputError as exc:
        raise PlanningError(f"decomposition failed: {exc}") from exc


def _render_sub_questions(subs: list[SubQuestion]) -> str:
    return "\n".join(f"{s.i}. {s.text}" for s in subs)


def _parse_assignments(obj: Any, subs: list[SubQuestion]) -> list[AgentAssignment]:
    raw = obj["assignments"]
    if not isinstance(raw, list):
        raise StructuredOutputError("assignments must be a list")
    by_i: dict[int, dict[str, Any]] = {}
    for r in raw:
        by_i[int(r["i"])] = r
    missing = [s.i for s in subs if s.i not in by_i]
    if missing:
        raise StructuredOutputError(f"no assignment for sub-questions {missing}")
    unknown = sorted({str(w) for r in by_i.values() for w in r.get("workers", []) if w not in WORKER_COMMUNITY})
    if unknown:
        raise UnknownWorkerError(unknown)
    out = []
    for s in subs:
        r = by_i[s.i]
        communities = [c for c in r.get("communities", []) if c in COMMUNITIES]
        bad = [c for c in r.get("communities", []) if c not in COMMUNITIES]
        if bad:
            raise StructuredOutputError(f"unknown communities {bad}")
        workers = [str(w) for w in r.get("workers", [])]
        for w in workers:
            if WORKER_COMMUNITY[w] not in communities:
                communities.append(WORKER_COMMUNITY[w])
        if not communities:
            raise StructuredOutputError(f"sub-question {s.i} has no community")
        out.append(AgentAssignment(s.i, tuple(dict.fromkeys(communities)), tuple(dict.fromkeys(workers))))
    return out


def _strip_kg(a: AgentAssignment) -> AgentAssignment:
    communities = tuple(c for c in a.communities if c != "query-expansion") or ("evidence-retrieval",)
    workers = tuple(w for w in a.workers if WORKER_COMMUNITY[w] != "query-expansion")
    return AgentAssignment(a.i, communities, workers)


def assign_agents(
    sub_questions: list[SubQuestion],
    provider: ChatProvider,
    capability_doc: str | None = None,
    use_kg: bool = True,
) -> list[AgentAssignment]:
    doc = capability_doc if capability_doc is not None else prompts.capability_document()
    missing = [w for w in WORKERS if not re.search(rf"\b{re.escape(w)}\b", doc)]
    if missing:
        raise PlanningError(f"capability document does not describe: {', '.join(missing)}")
    req = prompts.render("assign", "planning", capabilities=doc, sub_questions=_render_sub_questions(sub_questions))
    try:
        assignments = complete_json(req, provider, lambda obj: _parse_assignments(obj, sub_questions))
    except StructuredOutputError as exc:
        cause = exc.__cause__
        if isinstance(cause, UnknownWorkerError):
            raise UnknownWorkerError(cause.names) from exc
        raise PlanningError(f"agent assignment failed: {exc}") from exc
    if not use_kg:
        assignments = [_strip_kg(a) for a in assignments]
    return assignments


def build_plan(
    question: ResearchQuestion,
    provider: ChatProvider | None,
    k_max: int = DEFAULT_K_MAX,
    toggles: Toggles = Toggles(),
    capability_doc: str | None = None,
) -> ResearchPlan:
    subs = decompose_question(question, provider, k_max, toggles.decompose)
    if provider is None:
        raise ValueError("a planning provider is required for agent assignment")
    assignments = assign_agents(subs, provider, capability_doc, toggles.use_kg)
    return ResearchPlan(question, tuple(subs), tuple(assignments), toggles)
