"""Evidence synthesis: reinterpretation, constraint filtering and the cited answer bundle."""

from __future__ import annotations

import json
import logging
import re
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Iterable

import jsonschema

from . import prompts
from .collab import AppraisedItem, EvidenceSet, item_ref, render_items
from .litclients import EvidenceItem, LitClientError, LiteratureClients, TransportError, classify_reference
from .llm import ChatProvider, ProviderError, StructuredOutputError, complete_json
from .planner import CATEGORIES, ResearchQuestion

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1"
PMID_CITE = re.compile(r"\(PMID:\s*(\d+)\)")
NCT_CITE = re.compile(r"\((NCT\d{8})\)")
MAX_DROP_FRACTION = 0.3
DEFAULT_TOKEN_BUDGET = 24_000
CHARS_PER_TOKEN = 4
INSUFFICIENT_ANSWER = "The retrieved evidence is insufficient to answer this question."


class SynthesisError(Exception):
    pass


class InterpretationError(SynthesisError):
    pass


class ConstraintError(SynthesisError):
    pass


class CitationIntegrityError(SynthesisError):
    pass


class ParseError(ValueError):
    def __init__(self, message: str, start: int, end: int):
        self.start, self.end = start, end
        super().__init__(f"{message} (offsets {start}-{end})")


class BenchmarkSchemaError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class BenchmarkWarning(UserWarning):
    pass


def inline_citations(text: str) -> list[str]:
    """Cited ids in textual order, repeats kept."""
    found = [(m.start(), m.group(1)) for m in PMID_CITE.finditer(text)]
    found += [(m.start(), m.group(1)) for m in NCT_CITE.finditer(text)]
    return [cid for _, cid in sorted(found)]


def citable_id(item: EvidenceItem) -> str | None:
    if item.kind in ("pubmed-abstract", "pmc-fulltext", "clinical-trial"):
        return item.source_id
    return None


def cite_marker(source_id: str) -> str:
    return f"({source_id})" if source_id.startswith("NCT") else f"(PMID: {source_id})"


# -- interpretation ----------------------------------------------------------


@dataclass(frozen=True)
class InterpretedItem:
    appraised: AppraisedItem
    note: str = ""

    @property
    def item(self) -> EvidenceItem:
        return self.appraised.item

    def to_dict(self) -> dict[str, Any]:
        return {**self.appraised.to_dict(), "note": self.note}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> InterpretedItem:
        return cls(AppraisedItem.from_dict(data), data.get("note", ""))


@dataclass(frozen=True)
class InterpretedEvidence:
    i: int
    sub_question: str
    items: tuple[InterpretedItem, ...]
    flagged: bool = False
    note: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "i": self.i,
            "sub_question": self.sub_question,
            "flagged": self.flagged,
            "note": self.note,
            "items": [it.to_dict() for it in self.items],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> InterpretedEvidence:
        return cls(data["i"], data["sub_question"], tuple(InterpretedItem.from_dict(d) for d in data["items"]),
                   data.get("flagged", False), data.get("note", ""))


def _refs(items: list[EvidenceItem]) -> list[str]:
    counts: dict[str, int] = {}
    for it in items:
        counts[it.source_id] = counts.get(it.source_id, 0) + 1
    dupes = {k for k, n in counts.items() if n > 1}
    return [item_ref(it, dupes) for it in items]


def _parse_selection(obj: Any, refs: list[str]) -> list[tuple[str, str]]:
    raw = obj["items"]
    if not isinstance(raw, list):
        raise StructuredOutputError("items must be a list")
    out: dict[str, str] = {}
    for r in raw:
        ref = str(r["source_id"])
        if ref not in refs:
            raise StructuredOutputError(f"{ref!r} is not in the evidence set")
        out.setdefault(ref, str(r.get("note", "")).strip())
    return list(out.items())


def interpret_evidence(sub_question: str, evidence: EvidenceSet, provider: ChatProvider | None) -> InterpretedEvidence:
    """Keep the included items that best support the sub-question, most supportive first."""
    pool = evidence.included
    if not pool:
        return InterpretedEvidence(evidence.i, sub_question, ())
    identity = tuple(InterpretedItem(a) for a in pool)
    if provider is None:
        return InterpretedEvidence(evidence.i, sub_question, identity, True, "interpretation provider not configured")
    items = [a.item for a in pool]
    refs = _refs(items)
    req = prompts.render("interpret", "interpretation", sub_question=sub_question, items=render_items(items, refs))
    try:
        chosen = complete_json(req, provider, lambda obj: _parse_selection(obj, refs))
    except ProviderError as exc:
        logger.warning("interpretation unavailable for sub-question %d: %s", evidence.i, exc)
        return InterpretedEvidence(evidence.i, sub_question, identity, True, f"identity refinement: {exc}")
    except StructuredOutputError as exc:
        raise InterpretationError(f"sub-question {evidence.i}: {exc}") from exc
    by_ref = dict(zip(refs, pool))
    return InterpretedEvidence(evidence.i, sub_question, tuple(InterpretedItem(by_ref[r], note) for r, note in chosen))


# -- constraints -------------------------------------------------------------


@dataclass(frozen=True)
class DroppedItem:
    i: int
    source_id: str
    reason: str

    def to_dict(self) -> dict[str, Any]:
        return {"i": self.i, "source_id": self.source_id, "reason": self.reason}


@dataclass(frozen=True)
class ConstrainedEvidence:
    sets: tuple[InterpretedEvidence, ...]
    dropped: tuple[DroppedItem, ...] = ()
    flagged: bool = False
    note: str = ""

    @property
    def empty(self) -> bool:
        return not any(s.items for s in self.sets)

    def to_dict(self) -> dict[str, Any]:
        return {"dropped": [d.to_dict() for d in self.dropped], "flagged": self.flagged, "note": self.note}


def _parse_drops(obj: Any, refs: set[str]) -> list[tuple[str, str]]:
    raw = obj["drop"]
    if not isinstance(raw, list):
        raise StructuredOutputError("drop must be a list")
    out = []
    for r in raw:
        ref = str(r["source_id"])
        if ref not in refs:
            raise StructuredOutputError(f"{ref!r} is not a candidate item")
        out.append((ref, str(r.get("reason", "")).strip() or "inconsistent with the stated objectives"))
    return out


def apply_constraints(
    interpreted: list[InterpretedEvidence],
    question: ResearchQuestion,
    provider: ChatProvider | None,
) -> ConstrainedEvidence:
    """Drop items that conflict with the researcher's stated objectives."""
    sets = tuple(sorted(interpreted, key=lambda s: s.i))
    cons = question.constraints
    if cons.empty or not any(s.items for s in sets):
        return ConstrainedEvidence(sets)
    if provider is None:
        return ConstrainedEvidence(sets, flagged=True, note="constraint provider not configured")
    items = [it.item for s in sets for it in s.items]
    uniq = list({it.key: it for it in items}.values())
    refs = _refs(uniq)
    ref_of = {it.key: ref for it, ref in zip(uniq, refs)}
    req = prompts.render(
        "constrain",
        "interpretation",
        background=question.background or "none",
        objectives=cons.objectives or "none",
        preference=cons.preference or "none",
        items=render_items(uniq, refs),
    )
    try:
        drops = complete_json(req, provider, lambda obj: _parse_drops(obj, set(refs)))
    except ProviderError as exc:
        logger.warning("constraint filtering unavailable: %s", exc)
        return ConstrainedEvidence(sets, flagged=True, note=f"identity: {exc}")
    except StructuredOutputError as exc:
        raise ConstraintError(str(exc)) from exc
    reasons = dict(drops)
    out, dropped = [], []
    for s in sets:
        keep = []
        for it in s.items:
            ref = ref_of[it.item.key]
            if ref in reasons:
                dropped.append(DroppedItem(s.i, it.item.source_id, reasons[ref]))
            else:
                keep.append(it)
        out.append(InterpretedEvidence(s.i, s.sub_question, tuple(keep), s.flagged, s.note))
    for d in dropped:
        logger.info("constraint dropped %s from sub-question %d: %s", d.source_id, d.i, d.reason)
    return ConstrainedEvidence(tuple(out), tuple(dropped))


# -- answer bundle -----------------------------------------------------------


@dataclass(frozen=True)
class ReportSection:
    heading: str
    claims: tuple[str, ...]

    def to_dict(self) -> dict[str, Any]:
        return {"heading": self.heading, "claims": list(self.claims)}


@dataclass(frozen=True)
class Reference:
    source_id: str
    citation_string: str = ""
    resolved: bool | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"source_id": self.source_id, "citation_string": self.citation_string, "resolved": self.resolved}


@dataclass(frozen=True)
class AnswerBundle:
    question: str
    answer: str
    report: tuple[ReportSection, ...] = ()
    references: tuple[Reference, ...] = ()
    trace: str = ""
    insufficient: bool = False
    repairs: tuple[str, ...] = ()
    schema_version: str = SCHEMA_VERSION

    def cited_ids(self) -> list[str]:
        """Inline citations in reading order: answer, then report sections."""
        text = [self.answer] + [c for s in self.report for c in s.claims]
        return [cid for t in text for cid in inline_citations(t)]

    def integrity_problems(self) -> list[str]:
        problems = []
        order = list(dict.fromkeys(self.cited_ids()))
        ref_ids = [r.source_id for r in self.references]
        missing = [c for c in order if c not in ref_ids]
        if missing:
            problems.append(f"cited but not referenced: {missing}")
        orphan = [r for r in ref_ids if r not in order]
        if orphan:
            problems.append(f"referenced but never cited: {orphan}")
        if not missing and not orphan and ref_ids != order:
            problems.append("reference order differs from first inline appearance")
        uncited = [c for s in self.report for c in s.claims if not inline_citations(c)]
        if uncited:
            problems.append(f"{len(uncited)} report claim(s) without a citation")
        unresolved = [r.source_id for r in self.references if r.resolved is not True]
        if unresolved:
            problems.append(f"unresolved references: {unresolved}")
        return problems

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "question": self.question,
            "answer": self.answer,
            "report": [s.to_dict() for s in self.report],
            "references": [r.to_dict() for r in self.references],
            "trace": self.trace,
            "insufficient": self.insufficient,
            "repairs": list(self.repairs),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> AnswerBundle:
        if str(data.get("schema_version")) != SCHEMA_VERSION:
            raise ValueError(f"unsupported answer schema_version {data.get('schema_version')!r}")
        return cls(
            question=data["question"],
            answer=data["answer"],
            report=tuple(ReportSection(s["heading"], tuple(s["claims"])) for s in data.get("report", [])),
            references=tuple(Reference(r["source_id"], r.get("citation_string", ""), r.get("resolved")) for r in data.get("references", [])),
            trace=data.get("trace", ""),
            insufficient=data.get("insufficient", False),
            repairs=tuple(data.get("repairs", ())),
        )

    def render_text(self) -> str:
        lines = ["Answer:", self.answer, "", "Report:"]
        for s in self.report:
            lines.append(f"## {s.heading}")
            lines.extend(f"- {c}" for c in s.claims)
        lines += ["", "References:"]
        for n, r in enumerate(self.references, start=1):
            label = r.source_id if r.source_id.startswith("NCT") else f"PMID: {r.source_id}"
            lines.append(f"{n}. {label}. {r.citation_string}".rstrip())
        return "\n".join(lines) + "\n"


def insufficiency_bundle(question: str, trace: str = "", note: str = "no citable evidence") -> AnswerBundle:
    return AnswerBundle(question, INSUFFICIENT_ANSWER, (), (), trace, True, (note,))


# -- synthesis ---------------------------------------------------------------


def _item_block(item: EvidenceItem, note: str, body: str) -> str:
    cid = citable_id(item)
    label = f"cite as {cite_marker(cid)}" if cid else f"background only, not citable: {item.kind}"
    year = f" ({item.year})" if item.year else ""
    parts = [f"- [{label}] {item.title}{year}"]
    if note:
        parts.append(f"  Interpretation: {note}")
    if body:
        parts.append(f"  {body}")
    return "\n".join(parts)


def assemble_blocks(sets: Iterable[InterpretedEvidence], token_budget: int = DEFAULT_TOKEN_BUDGET) -> str:
    """Evidence blocks in sub-question order, item bodies trimmed to fit the budget.

    Bodies are cut starting from the lowest-priority item (last in its
    refined order), oldest first among equals.
    """
    sets = sorted(sets, key=lambda s: s.i)
    bodies = {(s.i, n): it.item.body for s in sets for n, it in enumerate(s.items)}

    def render() -> str:
        out = []
        for s in sets:
            out.append(f"Sub-question {s.i}: {s.sub_question}")
            if not s.items:
                out.append("- (no evidence retained)")
            for n, it in enumerate(s.items):
                out.append(_item_block(it.item, it.note, bodies[(s.i, n)]))
            out.append("")
        return "\n".join(out).rstrip("\n")

    budget = token_budget * CHARS_PER_TOKEN
    text = render()
    if len(text) <= budget:
        return text
    order = sorted(
        ((s.i, n, it.item.year or 0) for s in sets for n, it in enumerate(s.items)),
        key=lambda t: (-t[1], t[2], t[0]),
    )
    for i, n, _ in order:
        excess = len(text) - budget
        if excess <= 0:
            break
        body = bodies[(i, n)]
        bodies[(i, n)] = body[: max(0, len(body) - excess - 4)].rstrip() + " ..." if len(body) > excess + 4 else ""
        text = render()
    return text


def _parse_synthesis(obj: Any) -> tuple[str, list[tuple[str, list[str]]]]:
    answer = str(obj["answer"]).strip()
    if not answer:
        raise StructuredOutputError("answer is empty")
    report = obj.get("report", [])
    if not isinstance(report, list):
        raise StructuredOutputError("report must be a list of sections")
    sections = []
    for s in report:
        claims = [" ".join(str(c).split()) for c in s.get("claims", []) if str(c).strip()]
        sections.append((" ".join(str(s.get("heading", "")).split()) or "Findings", claims))
    return answer, sections


def _strip_citations(text: str, bad: set[str]) -> str:
    def sub(m: re.Match) -> str:
        return "" if m.group(1) in bad else m.group(0)

    text = PMID_CITE.sub(sub, text)
    text = NCT_CITE.sub(sub, text)
    return re.sub(r"[ \t]+([.,;:])", r"\1", re.sub(r"[ \t]{2,}", " ", text)).strip()


def _citation_string(item: EvidenceItem, clients: LiteratureClients) -> str:
    if item.kind == "clinical-trial":
        return f"{item.title}. ClinicalTrials.gov identifier: {item.source_id}."
    try:
        return clients.get_pubmed_citation_style(item.source_id)
    except (LitClientError, TransportError) as exc:
        logger.info("no formatted citation for %s: %s", item.source_id, exc)
        year = f" {item.year}." if item.year else ""
        return f"{item.title}.{year} PMID: {item.source_id}."


def synthesize_answer(
    question: ResearchQuestion,
    evidence: ConstrainedEvidence | list[InterpretedEvidence],
    provider: ChatProvider,
    clients: LiteratureClients,
    trace: str = "",
    token_budget: int = DEFAULT_TOKEN_BUDGET,
    max_drop_fraction: float = MAX_DROP_FRACTION,
) -> AnswerBundle:
    sets = list(evidence.sets if isinstance(evidence, ConstrainedEvidence) else evidence)
    pool: dict[str, EvidenceItem] = {}
    for s in sorted(sets, key=lambda s: s.i):
        for it in s.items:
            cid = citable_id(it.item)
            if cid:
                pool.setdefault(cid, it.item)
    if not pool:
        return insufficiency_bundle(question.text, trace)

    req = prompts.render(
        "synthesize",
        "synthesis",
        profile="provider-default",
        max_tokens=4096,
        question=question.text,
        background=question.background or "none",
        objectives=question.constraints.objectives or "none",
        blocks=assemble_blocks(sets, token_budget),
    )
    try:
        answer, sections = complete_json(req, provider, _parse_synthesis)
    except StructuredOutputError as exc:
        raise SynthesisError(f"synthesis output unusable: {exc}") from exc

    # only ids that were both retrieved and confirmed by their database are citable
    resolution: dict[str, bool] = {}

    def valid(cid: str) -> bool:
        if cid not in pool:
            return False
        if cid not in resolution:
            resolution[cid] = clients.verify_reference(cid).resolved
        return resolution[cid]

    repairs: list[str] = []
    total = sum(len(c) for _, c in sections)
    kept_sections = []
    dropped = 0
    for heading, claims in sections:
        kept = []
        for claim in claims:
            cites = inline_citations(claim)
            bad = [c for c in cites if not valid(c)]
            if not cites or bad:
                dropped += 1
                repairs.append(f"dropped claim {'without citation' if not cites else 'citing ' + ', '.join(bad)}: {claim[:80]}")
                continue
            kept.append(claim)
        if kept:
            kept_sections.append(ReportSection(heading, tuple(kept)))
    if total and dropped / total > max_drop_fraction:
        raise CitationIntegrityError(f"{dropped} of {total} claims cited unknown sources; repair budget exceeded")
    if not kept_sections:
        raise CitationIntegrityError("no report claim survived citation repair")
    bad_in_answer = {c for c in inline_citations(answer) if not valid(c)}
    if bad_in_answer:
        answer = _strip_citations(answer, bad_in_answer)
        repairs.append(f"removed answer citations to {sorted(bad_in_answer)}")

    draft = AnswerBundle(question.text, answer, tuple(kept_sections), trace=trace, repairs=tuple(repairs))
    order = list(dict.fromkeys(draft.cited_ids()))
    refs = tuple(Reference(cid, _citation_string(pool[cid], clients), True) for cid in order)
    bundle = AnswerBundle(question.text, answer, tuple(kept_sections), refs, trace, False, tuple(repairs))
    problems = bundle.integrity_problems()
    if problems:
        raise CitationIntegrityError("; ".join(problems))
    return bundle


def verify_bundle(bundle: AnswerBundle, clients: LiteratureClients) -> AnswerBundle:
    """Re-check every reference against its source database."""
    refs = tuple(Reference(r.source_id, r.citation_string, clients.verify_reference(r.source_id).resolved) for r in bundle.references)
    return AnswerBundle(bundle.question, bundle.answer, bundle.report, refs, bundle.trace, bundle.insufficient, bundle.repairs)


# -- normalizing external responses ----------------------------------------

_HEADER = re.compile(r"^[ \t]*#{0,3}[ \t]*\**(answer|report|analytical report|references|reference list)\**[ \t]*:?[ \t]*$", re.IGNORECASE | re.MULTILINE)
_REF_ID = re.compile(r"PMID:?\s*(\d+)|\b(NCT\d{8})\b", re.IGNORECASE)


def _ids_in(text: str) -> list[str]:
    return [m.group(1) or m.group(2).upper() for m in _REF_ID.finditer(text)]


def normalize_response(
    text: str,
    references: Iterable[str] = (),
    question: str = "",
    clients: LiteratureClients | None = None,
) -> AnswerBundle:
    """Map a free-text answer from another system onto the common template.

    Segments are introduced by lines reading ``Answer``, ``Report`` or
    ``References`` (optionally with ``#`` or ``**`` decoration and a colon).
    Without headers the whole text is the answer. Report lines starting with
    ``##`` open a section; other lines are claims.
    """
    if not text.strip():
        raise ParseError("response is empty", 0, len(text))
    marks = [(m.start(), m.end(), m.group(1).lower()) for m in _HEADER.finditer(text)]
    segments: dict[str, tuple[int, int]] = {}
    if not marks or text[: marks[0][0]].strip():
        segments["answer"] = (0, marks[0][0] if marks else len(text))
    for n, (start, end, name) in enumerate(marks):
        stop = marks[n + 1][0] if n + 1 < len(marks) else len(text)
        key = "references" if name.startswith("reference") else "report" if "report" in name else "answer"
        if key in segments and text[segments[key][0] : segments[key][1]].strip():
            raise ParseError(f"duplicate {key} segment", start, end)
        segments[key] = (end, stop)
    a0, a1 = segments.get("answer", (0, 0))
    answer = text[a0:a1].strip()
    if not answer:
        raise ParseError("no answer segment found", a0, a1)

    report: list[ReportSection] = []
    if "report" in segments:
        r0, r1 = segments["report"]
        heading, claims = "Report", []
        for line in text[r0:r1].splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if claims:
                    report.append(ReportSection(heading, tuple(claims)))
                heading, claims = line.lstrip("#").strip() or "Report", []
            else:
                claims.append(re.sub(r"^(?:[-*•]|\d+[.)])\s+", "", line))
        if claims:
            report.append(ReportSection(heading, tuple(claims)))

    listed = list(references)
    if "references" in segments:
        f0, f1 = segments["references"]
        listed.extend(_ids_in(text[f0:f1]))
    draft = AnswerBundle(question, answer, tuple(report))
    order = list(dict.fromkeys([*draft.cited_ids(), *(i for ref in listed for i in _ids_in(ref) or [ref.strip()])]))
    refs = []
    for cid in order:
        resolved = None
        if clients is not None:
            try:
                classify_reference(cid)
                resolved = clients.verify_reference(cid).resolved
            except ValueError:
                resolved = False
        refs.append(Reference(cid, "", resolved))
    return AnswerBundle(question, answer, tuple(report), tuple(refs))


# -- benchmark entries -------------------------------------------------------

LEVEL_VALUES = ("High", "Moderate", "Low")


@dataclass(frozen=True)
class BenchmarkReference:
    source_id: str
    year: int

    def to_dict(self) -> dict[str, Any]:
        return {"source_id": self.source_id, "year": self.year}


@dataclass(frozen=True)
class Annotations:
    accuracy: str
    comprehension: int
    analytical_quality: str
    reference_relevance: str
    novelty: bool
    source: str
    analytical_notes: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "comprehension": self.comprehension,
            "analytical_quality": self.analytical_quality,
            "analytical_notes": self.analytical_notes,
            "reference_relevance": self.reference_relevance,
            "novelty": self.novelty,
            "source": self.source,
        }


@dataclass(frozen=True)
class BenchmarkEntry:
    id: str
    category: str
    question: str
    reference_answer: str
    annotations: Annotations
    references: tuple[BenchmarkReference, ...]
    analytical_report: str | None = None

    def __post_init__(self) -> None:
        if self.category not in CATEGORIES:
            raise ValueError(f"category must be one of {CATEGORIES}")
        if not 1 <= self.annotations.comprehension <= 5:
            raise ValueError("comprehension must be in 1..5")
        years = [r.year for r in self.references]
        if years != sorted(years):
            raise ValueError("references must be in chronological order")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "category": self.category,
            "question": self.question,
            "reference_answer": self.reference_answer,
            "annotations": self.annotations.to_dict(),
            "references": [r.to_dict() for r in self.references],
            "analytical_report": self.analytical_report,
        }


def benchmark_schema() -> dict[str, Any]:
    return json.loads(resources.files("deeper").joinpath("assets/benchmark.schema.json").read_text(encoding="utf-8"))


def _path(err: jsonschema.ValidationError) -> str:
    out = "$"
    for part in err.absolute_path:
        out += f"[{part}]" if isinstance(part, int) else f".{part}"
    return out


def parse_benchmark(data: Any) -> list[BenchmarkEntry]:
    validator = jsonschema.Draft202012Validator(benchmark_schema())
    errors = sorted(validator.iter_errors(data), key=lambda e: (len(list(e.absolute_path)), list(map(str, e.absolute_path))))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise BenchmarkSchemaError(_path(err), err.message)
    entries = []
    for n, raw in enumerate(data["entries"]):
        refs = [BenchmarkReference(r["source_id"], r["year"]) for r in raw["references"]]
        ordered = sorted(refs, key=lambda r: r.year)
        if ordered != refs:
            warnings.warn(f"entry {raw['id']}: references reordered chronologically", BenchmarkWarning, stacklevel=3)
        a = raw["annotations"]
        entries.append(
            BenchmarkEntry(
                id=raw["id"],
                category=raw["category"],
                question=raw["question"],
                reference_answer=raw["reference_answer"],
                annotations=Annotations(
                    a["accuracy"], a["comprehension"], a["analytical_quality"], a["reference_relevance"],
                    a["novelty"], a["source"], a.get("analytical_notes", ""),
                ),
                references=tuple(ordered),
                analytical_report=raw.get("analytical_report"),
            )
        )
    return entries


def load_benchmark(path: str | Path) -> list[BenchmarkEntry]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise BenchmarkSchemaError("$", f"not valid JSON: {exc}") from exc
    return parse_benchmark(data)


def dump_benchmark(entries: Iterable[BenchmarkEntry]) -> str:
    doc = {"schema_version": SCHEMA_VERSION, "entries": [e.to_dict() for e in entries]}
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"

