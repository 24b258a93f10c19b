from __future__ import annotations

import re
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Literal

EvidenceKind = Literal["pubmed-abstract", "pmc-fulltext", "clinical-trial", "wikipedia-intro", "llm-generated"]
EVIDENCE_KINDS = ("pubmed-abstract", "pmc-fulltext", "clinical-trial", "wikipedia-intro", "llm-generated")

PMID_RE = re.compile(r"^\d+$")
NCT_RE = re.compile(r"^NCT\d{8}$")


@dataclass(frozen=True)
class EvidenceItem:
    """One retrieved or generated evidence record with its provenance."""

    kind: EvidenceKind
    source_id: str
    title: str
    body: str
    query: str = ""
    retrieved_at: str = ""
    year: int | None = None
    citation_count: int | None = None
    citation_string: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in EVIDENCE_KINDS:
            raise ValueError(f"unknown evidence kind {self.kind!r}")
        if self.kind in ("pubmed-abstract", "pmc-fulltext") and not PMID_RE.match(self.source_id):
            raise ValueError(f"{self.kind} needs a numeric PMID, got {self.source_id!r}")
        if self.kind == "clinical-trial" and not NCT_RE.match(self.source_id):
            raise ValueError(f"clinical-trial needs an NCT id, got {self.source_id!r}")
        if self.kind == "llm-generated" and not self.source_id.startswith("llm:"):
            raise ValueError("llm-generated ids must start with 'llm:'")
        if not (self.title or self.body):
            raise ValueError(f"evidence {self.source_id} has neither title nor body")
        if self.citation_count is not None and self.citation_count < 0:
            raise ValueError("citation_count must be non-negative")

    @property
    def key(self) -> tuple[str, str]:
        return (self.kind, self.source_id)

    @property
    def from_database(self) -> bool:
        return self.kind != "llm-generated"

    @property
    def text(self) -> str:
        """Title and body joined, the text that gets embedded."""
        return f"{self.title}\n{self.body}".strip()

    def richness(self) -> int:
        return sum(v is not None for v in (self.year, self.citation_count, self.citation_string)) + bool(self.body)

    def enriched(self, **changes: Any) -> EvidenceItem:
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> EvidenceItem:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})
