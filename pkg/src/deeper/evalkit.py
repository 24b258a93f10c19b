"""Evaluation metrics: accuracy, embedding-histogram entropy and divergence, coverage and judges."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Literal, Sequence

import numpy as np

from . import prompts
from .litclients import EvidenceItem
from .llm import ChatProvider, EmbeddingProvider, ProviderError, StructuredOutputError, complete_json, embed_text

DEFAULT_BINS = 100
EPSILON = 1e-12
LOG_BASE = 2


class EvalError(Exception):
    pass


class JudgeError(EvalError):
    pass


class DegenerateRangeWarning(UserWarning):
    pass


# -- accuracy ----------------------------------------------------------------


def accuracy(correct: int, total: int) -> float:
    if total <= 0:
        raise ValueError("total must be positive")
    if not 0 <= correct <= total:
        raise ValueError("correct must be in [0, total]")
    return correct / total


# -- histograms --------------------------------------------------------------


@dataclass(frozen=True)
class HistogramDist:
    edges: np.ndarray
    probs: np.ndarray
    epsilon: float = EPSILON
    counts: np.ndarray | None = None

    def __post_init__(self) -> None:
        edges = np.asarray(self.edges, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        if edges.ndim != 1 or probs.ndim != 1 or len(edges) != len(probs) + 1:
            raise ValueError("need K+1 edges for K probabilities")
        if len(probs) < 2:
            raise ValueError("need at least 2 bins")
        if not np.all(np.diff(edges) > 0):
            raise ValueError("bin edges must be strictly increasing")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "probs", probs)

    @property
    def k(self) -> int:
        return len(self.probs)

    @classmethod
    def from_probabilities(cls, probs: Sequence[float], epsilon: float = EPSILON, edges: Sequence[float] | None = None) -> HistogramDist:
        """Smooth and renormalize a raw probability (or count) vector over unit-spaced bins."""
        p = np.asarray(probs, dtype=float)
        if np.any(p < 0) or p.sum() <= 0:
            raise ValueError("probabilities must be non-negative with positive mass")
        p = p / p.sum()
        smoothed = p + epsilon
        e = np.arange(len(p) + 1, dtype=float) if edges is None else np.asarray(edges, dtype=float)
        return cls(e, smoothed / smoothed.sum(), epsilon)


Range = Literal["pooled"] | tuple[float, float]


def _components(vectors: Any) -> np.ndarray:
    """Flatten one vector or a same-dimension set of vectors into their scalar components."""
    try:
        arr = np.asarray(vectors, dtype=float)
    except ValueError as exc:
        raise ValueError("vectors must share one dimension") from exc
    if arr.ndim not in (1, 2) or arr.size == 0:
        raise ValueError("expected one vector or a non-empty set of vectors")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vectors must be finite")
    return arr.ravel()


def component_histogram(vectors: Any, k: int = DEFAULT_BINS, range: Range = "pooled", epsilon: float = EPSILON) -> HistogramDist:
    """Bin every scalar component of one vector or a set of vectors into ``k`` bins.

    ``range="pooled"`` spans the observed min and max; a ``(lo, hi)`` tuple
    fixes the edges and clips components outside it into the end bins.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    x = _components(vectors)
    if range == "pooled":
        lo, hi = float(x.min()), float(x.max())
    else:
        lo, hi = map(float, range)
        if not hi > lo:
            raise ValueError("fixed range needs hi > lo")
        x = np.clip(x, lo, hi)
    if hi == lo:
        warnings.warn("all components are equal; histogram mass falls in one bin", DegenerateRangeWarning, stacklevel=2)
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, k + 1)
    counts, _ = np.histogram(x, bins=edges)
    p = counts / counts.sum()
    smoothed = p + epsilon
    return HistogramDist(edges, smoothed / smoothed.sum(), epsilon, counts)


def shared_histograms(a: Any, b: Any, k: int = DEFAULT_BINS, epsilon: float = EPSILON) -> tuple[HistogramDist, HistogramDist]:
    """Histograms of two inputs over common edges spanning both."""
    xa, xb = _components(a), _components(b)
    lo = float(min(xa.min(), xb.min()))
    hi = float(max(xa.max(), xb.max()))
    if hi == lo:
        return component_histogram(xa, k, "pooled", epsilon), component_histogram(xb, k, "pooled", epsilon)
    return component_histogram(xa, k, (lo, hi), epsilon), component_histogram(xb, k, (lo, hi), epsilon)


def shannon_entropy(dist: HistogramDist) -> float:
    p = dist.probs
    return float(-np.sum(p * np.log(p)) / math.log(LOG_BASE))


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])) / math.log(LOG_BASE))


def jensen_shannon_distance(p: HistogramDist, q: HistogramDist) -> float:
    if p.k != q.k or not np.array_equal(p.edges, q.edges):
        raise ValueError("distributions must share bin edges")
    m = 0.5 * (p.probs + q.probs)
    js = 0.5 * _kl(p.probs, m) + 0.5 * _kl(q.probs, m)
    return math.sqrt(max(js, 0.0))


# -- retrieval comparisons ---------------------------------------------------


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise EvalError("cannot take the cosine of a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def embed_items(items: Iterable[EvidenceItem], embedder: EmbeddingProvider) -> np.ndarray:
    return np.array([embed_text(it.text, embedder) for it in items], dtype=float)


def set_similarity(retrieved: Sequence[EvidenceItem], reference: Sequence[EvidenceItem], embedder: EmbeddingProvider) -> float:
    """Cosine between the mean title+abstract embeddings of two item sets."""
    if not retrieved or not reference:
        raise ValueError("both sets must be non-empty")
    try:
        a = embed_items(retrieved, embedder).mean(axis=0)
        b = embed_items(reference, embedder).mean(axis=0)
    except ProviderError as exc:
        raise EvalError(f"embedder failed: {exc}") from exc
    return _cosine(a, b)


def source_coverage(cited: Iterable[str], ground_truth: Iterable[str]) -> float:
    truth = set(ground_truth)
    if not truth:
        raise ValueError("ground truth must be non-empty")
    return len(set(cited) & truth) / len(truth)


# -- judges ------------------------------------------------------------------


def _verdict(allowed: tuple[str, ...]):
    def parse(obj: Any) -> str:
        v = str(obj["verdict"]).strip().lower()
        if v not in allowed:
            raise StructuredOutputError(f"verdict must be one of {allowed}, got {v!r}")
        return v

    return parse


def judge_open_ended(prediction: str, reference: str, judge: ChatProvider) -> str:
    if not prediction.strip() or not reference.strip():
        raise ValueError("prediction and reference must be non-empty")
    req = prompts.render("judge_open", "judge", reference=reference, prediction=prediction)
    try:
        return complete_json(req, judge, _verdict(("consistent", "inconsistent")))
    except (StructuredOutputError, ProviderError) as exc:
        raise JudgeError(f"no usable verdict: {exc}") from exc


@dataclass(frozen=True)
class NuggetResult:
    matched: int
    total: int
    verdicts: tuple[str, ...]
    undecided: tuple[str, ...] = ()

    def as_tuple(self) -> tuple[int, int]:
        return self.matched, self.total


def nugget_coverage(answer: str, nuggets: Sequence[str], judge: ChatProvider) -> NuggetResult:
    if not nuggets:
        raise ValueError("nuggets must be non-empty")
    if not answer.strip():
        return NuggetResult(0, len(nuggets), ("unmatched",) * len(nuggets))
    verdicts, undecided = [], []
    for nugget in nuggets:
        req = prompts.render("judge_nugget", "judge", answer=answer, nugget=nugget)
        try:
            verdicts.append(complete_json(req, judge, _verdict(("matched", "unmatched"))))
        except (StructuredOutputError, ProviderError):
            verdicts.append("undecided")
            undecided.append(nugget)
    return NuggetResult(verdicts.count("matched"), len(nuggets), tuple(verdicts), tuple(undecided))


# -- publication years ---------------------------------------------------------


@dataclass(frozen=True)
class YearDistribution:
    counts: dict[int, int]
    unknown: int
    recent_share: float | None
    current_year: int

    @property
    def defined(self) -> bool:
        return self.recent_share is not None

    def to_dict(self) -> dict[str, Any]:
        return {
            "counts": {str(y): n for y, n in sorted(self.counts.items())},
            "unknown": self.unknown,
            "recent_share": self.recent_share,
            "current_year": self.current_year,
        }


def year_distribution(items: Iterable[EvidenceItem | int | None], current_year: int) -> YearDistribution:
    """Counts per publication year and the share from the last five calendar years."""
    counts: dict[int, int] = {}
    unknown = 0
    for it in items:
        year = it.year if isinstance(it, EvidenceItem) else it
        if year is None:
            unknown += 1
        else:
            counts[int(year)] = counts.get(int(year), 0) + 1
    known = sum(counts.values())
    recent = sum(n for y, n in counts.items() if y >= current_year - 4)
    return YearDistribution(dict(sorted(counts.items())), unknown, recent / known if known else None, current_year)


# -- reports -----------------------------------------------------------------


def inputs_digest(*inputs: Any) -> str:
    def default(o: Any) -> Any:
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, EvidenceItem):
            return o.to_dict()
        return str(o)

    blob = json.dumps(inputs, sort_keys=True, default=default, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class MetricReport:
    metric: str
    value: Any
    inputs_digest: str
    parameters: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"metric": self.metric, "value": self.value, "inputs_digest": self.inputs_digest, "parameters": self.parameters}


def histogram_parameters(k: int = DEFAULT_BINS, epsilon: float = EPSILON, pooling: str = "pooled-components", range: Any = "pooled") -> dict[str, Any]:
    return {"K": k, "epsilon": epsilon, "log_base": LOG_BASE, "pooling": pooling, "range": range if range == "pooled" else list(range)}


def write_metrics(reports: Iterable[MetricReport], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"metrics": [r.to_dict() for r in reports]}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_embeddings_csv(ids: Sequence[str], vectors: np.ndarray, path: str | Path) -> None:
    vectors = np.asarray(vectors, dtype=float)
    if len(ids) != len(vectors):
        raise ValueError("one id per vector")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *(f"d{n}" for n in range(vectors.shape[1]))])
        for sid, vec in zip(ids, vectors):
            w.writerow([sid, *(repr(float(v)) for v in vec)])


def write_year_csv(dist: YearDistribution, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["year", "count"])
        for y, n in sorted(dist.counts.items()):
            w.writerow([y, n])
        if dist.unknown:
            w.writerow(["unknown", dist.unknown])


def write_metric_rows_csv(rows: Sequence[dict[str, Any]], path: str | Path) -> None:
    """One row per question; columns are the union of keys, question id first."""
    cols: list[str] = []
    for r in rows:
        for key in r:
            if key not in cols:
                cols.append(key)
    if "question_id" in cols:
        cols.remove("question_id")
        cols.insert(0, "question_id")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)
