"""In-memory biomedical knowledge graph and the six graph worker APIs.

Graphs are loaded once from an edge list (PrimeKG ``kg.csv`` layout or a
simple five-column TSV) and are read-only afterwards, so every query method is
safe to call from many threads at once.
"""

from __future__ import annotations

import csv
import heapq
import logging
import re
from collections import Counter, defaultdict, deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Literal

logger = logging.getLogger(__name__)

PRIMEKG_COLUMNS = (
    "relation",
    "display_relation",
    "x_index",
    "x_id",
    "x_type",
    "x_name",
    "x_source",
    "y_index",
    "y_id",
    "y_type",
    "y_name",
    "y_source",
)
TSV_COLUMNS = ("head_name", "head_type", "relation", "tail_name", "tail_type")

DEFAULT_SIMILARITY_THRESHOLD = 0.5
DEFAULT_TOP_CANDIDATES = 5
DEFAULT_MAX_PATHS = 10

GraphFormat = Literal["primekg-csv", "generic-tsv"]


class GraphError(Exception):
    """Base class for knowledge-graph errors."""


class GraphLoadError(GraphError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class MalformedRowError(GraphLoadError):
    pass


class DuplicateEntityError(GraphLoadError):
    pass


class DanglingEndpointError(GraphLoadError):
    pass


class UnknownEntityError(GraphError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown entity"


@dataclass(frozen=True)
class KGEntity:
    index: int
    name: str
    entity_type: str
    source_vocab: str = ""
    source_id: str = ""

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError(f"entity {self.index} has an empty name")
        if not self.entity_type:
            raise ValueError(f"entity {self.index} has an empty type")


@dataclass(frozen=True)
class KGEdge:
    head: int
    relation: str
    display_relation: str
    tail: int


@dataclass(frozen=True)
class NormalizedEntity:
    query: str
    entity: KGEntity
    match_kind: Literal["exact", "similarity"]
    score: float


@dataclass(frozen=True)
class GraphPath:
    nodes: tuple[KGEntity, ...]
    relations: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.relations) != len(self.nodes) - 1:
            raise ValueError("a path needs exactly one relation per hop")

    def __len__(self) -> int:
        return len(self.relations)

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(node.index for node in self.nodes)

    def steps(self) -> Iterator[tuple[KGEntity, str, KGEntity]]:
        for i, rel in enumerate(self.relations):
            yield self.nodes[i], rel, self.nodes[i + 1]


def normalize_name(text: str) -> str:
    """Case-fold and collapse internal whitespace."""
    return " ".join(text.casefold().split())


def trigrams(text: str) -> frozenset[str]:
    """Character trigrams of a normalized string; short strings are one gram."""
    text = normalize_name(text)
    if len(text) < 3:
        return frozenset([text]) if text else frozenset()
    return frozenset(text[i : i + 3] for i in range(len(text) - 2))


def trigram_similarity(a: str, b: str) -> float:
    ga, gb = trigrams(a), trigrams(b)
    if not ga or not gb:
        return 0.0
    return len(ga & gb) / len(ga | gb)


DISTANCE_CACHE_MAX = 4096


class KnowledgeGraph:
    """Immutable typed entity/edge store with forward and reverse adjacency."""

    def __init__(self, entities: Iterable[KGEntity], edges: Iterable[KGEdge]):
        self._entities: dict[int, KGEntity] = {}
        for ent in entities:
            if ent.index in self._entities:
                raise DuplicateEntityError(f"duplicate entity index {ent.index}")
            self._entities[ent.index] = ent

        out: dict[int, dict[tuple[int, str], KGEdge]] = defaultdict(dict)
        rev: dict[int, dict[tuple[int, str], KGEdge]] = defaultdict(dict)
        for edge in edges:
            for end in (edge.head, edge.tail):
                if end not in self._entities:
                    raise DanglingEndpointError(f"edge endpoint {end} is not a declared entity")
            key = (edge.tail, edge.relation)
            if key in out[edge.head]:
                continue
            out[edge.head][key] = edge
            rev[edge.tail][(edge.head, edge.relation)] = edge

        # sorted (neighbor index, relation) order makes every traversal deterministic
        self._out: dict[int, tuple[KGEdge, ...]] = {
            h: tuple(e for _, e in sorted(d.items())) for h, d in out.items()
        }
        self._in: dict[int, tuple[KGEdge, ...]] = {
            t: tuple(e for _, e in sorted(d.items())) for t, d in rev.items()
        }
        self._edge_count = sum(len(v) for v in self._out.values())
        self._relation_freq = Counter(e.relation for v in self._out.values() for e in v)

        names: dict[str, list[int]] = defaultdict(list)
        for idx in sorted(self._entities):
            names[normalize_name(self._entities[idx].name)].append(idx)
        self._name_index = {k: tuple(v) for k, v in names.items()}
        self._grams = {idx: trigrams(ent.name) for idx, ent in self._entities.items()}
        # the graph never changes, so reverse BFS results can be reused; callers only read them
        self._to_cache: dict[int, dict[int, int]] = {}

    # -- basic accessors -------------------------------------------------

    @property
    def entity_count(self) -> int:
        return len(self._entities)

    @property
    def edge_count(self) -> int:
        return self._edge_count

    @property
    def relation_frequency(self) -> Counter:
        return Counter(self._relation_freq)

    def entities(self) -> list[KGEntity]:
        return [self._entities[i] for i in sorted(self._entities)]

    def edges(self) -> list[KGEdge]:
        return [e for h in sorted(self._out) for e in self._out[h]]

    def entity(self, index: int) -> KGEntity:
        try:
            return self._entities[index]
        except KeyError:
            raise UnknownEntityError(f"no entity with index {index}") from None

    def out_edges(self, index: int) -> tuple[KGEdge, ...]:
        return self._out.get(index, ())

    def in_edges(self, index: int) -> tuple[KGEdge, ...]:
        return self._in.get(index, ())

    def _check(self, entity: KGEntity) -> int:
        known = self._entities.get(entity.index)
        if known is None or known != entity:
            raise UnknownEntityError(f"entity {entity.name!r} ({entity.index}) is not in this graph")
        return entity.index

    # -- worker APIs -----------------------------------------------------

    def get_normalized_entity(
        self,
        query: str,
        threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
        top_k: int = DEFAULT_TOP_CANDIDATES,
    ) -> list[NormalizedEntity]:
        """Map free text onto graph entities by exact then trigram-similarity match."""
        key = normalize_name(query)
        if not key:
            raise ValueError("query must be non-empty")
        exact = self._name_index.get(key)
        if exact:
            return [NormalizedEntity(query, self._entities[i], "exact", 1.0) for i in exact]

        grams = trigrams(key)
        scored = []
        for idx, g in self._grams.items():
            union = len(grams | g)
            score = len(grams & g) / union if union else 0.0
            if score >= threshold:
                scored.append((-score, idx))
        scored.sort()
        return [
            NormalizedEntity(query, self._entities[idx], "similarity", -neg)
            for neg, idx in scored[:top_k]
        ]

    def get_tail_entity_by_relation(self, head: KGEntity, relation: str) -> list[KGEntity]:
        h = self._check(head)
        return [self._entities[e.tail] for e in self.out_edges(h) if e.relation == relation]

    def get_tail_entity_by_type(self, head: KGEntity, tail_type: str) -> list[KGEntity]:
        h = self._check(head)
        seen: dict[int, KGEntity] = {}
        for e in self.out_edges(h):
            tail = self._entities[e.tail]
            if tail.entity_type == tail_type:
                seen.setdefault(tail.index, tail)
        return [seen[i] for i in sorted(seen)]

    def get_relation_type(self, head: KGEntity, tail: KGEntity) -> list[str]:
        """Direct head->tail relations, most frequent in the graph first."""
        h, t = self._check(head), self._check(tail)
        rels = {e.relation for e in self.out_edges(h) if e.tail == t}
        return sorted(rels, key=lambda r: (-self._relation_freq[r], r))

    def get_shortest_paths(
        self, head: KGEntity, tail: KGEntity, max_paths: int = DEFAULT_MAX_PATHS
    ) -> list[GraphPath]:
        """All minimum-hop directed paths, lexicographic by node indices."""
        h, t = self._check(head), self._check(tail)
        if max_paths < 1:
            raise ValueError("max_paths must be >= 1")
        to_tail = self._distances_to(t)
        if h not in to_tail:
            return []

        found: list[GraphPath] = []
        nodes = [h]
        rels: list[str] = []

        def walk(v: int) -> None:
            if len(found) >= max_paths:
                return
            if v == t:
                found.append(self._make_path(nodes, rels))
                return
            want = to_tail[v] - 1
            for e in self.out_edges(v):
                if to_tail.get(e.tail) == want:
                    nodes.append(e.tail)
                    rels.append(e.relation)
                    walk(e.tail)
                    nodes.pop()
                    rels.pop()
                    if len(found) >= max_paths:
                        return

        walk(h)
        return found

    def get_shortest_path_by_entity_type(
        self,
        head: KGEntity,
        tail: KGEntity,
        via_type: str,
        max_paths: int = DEFAULT_MAX_PATHS,
    ) -> list[GraphPath]:
        """Shortest simple paths with at least one intermediate node of ``via_type``.

        Endpoints never count as intermediates.
        """
        h, t = self._check(head), self._check(tail)
        if max_paths < 1:
            raise ValueError("max_paths must be >= 1")
        if h == t:
            return []
        to_tail = self._distances_to(t)
        if h not in to_tail:
            return []
        from_head = self._distances_from(h)
        via = [
            i
            for i, ent in self._entities.items()
            if ent.entity_type == via_type and i not in (h, t) and i in from_head and i in to_tail
        ]
        if not via:
            return []
        # every qualifying simple path is also a walk through some via node
        lower = min(from_head[v] + to_tail[v] for v in via)
        via_to_tail = self._via_distances(via, to_tail)
        for limit in range(lower, len(self._entities)):
            paths, truncated = self._constrained_paths(h, t, via_type, limit, to_tail, via_to_tail, max_paths)
            if paths or not truncated:
                # nothing was cut by the length bound, so longer limits add nothing
                return paths
        return []

    def _make_path(self, nodes: list[int], rels: list[str]) -> GraphPath:
        return GraphPath(tuple(self._entities[i] for i in nodes), tuple(rels))

    def _distances_to(self, target: int) -> dict[int, int]:
        cached = self._to_cache.get(target)
        if cached is not None:
            return cached
        dist = {target: 0}
        queue = deque([target])
        while queue:
            v = queue.popleft()
            for e in self.in_edges(v):
                if e.head not in dist:
                    dist[e.head] = dist[v] + 1
                    queue.append(e.head)
        if len(self._to_cache) < DISTANCE_CACHE_MAX:
            self._to_cache[target] = dist
        return dist

    def _distances_from(self, source: int) -> dict[int, int]:
        dist = {source: 0}
        queue = deque([source])
        while queue:
            v = queue.popleft()
            for e in self.out_edges(v):
                if e.tail not in dist:
                    dist[e.tail] = dist[v] + 1
                    queue.append(e.tail)
        return dist

    def _via_distances(self, via: list[int], to_tail: dict[int, int]) -> dict[int, int]:
        """Hops of the shortest walk from each node through some via node to the tail."""
        dist = {v: to_tail[v] for v in via}
        heap = [(d, v) for v, d in dist.items()]
        heapq.heapify(heap)
        while heap:
            d, v = heapq.heappop(heap)
            if d > dist[v]:
                continue
            for e in self.in_edges(v):
                if d + 1 < dist.get(e.head, d + 2):
                    dist[e.head] = d + 1
                    heapq.heappush(heap, (d + 1, e.head))
        return dist

    def _constrained_paths(
        self,
        h: int,
        t: int,
        via_type: str,
        limit: int,
        to_tail: dict[int, int],
        via_to_tail: dict[int, int],
        max_paths: int,
    ) -> tuple[list[GraphPath], bool]:
        found: list[GraphPath] = []
        nodes = [h]
        rels: list[str] = []
        on_path = {h}
        truncated = False

        def walk(v: int, hit: bool) -> None:
            nonlocal truncated
            depth = len(rels)
            # exact bound once the current path is removed from the graph
            rem = self._remaining(v, t, hit, via_type, on_path)
            if rem is None:
                return
            if depth + rem > limit:
                truncated = True
                return
            for e in self.out_edges(v):
                w = e.tail
                if w in on_path:
                    continue
                if w == t:
                    if hit and depth + 1 == limit:
                        found.append(self._make_path(nodes + [w], rels + [e.relation]))
                else:
                    w_hit = hit or self._entities[w].entity_type == via_type
                    need = (to_tail if w_hit else via_to_tail).get(w)
                    if need is None:
                        continue
                    if depth + 1 + need > limit:
                        truncated = True
                        continue
                    nodes.append(w)
                    rels.append(e.relation)
                    on_path.add(w)
                    walk(w, w_hit)
                    on_path.discard(w)
                    nodes.pop()
                    rels.pop()
                if len(found) >= max_paths:
                    return

        walk(h, False)
        return found, truncated

    def _remaining(self, v: int, t: int, hit: bool, via_type: str, on_path: set[int]) -> int | None:
        """Fewest hops still needed from ``v`` without revisiting ``on_path``, or None if unreachable."""
        back = {t: 0}
        queue = deque([t])
        while queue:
            u = queue.popleft()
            if u == v:
                continue
            for e in self.in_edges(u):
                w = e.head
                if w not in back and (w == v or w not in on_path):
                    back[w] = back[u] + 1
                    queue.append(w)
        if v not in back:
            return None
        if hit:
            return back[v]
        best: int | None = None
        fwd = {v: 0}
        queue = deque([v])
        while queue:
            u = queue.popleft()
            for e in self.out_edges(u):
                w = e.tail
                if w in fwd or w in on_path or w == t:
                    continue
                fwd[w] = fwd[u] + 1
                if w in back and self._entities[w].entity_type == via_type:
                    cand = fwd[w] + back[w]
                    best = cand if best is None else min(best, cand)
                queue.append(w)
        return best


# -- ingestion -------------------------------------------------------------


def load_graph(source: str | Path, format: GraphFormat = "primekg-csv") -> KnowledgeGraph:
    """Read an edge-list file into a :class:`KnowledgeGraph`."""
    path = Path(source)
    if format == "primekg-csv":
        entities, edges = _read_primekg(path)
    elif format == "generic-tsv":
        entities, edges = _read_generic_tsv(path)
    else:
        raise ValueError(f"unknown graph format {format!r}")
    graph = KnowledgeGraph(entities, edges)
    logger.info("loaded %s: %d entities, %d edges", path.name, graph.entity_count, graph.edge_count)
    return graph


def _check_header(found: list[str] | None, expected: tuple[str, ...]) -> None:
    if found is None or tuple(c.strip() for c in found) != expected:
        raise MalformedRowError(f"header must be {','.join(expected)}", line=1)


def _read_primekg(path: Path) -> tuple[list[KGEntity], list[KGEdge]]:
    entities: dict[int, KGEntity] = {}
    edges: list[KGEdge] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        _check_header(next(reader, None), PRIMEKG_COLUMNS)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(PRIMEKG_COLUMNS):
                raise MalformedRowError(f"expected {len(PRIMEKG_COLUMNS)} columns, got {len(row)}", lineno)
            rec = dict(zip(PRIMEKG_COLUMNS, (c.strip() for c in row)))
            head = _declare(entities, rec, "x", lineno)
            tail = _declare(entities, rec, "y", lineno)
            if not rec["relation"]:
                raise MalformedRowError("empty relation", lineno)
            edges.append(KGEdge(head, rec["relation"], rec["display_relation"] or rec["relation"], tail))
    return list(entities.values()), edges


def _declare(entities: dict[int, KGEntity], rec: dict[str, str], side: str, lineno: int) -> int:
    raw = rec[f"{side}_index"]
    if not re.fullmatch(r"\d+", raw):
        raise MalformedRowError(f"{side}_index {raw!r} is not a non-negative integer", lineno)
    index = int(raw)
    name, etype = rec[f"{side}_name"], rec[f"{side}_type"]
    if not name and not etype:
        if index in entities:
            return index
        role = "head" if side == "x" else "tail"
        raise DanglingEndpointError(f"{role} index {index} is never declared", lineno)
    if not name or not etype:
        raise MalformedRowError(f"{side} entity needs both a name and a type", lineno)
    ent = KGEntity(index, name, etype, rec[f"{side}_source"], rec[f"{side}_id"])
    known = entities.get(index)
    if known is None:
        entities[index] = ent
    elif known != ent:
        raise DuplicateEntityError(
            f"index {index} declared as {known.name!r}/{known.entity_type} and {name!r}/{etype}", lineno
        )
    return index


def _read_generic_tsv(path: Path) -> tuple[list[KGEntity], list[KGEdge]]:
    by_key: dict[tuple[str, str], KGEntity] = {}
    edges: list[KGEdge] = []

    def entity_for(name: str, etype: str, role: str, lineno: int) -> int:
        if not name or not etype:
            raise DanglingEndpointError(f"{role} entity is missing a name or type", lineno)
        ent = by_key.get((name, etype))
        if ent is None:
            ent = KGEntity(len(by_key), name, etype)
            by_key[(name, etype)] = ent
        return ent.index

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter="\t")
        _check_header(next(reader, None), TSV_COLUMNS)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(TSV_COLUMNS):
                raise MalformedRowError(f"expected {len(TSV_COLUMNS)} columns, got {len(row)}", lineno)
            hname, htype, rel, tname, ttype = (c.strip() for c in row)
            if not rel:
                raise MalformedRowError("empty relation", lineno)
            h = entity_for(hname, htype, "head", lineno)
            t = entity_for(tname, ttype, "tail", lineno)
            edges.append(KGEdge(h, rel, rel, t))
    return list(by_key.values()), edges


def write_generic_tsv(graph: KnowledgeGraph, dest: str | Path) -> None:
    with Path(dest).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(TSV_COLUMNS)
        for e in graph.edges():
            h, t = graph.entity(e.head), graph.entity(e.tail)
            writer.writerow([h.name, h.entity_type, e.relation, t.name, t.entity_type])


def write_primekg_csv(graph: KnowledgeGraph, dest: str | Path) -> None:
    with Path(dest).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PRIMEKG_COLUMNS)
        for e in graph.edges():
            h, t = graph.entity(e.head), graph.entity(e.tail)
            writer.writerow(
                [e.relation, e.display_relation,
                 h.index, h.source_id, h.entity_type, h.name, h.source_vocab,
                 t.index, t.source_id, t.entity_type, t.name, t.source_vocab]
            )
