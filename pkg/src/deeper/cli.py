"""Command-line interface: ``deeper ask|plan|kg|eval|bench|verify-refs|serve``."""

from __future__ import annotations

import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import click
import jsonschema

from . import evalkit
from .config import ConfigError, EngineConfig, load_config
from .kgstore import GraphError, KGEntity, KnowledgeGraph, load_graph
from .litclients import EvidenceItem
from .pipeline import Runtime, build_runtime, execute_pipeline, plan_only
from .planner import CATEGORIES, PlanningError, ResearchQuestion
from .synthesis import AnswerBundle, BenchmarkSchemaError, load_benchmark, verify_bundle

# -- eval input formats ------------------------------------------------------------

VECTORS_SCHEMA = {
    "type": "object",
    "oneOf": [
        {"required": ["vectors"]},
        {"required": ["probabilities"]},
    ],
    "properties": {
        "vectors": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "array", "minItems": 1, "items": {"type": "number"}},
        },
        "probabilities": {"type": "array", "minItems": 2, "items": {"type": "number", "minimum": 0}},
    },
}
ITEM_SCHEMA = {
    "type": "object",
    "required": ["kind", "source_id", "title"],
    "properties": {"kind": {"type": "string"}, "source_id": {"type": "string"}, "title": {"type": "string"}},
}
ITEMS_SCHEMA = {
    "type": "object",
    "required": ["items"],
    "properties": {
        "items": {
            "type": "array",
            "items": {"anyOf": [ITEM_SCHEMA, {"type": "object", "required": ["item"], "properties": {"item": ITEM_SCHEMA}}]},
        }
    },
}
NUGGETS_SCHEMA = {"type": "array", "minItems": 1, "items": {"type": "string", "minLength": 1}}


class InputSchemaError(click.ClickException):
    exit_code = 2


def _json_path(err: jsonschema.ValidationError) -> str:
    out = "$"
    for p in err.absolute_path:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def read_input(path: str | Path, schema: dict[str, Any]) -> Any:
    """Load a JSON input file and check it; errors name the offending field."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputSchemaError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputSchemaError(f"{path}: not JSON ({exc})") from exc
    err = jsonschema.exceptions.best_match(jsonschema.Draft202012Validator(schema).iter_errors(data))
    if err is not None:
        raise InputSchemaError(f"{path}: schema mismatch at {_json_path(err)}: {err.message}")
    return data


def _dist(data: dict[str, Any], k: int) -> evalkit.HistogramDist:
    if "probabilities" in data:
        return evalkit.HistogramDist.from_probabilities(data["probabilities"])
    return evalkit.component_histogram(data["vectors"], k)


def _items(data: dict[str, Any]) -> list[EvidenceItem]:
    return [EvidenceItem.from_dict(x["item"] if "item" in x else x) for x in data["items"]]


# -- shared state -------------------------------------------------------------------


@dataclass
class Settings:
    config_path: str | None
    offline: bool
    no_decompose: bool
    no_kg: bool
    out: str | None
    _config: EngineConfig | None = None
    _runtime: Runtime | None = None

    def config(self) -> EngineConfig:
        if self._config is None:
            try:
                cfg = load_config(self.config_path)
                overrides: dict[str, Any] = {}
                if self.offline:
                    overrides["offline"] = True
                if self.no_decompose:
                    overrides["decompose"] = False
                if self.no_kg:
                    overrides["use_kg"] = False
                if self.out:
                    overrides["runs_dir"] = Path(self.out)
                self._config = cfg.with_overrides(**overrides) if overrides else cfg
            except ConfigError as exc:
                raise click.ClickException(f"configuration error: {exc}") from exc
        return self._config

    def runtime(self) -> Runtime:
        if self._runtime is None:
            self._runtime = build_runtime(self.config())
        return self._runtime

    def out_dir(self) -> Path:
        return Path(self.out) if self.out else Path(".")


def _echo_json(data: Any) -> None:
    click.echo(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False))


def _question(text: str | None, question_file: str | None, background: str, objectives: str, preference: str, category: str) -> ResearchQuestion:
    try:
        if question_file:
            return ResearchQuestion.from_dict(json.loads(Path(question_file).read_text(encoding="utf-8")))
        if not text:
            raise click.UsageError("give a question or --question-file")
        return ResearchQuestion.from_dict({
            "text": text,
            "background": background,
            "category": category,
            "constraints": {"objectives": objectives, "preference": preference},
        })
    except (ValueError, OSError) as exc:
        raise click.UsageError(f"invalid question: {exc}") from exc


def question_options(f):
    f = click.option("--category", type=click.Choice(CATEGORIES), default="uncategorized", show_default=True)(f)
    f = click.option("--preference", default="", help="Evidence inclusion preference.")(f)
    f = click.option("--objectives", default="", help="Research objectives used as constraints.")(f)
    f = click.option("--background", default="", help="Background of the question.")(f)
    f = click.option("--question-file", type=click.Path(exists=True, dir_okay=False), help="JSON question object.")(f)
    return click.argument("text", required=False)(f)


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), envvar="DEEPER_CONFIG", help="TOML configuration file.")
@click.option("--offline", is_flag=True, help="Forbid live transports and providers.")
@click.option("--no-decompose", is_flag=True, help="Answer the question as one sub-question.")
@click.option("--no-kg", is_flag=True, help="Disable knowledge-graph query expansion.")
@click.option("--out", type=click.Path(file_okay=False), help="Run directory root (ask) or metrics directory (eval, bench).")
@click.option("-v", "--verbose", count=True, help="Log more (repeatable).")
@click.pass_context
def main(ctx: click.Context, config_path, offline, no_decompose, no_kg, out, verbose) -> None:
    """Evidence-based answers to biomedical research questions."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = Settings(config_path, offline, no_decompose, no_kg, out)


@main.command()
@question_options
@click.option("--json", "as_json", is_flag=True, help="Print answer.json instead of the text rendering.")
@click.pass_obj
def ask(s: Settings, text, question_file, background, objectives, preference, category, as_json) -> None:
    """Run the full pipeline on one question."""
    q = _question(text, question_file, background, objectives, preference, category)
    record = execute_pipeline(q, s.config(), s.runtime())
    if record.status != "done":
        raise click.ClickException(f"run {record.run_id} failed at stage {record.failed_stage}: {record.error} (artifacts in {record.run_dir})")
    answer = (record.run_dir / "answer.json").read_text(encoding="utf-8")
    click.echo(answer.rstrip("\n") if as_json else AnswerBundle.from_dict(json.loads(answer)).render_text())
    click.echo(f"run {record.run_id}: {record.run_dir}", err=True)


@main.command()
@question_options
@click.pass_obj
def plan(s: Settings, text, question_file, background, objectives, preference, category) -> None:
    """Decompose a question and assign agents, without retrieval."""
    q = _question(text, question_file, background, objectives, preference, category)
    try:
        click.echo(plan_only(q, s.config(), s.runtime()).to_json().rstrip("\n"))
    except (PlanningError, ValueError) as exc:
        raise click.ClickException(f"planning failed: {exc}") from exc


# -- kg ------------------------------------------------------------------------------

KG_OPS = ("normalize", "tails-by-relation", "tails-by-type", "relations", "shortest-paths", "typed-paths", "stats")


def _entity_dict(e: KGEntity) -> dict[str, Any]:
    return {"index": e.index, "name": e.name, "type": e.entity_type}


def _resolve(graph: KnowledgeGraph, name: str) -> KGEntity:
    matches = graph.get_normalized_entity(name)
    if not matches:
        raise click.ClickException(f"no graph entity matches {name!r}")
    return matches[0].entity


@main.command()
@click.argument("op", type=click.Choice(KG_OPS))
@click.argument("args", nargs=-1)
@click.option("--graph", "graph_path", type=click.Path(exists=True, dir_okay=False), help="Graph file (default: pipeline.kg_path).")
@click.option("--format", "fmt", type=click.Choice(("primekg-csv", "tsv")), help="Graph file format.")
@click.option("--max-paths", default=10, show_default=True)
@click.option("--threshold", default=0.5, show_default=True, help="Similarity cut-off for normalize.")
@click.pass_obj
def kg(s: Settings, op, args, graph_path, fmt, max_paths, threshold) -> None:
    """Query the knowledge graph: normalize NAME | tails-by-relation HEAD REL | tails-by-type HEAD TYPE |
    relations HEAD TAIL | shortest-paths HEAD TAIL | typed-paths HEAD TAIL TYPE | stats."""
    arity = {"normalize": 1, "tails-by-relation": 2, "tails-by-type": 2, "relations": 2, "shortest-paths": 2, "typed-paths": 3, "stats": 0}
    if len(args) != arity[op]:
        raise click.UsageError(f"{op} takes {arity[op]} argument(s)")
    path = graph_path or s.config().kg_path
    if not path:
        raise click.UsageError("no graph: pass --graph or set pipeline.kg_path")
    try:
        graph = load_graph(path, fmt or s.config().kg_format)
        if op == "stats":
            out: Any = {"entities": graph.entity_count, "edges": graph.edge_count, "relations": dict(graph.relation_frequency.most_common())}
        elif op == "normalize":
            out = [{"entity": _entity_dict(m.entity), "match": m.match_kind, "score": round(m.score, 6)}
                   for m in graph.get_normalized_entity(args[0], threshold)]
        elif op == "tails-by-relation":
            out = [_entity_dict(e) for e in graph.get_tail_entity_by_relation(_resolve(graph, args[0]), args[1])]
        elif op == "tails-by-type":
            out = [_entity_dict(e) for e in graph.get_tail_entity_by_type(_resolve(graph, args[0]), args[1])]
        elif op == "relations":
            out = graph.get_relation_type(_resolve(graph, args[0]), _resolve(graph, args[1]))
        else:
            head, tail = _resolve(graph, args[0]), _resolve(graph, args[1])
            paths = (graph.get_shortest_paths(head, tail, max_paths) if op == "shortest-paths"
                     else graph.get_shortest_path_by_entity_type(head, tail, args[2], max_paths))
            out = [{"nodes": [n.name for n in p.nodes], "relations": list(p.relations), "hops": len(p)} for p in paths]
    except (GraphError, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc
    _echo_json(out)


# -- eval ------------------------------------------------------------------------------


@main.group("eval")
def eval_group() -> None:
    """Compute evaluation metrics; writes metrics.json and prints it."""


def _emit(s: Settings, reports: list[evalkit.MetricReport]) -> None:
    path = evalkit.write_metrics(reports, s.out_dir() / "metrics.json")
    click.echo(path.read_text(encoding="utf-8").rstrip("\n"))


def _guard(fn, *args: Any, **kwargs: Any) -> Any:
    try:
        return fn(*args, **kwargs)
    except (ValueError, evalkit.EvalError) as exc:
        raise click.ClickException(str(exc)) from exc


@eval_group.command("accuracy")
@click.option("--correct", type=int, required=True)
@click.option("--total", type=int, required=True)
@click.pass_obj
def eval_accuracy(s: Settings, correct, total) -> None:
    value = _guard(evalkit.accuracy, correct, total)
    _emit(s, [evalkit.MetricReport("accuracy", value, evalkit.inputs_digest(correct, total), {"correct": correct, "total": total})])


@eval_group.command("entropy")
@click.argument("files", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--k", default=evalkit.DEFAULT_BINS, show_default=True, help="Histogram bins.")
@click.pass_obj
def eval_entropy(s: Settings, files, k) -> None:
    """Entropy of each file: {"vectors": [[...]]} or {"probabilities": [...]}."""
    reports = []
    for f in files:
        data = read_input(f, VECTORS_SCHEMA)
        dist = _guard(_dist, data, k)
        mode = "probabilities" if "probabilities" in data else ("per-set" if len(data["vectors"]) > 1 else "per-document")
        params = evalkit.histogram_parameters(dist.k, pooling=mode) | {"file": str(f)}
        reports.append(evalkit.MetricReport("entropy", evalkit.shannon_entropy(dist), evalkit.inputs_digest(data), params))
    _emit(s, reports)


@eval_group.command("jsd")
@click.argument("file_a", type=click.Path(exists=True, dir_okay=False))
@click.argument("file_b", type=click.Path(exists=True, dir_okay=False))
@click.option("--k", default=evalkit.DEFAULT_BINS, show_default=True, help="Histogram bins.")
@click.pass_obj
def eval_jsd(s: Settings, file_a, file_b, k) -> None:
    """Jensen-Shannon distance; vector files share one pooled range."""
    a, b = read_input(file_a, VECTORS_SCHEMA), read_input(file_b, VECTORS_SCHEMA)
    if ("vectors" in a) != ("vectors" in b):
        raise InputSchemaError("both files must hold vectors or both probabilities")
    if "vectors" in a:
        p, q = _guard(evalkit.shared_histograms, a["vectors"], b["vectors"], k)
    else:
        p, q = _dist(a, k), _dist(b, k)
    value = _guard(evalkit.jensen_shannon_distance, p, q)
    params = evalkit.histogram_parameters(p.k, range="shared") | {"files": [str(file_a), str(file_b)]}
    _emit(s, [evalkit.MetricReport("jsd", value, evalkit.inputs_digest(a, b), params)])


@eval_group.command("similarity")
@click.argument("retrieved", type=click.Path(exists=True, dir_okay=False))
@click.argument("reference", type=click.Path(exists=True, dir_okay=False))
@click.option("--embeddings-csv", type=click.Path(dir_okay=False), help="Also write the item vectors.")
@click.pass_obj
def eval_similarity(s: Settings, retrieved, reference, embeddings_csv) -> None:
    """Cosine similarity of mean item embeddings ({"items": [...]}, e.g. evidence/sq-1.json)."""
    embedder = s.runtime().provider("embedding")
    if embedder is None:
        raise click.ClickException("similarity needs an embedding provider (providers.embedding)")
    a, b = _items(read_input(retrieved, ITEMS_SCHEMA)), _items(read_input(reference, ITEMS_SCHEMA))
    value = _guard(evalkit.set_similarity, a, b, embedder)
    if embeddings_csv:
        both = a + b
        evalkit.write_embeddings_csv([f"{it.kind}:{it.source_id}" for it in both], evalkit.embed_items(both, embedder), embeddings_csv)
    _emit(s, [evalkit.MetricReport("similarity", value, evalkit.inputs_digest(a, b), {"embedder": getattr(embedder, "name", "?")})])


def _answer_ids(path: str) -> list[str]:
    return [r.source_id for r in AnswerBundle.from_dict(json.loads(Path(path).read_text(encoding="utf-8"))).references]


def _split(values: tuple[str, ...]) -> list[str]:
    return [v.strip() for raw in values for v in raw.split(",") if v.strip()]


@eval_group.command("coverage")
@click.option("--cited", multiple=True, help="Cited ids (repeatable or comma-separated).")
@click.option("--answer", type=click.Path(exists=True, dir_okay=False), help="Take cited ids from an answer.json.")
@click.option("--truth", multiple=True, required=True, help="Ground-truth ids (repeatable or comma-separated).")
@click.pass_obj
def eval_coverage(s: Settings, cited, answer, truth) -> None:
    ids = _split(cited) + (_answer_ids(answer) if answer else [])
    truth_ids = _split(truth)
    value = _guard(evalkit.source_coverage, ids, truth_ids)
    _emit(s, [evalkit.MetricReport("coverage", value, evalkit.inputs_digest(sorted(set(ids)), sorted(set(truth_ids))),
                                   {"cited": len(set(ids)), "truth": len(set(truth_ids))})])


@eval_group.command("nuggets")
@click.option("--answer", type=click.Path(exists=True, dir_okay=False), required=True, help="answer.json or a plain text file.")
@click.option("--nuggets", "nuggets_file", type=click.Path(exists=True, dir_okay=False), required=True, help="JSON list of nuggets.")
@click.pass_obj
def eval_nuggets(s: Settings, answer, nuggets_file) -> None:
    judge = s.runtime().provider("judge")
    if judge is None:
        raise click.ClickException("nugget coverage needs a judge provider (providers.judge)")
    raw = Path(answer).read_text(encoding="utf-8")
    try:
        text = AnswerBundle.from_dict(json.loads(raw)).render_text()
    except (json.JSONDecodeError, KeyError, TypeError, ValueError):
        text = raw
    nuggets = read_input(nuggets_file, NUGGETS_SCHEMA)
    r = _guard(evalkit.nugget_coverage, text, nuggets, judge)
    value = r.matched / r.total
    _emit(s, [evalkit.MetricReport("nuggets", value, evalkit.inputs_digest(text, nuggets),
                                   {"matched": r.matched, "total": r.total, "undecided": list(r.undecided)})])


@eval_group.command("years")
@click.argument("files", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--current-year", type=int, help="Defaults to the clock's year.")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), help="Also write year,count rows.")
@click.pass_obj
def eval_years(s: Settings, files, current_year, csv_path) -> None:
    """Publication-year distribution of evidence items ({"items": [...]})."""
    from .litclients import SystemClock

    year = current_year or SystemClock().now().year
    items = [it for f in files for it in _items(read_input(f, ITEMS_SCHEMA))]
    dist = evalkit.year_distribution(items, year)
    if csv_path:
        evalkit.write_year_csv(dist, csv_path)
    params = {"current_year": year, "counts": {str(k): v for k, v in sorted(dist.counts.items())}, "unknown": dist.unknown}
    _emit(s, [evalkit.MetricReport("recent_share", dist.recent_share, evalkit.inputs_digest(items), params)])


# -- bench ----------------------------------------------------------------------------


@main.group()
def bench() -> None:
    """Benchmark files: validate or run."""


@bench.command("load")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
def bench_load(path) -> None:
    """Validate a benchmark file and print a summary."""
    try:
        entries = load_benchmark(path)
    except BenchmarkSchemaError as exc:
        raise InputSchemaError(str(exc)) from exc
    _echo_json([{"id": e.id, "category": e.category, "references": [r.source_id for r in e.references]} for e in entries])


@bench.command("run")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@click.option("--limit", type=int, help="Only the first N entries.")
@click.pass_obj
def bench_run(s: Settings, path, limit) -> None:
    """Answer every entry; judge against the reference answer and score source coverage."""
    try:
        entries = load_benchmark(path)[:limit]
    except BenchmarkSchemaError as exc:
        raise InputSchemaError(str(exc)) from exc
    judge = s.runtime().provider("judge")
    rows, consistent, judged, coverages = [], 0, 0, []
    for e in entries:
        q = ResearchQuestion(e.question, id=e.id, category=e.category)
        record = execute_pipeline(q, s.config(), s.runtime())
        row: dict[str, Any] = {"id": e.id, "run_id": record.run_id, "status": record.status, "verdict": "", "coverage": ""}
        if record.status == "done":
            bundle = AnswerBundle.from_dict(json.loads((record.run_dir / "answer.json").read_text(encoding="utf-8")))
            if judge is not None and e.reference_answer.strip():
                try:
                    row["verdict"] = evalkit.judge_open_ended(bundle.answer, e.reference_answer, judge)
                    judged += 1
                    consistent += row["verdict"] == "consistent"
                except evalkit.JudgeError as exc:
                    row["verdict"] = f"undecided: {exc}"
            if e.references:
                row["coverage"] = evalkit.source_coverage([r.source_id for r in bundle.references], [r.source_id for r in e.references])
                coverages.append(row["coverage"])
        rows.append(row)
    out = s.out_dir()
    evalkit.write_metric_rows_csv(rows, out / "bench.csv")
    digest = evalkit.inputs_digest([e.to_dict() for e in entries])
    reports = [evalkit.MetricReport("completed", sum(r["status"] == "done" for r in rows), digest, {"entries": len(rows)})]
    if judged:
        reports.append(evalkit.MetricReport("accuracy", evalkit.accuracy(consistent, judged), digest, {"correct": consistent, "total": judged}))
    if coverages:
        reports.append(evalkit.MetricReport("coverage", sum(coverages) / len(coverages), digest, {"entries": len(coverages)}))
    _emit(s, reports)


# -- verify-refs / serve -------------------------------------------------------------


@main.command("verify-refs")
@click.argument("answer", type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
def verify_refs(s: Settings, answer) -> None:
    """Re-resolve every reference of an answer.json against its source database."""
    try:
        bundle = AnswerBundle.from_dict(json.loads(Path(answer).read_text(encoding="utf-8")))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise InputSchemaError(f"{answer}: not an answer bundle ({exc})") from exc
    checked = verify_bundle(bundle, s.runtime().clients)
    _echo_json([{"source_id": r.source_id, "resolved": r.resolved} for r in checked.references])
    missing = [r.source_id for r in checked.references if not r.resolved]
    if missing:
        raise click.ClickException(f"unresolved references: {', '.join(missing)}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.pass_obj
def serve(s: Settings, host, port) -> None:
    """Start the HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(s.config(), s.runtime()), host=host, port=port)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
