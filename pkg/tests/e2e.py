"""Scripted end-to-end scenarios over the fixture corpus and fixture graph.

A scenario is turned into a rule-based responder, one run is recorded into a
mock script, and the real runs then go through a TOML config that points at
the script, the replay fixtures and the fixture graph.
"""

import re
from dataclasses import dataclass, field
from pathlib import Path

from deeper.config import load_config
from deeper.litclients import FakeClock
from deeper.llm import ScriptRecorder
from deeper.pipeline import build_runtime, execute_pipeline
from deeper.planner import ResearchQuestion
from helpers import FnProvider

DATA = Path(__file__).parent / "data"
KG_PATH = DATA / "kg_fixture.csv"


@dataclass
class Sub:
    text: str
    queries: list = field(default_factory=list)  # [(text, [sources])]
    strategy: str = "direct"
    concepts: list = field(default_factory=list)
    include: object = "all"  # "all" or a set of ids
    fallback_queries: list = field(default_factory=list)
    workers: tuple = ("get_pubmed_abstracts",)


@dataclass
class Scenario:
    name: str
    question: ResearchQuestion
    subs: list
    drop: set = field(default_factory=set)
    bad_citations: bool = False


def _sub_question(req):
    # the first user turn carries the sub-question; reprompts append later turns
    for m in req.messages:
        if m.role == "user":
            found = re.search(r"^Sub-question: (.*)$", m.content, re.MULTILINE)
            return found.group(1).strip() if found else ""
    return ""


def _first_user(req):
    return next(m.content for m in req.messages if m.role == "user")


def _refs(text):
    return re.findall(r"^\[([^\]]+)\]", text, re.MULTILINE)


def responder(sc: Scenario, decompose=True):
    by_text = {s.text: s for s in sc.subs}
    if not decompose:
        # the question itself is the only sub-question
        by_text = {sc.question.text: sc.subs[0]}

    def planning(req):
        u = _first_user(req)
        if '"sub_questions"' in u:
            return {"sub_questions": [{"i": n, "text": s.text, "rank": n, "rationale": "scripted"} for n, s in enumerate(sc.subs, 1)]}
        if '"assignments"' in u:
            lines = re.findall(r"^(\d+)\. (.*)$", u.split("Sub-questions:")[-1] if "Sub-questions:" in u else u, re.MULTILINE)
            out = []
            for i, text in lines:
                s = by_text.get(text.strip(), sc.subs[0])
                workers = list(s.workers)
                if s.strategy == "relational":
                    workers.append("get_shortest_paths")
                out.append({"i": int(i), "communities": [], "workers": workers})
            return {"assignments": out}
        s = by_text[_sub_question(req)]
        if '"strategy"' in u:
            return {"strategy": s.strategy, "reason": "scripted"}
        if '"concepts"' in u:
            return {"concepts": s.concepts, "target_type": None, "via_type": None}
        if '"queries"' in u:
            return {"queries": [{"text": t, "sources": list(src)} for t, src in s.queries]}
        raise KeyError("unrecognized planning prompt")

    def interpretation(req):
        u = _first_user(req)
        if '"labels"' in u:
            s = by_text[_sub_question(req)]
            labels = []
            for ref in _refs(u):
                inc = s.include == "all" or ref in s.include
                labels.append({"source_id": ref, "relevance": "high" if inc else "low", "strength": "moderate",
                               "quality": "moderate", "decision": "include" if inc else "exclude", "reason": "scripted"})
            return {"labels": labels}
        if '"drop"' in u:
            return {"drop": [{"source_id": r, "reason": "conflicts with objectives"} for r in _refs(u) if r in sc.drop]}
        if '"items"' in u:
            return {"items": [{"source_id": r, "note": f"supports the sub-question ({r})"} for r in _refs(u)]}
        raise KeyError("unrecognized interpretation prompt")

    def synthesis(req):
        u = _first_user(req)
        sections, first = [], None
        for block in re.split(r"^Sub-question \d+: ", u, flags=re.MULTILINE)[1:]:
            heading = block.split("\n", 1)[0]
            markers = re.findall(r"cite as (\(PMID: \d+\)|\(NCT\d{8}\))", block)
            claims = [f"Evidence bearing on this point {m}." for m in markers]
            if sc.bad_citations:
                claims = [f"Unsupported statement {n} (PMID: 999999999)." for n in range(3)] + claims[:1]
            if claims:
                first = first or markers[0]
                sections.append({"heading": heading, "claims": claims})
        return {"answer": f"Scripted answer for {sc.name} {first or ''}".strip(), "report": sections}

    def fallback(req):
        s = by_text[_sub_question(req)]
        return {"answer": "Provisional answer.", "claims": ["A provisional claim."], "queries": s.fallback_queries}

    return FnProvider(planning=planning, interpretation=interpretation, synthesis=synthesis, fallback=fallback)


SCENARIOS = [
    Scenario("aspirin-kg", ResearchQuestion("How does aspirin reduce inflammation?", category="basic"), [
        Sub("Which targets link aspirin and inflammation?", [("aspirin AND PTGS2 AND inflammation", ["pubmed"])],
            strategy="relational", concepts=["aspirin", "inflammation"]),
        Sub("What trial evidence exists for aspirin in inflammation?", [("aspirin inflammation", ["pubmed", "trials"])]),
    ]),
    Scenario("mactel-single", ResearchQuestion("What imaging features characterize macular telangiectasia type 2?", category="clinical"), [
        Sub("Which imaging findings are reported in macular telangiectasia?", [("macular telangiectasia imaging", ["pubmed"])]),
    ]),
    Scenario("mactel-two", ResearchQuestion("What are the earliest detectable signs of macular telangiectasia type 2?", category="clinical"), [
        Sub("Which imaging findings are reported in macular telangiectasia?", [("macular telangiectasia imaging", ["pubmed"])]),
        Sub("Which features appear earliest?", [("macular telangiectasia early features", ["pubmed"])], include={"33024250"}),
    ]),
    Scenario("nsclc-trials", ResearchQuestion("What is the evidence for pembrolizumab in NSCLC?", category="translational"), [
        Sub("Which trials tested pembrolizumab in NSCLC?", [("NSCLC pembrolizumab", ["pubmed", "trials"])],
            workers=("get_pubmed_abstracts", "get_clinical_trials")),
    ]),
    Scenario("aspirin-direct", ResearchQuestion("Does low-dose aspirin lower inflammatory markers?", category="clinical"), [
        Sub("What do randomized studies of aspirin show for inflammation markers?", [("aspirin AND inflammation", ["pubmed", "trials"])]),
    ]),
    Scenario("fallback-retained", ResearchQuestion("Is there any evidence on an obscure aspirin effect?", category="basic"), [
        Sub("What does the literature say about qwxzzy flurbo?", [("qwxzzy flurbo", ["pubmed"])], fallback_queries=["aspirin inflammation"],
            include={"30100001"}),
        Sub("How does PTGS2 relate to inflammation?", [("PTGS2 inflammation", ["pubmed"])]),
    ]),
    Scenario("ptgs2", ResearchQuestion("What role does PTGS2 play in inflammation?", category="basic"), [
        Sub("How does PTGS2 relate to inflammation?", [("PTGS2 inflammation", ["pubmed"])], include={"31200002"}),
    ]),
    Scenario("mixed-three", ResearchQuestion("Summarize evidence across three unrelated topics.", category="translational"), [
        Sub("Which imaging findings are reported in macular telangiectasia?", [("macular telangiectasia imaging", ["pubmed"])]),
        Sub("Which trials tested pembrolizumab in NSCLC?", [("NSCLC pembrolizumab", ["pubmed", "trials"])]),
        Sub("What is aspirin?", [("Aspirin", ["wikipedia"]), ("aspirin inflammation", ["pubmed"])]),
    ]),
    Scenario("constrained", ResearchQuestion.from_dict({
        "text": "Which recent aspirin studies address inflammation?", "category": "clinical",
        "constraints": {"objectives": "Only studies published after 2015.", "preference": "peer-reviewed articles"},
    }), [
        Sub("Which aspirin studies address inflammation?", [("aspirin AND inflammation", ["pubmed"])]),
    ], drop={"19923859"}),
    Scenario("mactel-early", ResearchQuestion("Which early retinal changes precede vascular signs in macular telangiectasia?", category="clinical"), [
        Sub("Which features appear earliest?", [("macular telangiectasia early features", ["pubmed"])]),
        Sub("Which imaging findings are reported in macular telangiectasia?", [("macular telangiectasia imaging", ["pubmed"])],
            include={"32804830", "21642620"}),
    ]),
]

BAD = Scenario("bad-citations", ResearchQuestion("What imaging features characterize macular telangiectasia type 2?"), [
    Sub("Which imaging findings are reported in macular telangiectasia?", [("macular telangiectasia imaging", ["pubmed"])]),
], bad_citations=True)


def write_config(path, script, fixture_dir, runs_dir, *, transport="replay", decompose=True, use_kg=True, extra="", providers=""):
    path = Path(path)
    path.write_text(
        f"""[pipeline]
offline = true
decompose = {str(decompose).lower()}
use_kg = {str(use_kg).lower()}
parallelism = 4
kg_path = "{KG_PATH}"
runs_dir = "{runs_dir}"
{extra}
[clients]
transport = "{transport}"
fixture_dir = "{fixture_dir}"

[providers.planning]
kind = "mock"
script = "{script}"

[providers.interpretation]
kind = "mock"
script = "{script}"

[providers.synthesis]
kind = "mock"
script = "{script}"
{providers}""",
        encoding="utf-8",
    )
    return path


def record_script(sc, workdir, fixture_dir, decompose=True, use_kg=True, transport="replay"):
    """Drive one run with the rule-based responder and save what it answered."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    script = workdir / f"{sc.name}.json"
    cfg_path = write_config(workdir / "record.toml", script, fixture_dir, workdir / "record-runs",
                            transport=transport, decompose=decompose, use_kg=use_kg)
    script.write_text('{"entries": []}', encoding="utf-8")
    cfg = load_config(cfg_path)
    rec = ScriptRecorder(responder(sc, decompose))
    runtime = build_runtime(cfg, clock=FakeClock(), providers={"planning": rec, "interpretation": rec, "synthesis": rec})
    record = execute_pipeline(sc.question, cfg, runtime)
    rec.dump(script)
    return script, record


def scripted_run(sc, workdir, fixture_dir, decompose=True, use_kg=True, transport="replay", script=None):
    """Record (unless a script is given) and then run purely from config."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    if script is None:
        script, _ = record_script(sc, workdir / "rec", fixture_dir, decompose, use_kg, transport)
    cfg = load_config(write_config(workdir / "run.toml", script, fixture_dir, workdir / "runs",
                                   transport=transport, decompose=decompose, use_kg=use_kg))
    return execute_pipeline(sc.question, cfg, build_runtime(cfg, clock=FakeClock())), cfg
