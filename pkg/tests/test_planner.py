import json

import pytest

from deeper import prompts
from deeper.llm import UnregisteredDigestError
from deeper.planner import (
    WORKERS,
    AgentAssignment,
    PlanningError,
    ResearchPlan,
    ResearchQuestion,
    SubQuestion,
    Toggles,
    UnknownWorkerError,
    assign_agents,
    build_plan,
    decompose_question,
)
from helpers import FnProvider, scripted

Q = ResearchQuestion("Does aspirin affect inflammation?", id="q1", category="clinical")


def decompose_req(q=Q, k_max=6):
    return prompts.render(
        "decompose", "planning", question=q.text, background=q.background or "none",
        objectives=q.constraints.objectives or "none", k_max=k_max,
    )


THREE = {"sub_questions": [
    {"i": 1, "text": "What is aspirin?", "rank": 1, "rationale": "core concept"},
    {"i": 2, "text": "What is inflammation?", "rank": 1, "rationale": "core concept"},
    {"i": 3, "text": "How does aspirin act on inflammation?", "rank": 2, "rationale": "relation"},
]}


def test_thirteen_workers_registered():
    assert len(WORKERS) == 13
    doc = prompts.capability_document()
    assert all(w in doc for w in WORKERS)


def test_decompose_with_scripted_mock():
    mock = scripted((decompose_req(), THREE))
    subs = decompose_question(Q, mock)
    assert [s.i for s in subs] == [1, 2, 3]
    ranks = [s.rank for s in subs]
    assert ranks == sorted(ranks)


def test_decompose_off_skips_model():
    provider = FnProvider()
    (only,) = decompose_question(Q, provider, decompose=False)
    assert (only.i, only.text, only.rank) == (1, Q.text, 1)
    assert provider.calls == []


def test_gap_in_indices_is_rejected():
    gap = {"sub_questions": [{"i": 1, "text": "a", "rank": 1}, {"i": 3, "text": "b", "rank": 2}]}
    provider = FnProvider(planning=lambda r: gap)
    with pytest.raises(PlanningError, match="contiguous"):
        decompose_question(Q, provider)
    assert len(provider.calls) == 2  # one reprompt


def test_gap_with_strict_mock_stops_at_reprompt():
    gap = {"sub_questions": [{"i": 1, "text": "a", "rank": 1}, {"i": 3, "text": "b", "rank": 2}]}
    with pytest.raises(UnregisteredDigestError):
        decompose_question(Q, scripted((decompose_req(), gap)))


def test_rank_violations_are_resorted_stably():
    out = {"sub_questions": [
        {"i": 1, "text": "deep", "rank": 3},
        {"i": 2, "text": "basic a", "rank": 1},
        {"i": 3, "text": "mid", "rank": 2},
        {"i": 4, "text": "basic b", "rank": 1},
    ]}
    subs = decompose_question(Q, FnProvider(planning=lambda r: out))
    assert [s.text for s in subs] == ["basic a", "basic b", "mid", "deep"]
    assert [s.i for s in subs] == [1, 2, 3, 4]


def test_too_many_sub_questions():
    out = {"sub_questions": [{"i": i, "text": f"s{i}", "rank": 1} for i in range(1, 5)]}
    with pytest.raises(PlanningError):
        decompose_question(Q, FnProvider(planning=lambda r: out), k_max=3)


def assign_handler(mapping):
    def handle(req):
        return {"assignments": [{"i": i, **v} for i, v in mapping.items()]}
    return handle


def test_assign_agents_validates():
    subs = [SubQuestion(1, "How does aspirin act on inflammation?")]
    provider = FnProvider(planning=assign_handler({1: {"communities": ["query-expansion", "evidence-retrieval"], "workers": ["get_shortest_paths"]}}))
    (a,) = assign_agents(subs, provider)
    assert a.communities == ("query-expansion", "evidence-retrieval")
    assert a.uses_kg


def test_assign_agents_scripted_mock():
    subs = [SubQuestion(1, "How does aspirin act on inflammation?")]
    req = prompts.render("assign", "planning", capabilities=prompts.capability_document(), sub_questions="1. How does aspirin act on inflammation?")
    mock = scripted((req, {"assignments": [{"i": 1, "communities": ["query-expansion", "evidence-retrieval"], "workers": []}]}))
    (a,) = assign_agents(subs, mock)
    assert set(a.communities) == {"query-expansion", "evidence-retrieval"}


def test_unknown_worker_after_reprompt():
    subs = [SubQuestion(1, "x")]
    provider = FnProvider(planning=assign_handler({1: {"communities": ["evidence-retrieval"], "workers": ["get_magic"]}}))
    with pytest.raises(UnknownWorkerError) as err:
        assign_agents(subs, provider)
    assert err.value.names == ["get_magic"]
    assert len(provider.calls) == 2


def test_use_kg_off_strips_query_expansion():
    subs = [SubQuestion(1, "a"), SubQuestion(2, "b")]
    provider = FnProvider(planning=assign_handler({
        1: {"communities": ["query-expansion"], "workers": ["get_shortest_paths"]},
        2: {"communities": ["query-expansion", "evidence-retrieval"], "workers": ["get_pubmed_abstracts"]},
    }))
    out = assign_agents(subs, provider, use_kg=False)
    assert all("query-expansion" not in a.communities for a in out)
    assert out[0].communities == ("evidence-retrieval",)
    assert out[0].workers == ()


def test_capability_doc_must_cover_registry():
    with pytest.raises(PlanningError):
        assign_agents([SubQuestion(1, "a")], FnProvider(), capability_doc="get_pubmed_abstracts only")


def test_missing_assignment_is_error():
    provider = FnProvider(planning=assign_handler({1: {"communities": ["evidence-retrieval"]}}))
    with pytest.raises(PlanningError):
        assign_agents([SubQuestion(1, "a"), SubQuestion(2, "b")], provider)


def full_provider():
    return FnProvider(planning=lambda r: THREE if "sub_questions\": [{\"i\"" in r.messages[-1].content and "Research question" in r.messages[-1].content
                      else assign_handler({i: {"communities": ["evidence-retrieval"]} for i in (1, 2, 3)})(r))


def test_plan_round_trip():
    q = ResearchQuestion("Q?", background="bg", category="basic")
    plan = build_plan(q, full_provider())
    text = plan.to_json()
    again = ResearchPlan.from_dict(json.loads(text))
    assert again == plan
    assert again.to_json() == text


def test_plan_without_decomposition():
    plan = build_plan(Q, full_provider(), toggles=Toggles(decompose=False))
    assert len(plan.sub_questions) == 1 and plan.sub_questions[0].text == Q.text


def test_plan_invariants():
    with pytest.raises(ValueError):
        ResearchPlan(Q, (SubQuestion(1, "a", 2), SubQuestion(2, "b", 1)),
                     (AgentAssignment(1, ("evidence-retrieval",)), AgentAssignment(2, ("evidence-retrieval",))))
    with pytest.raises(ValueError):
        ResearchPlan(Q, (SubQuestion(1, "not the question"),), (AgentAssignment(1, ("evidence-retrieval",)),), Toggles(decompose=False))
    with pytest.raises(ValueError):
        ResearchQuestion("")
    with pytest.raises(ValueError):
        ResearchQuestion("x", category="other")
