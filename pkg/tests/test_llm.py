import json

import pytest

from deeper.litclients import FakeClock, HttpResponse, TransportError
from deeper.llm import (
    AuditingProvider,
    EmbeddingProtocolError,
    GenerationRequest,
    HttpChatProvider,
    HttpEmbeddingProvider,
    Message,
    MockScriptError,
    ProviderError,
    ScriptedMock,
    ScriptRecorder,
    StructuredOutputError,
    TokenLimitError,
    UnregisteredDigestError,
    chat_complete,
    complete_json,
    embed_text,
    extract_json,
    prompt_digest,
    request,
)


def planning_request(text="decompose this"):
    return request("planning", "You plan research.", text)


def test_mock_returns_canned_and_is_deterministic():
    req = planning_request()
    mock = ScriptedMock().register_script([{"purpose": "planning", "messages": [m.__dict__ for m in req.messages], "completion": "canned"}])
    assert chat_complete(req, mock) == "canned"
    assert chat_complete(req, mock) == chat_complete(req, mock)


def test_digest_ignores_cosmetic_whitespace_only():
    a = request("planning", "sys", "hello   world\n")
    b = request("planning", "sys", " hello world")
    c = request("planning", "sys", "hello world!")
    assert a.digest() == b.digest() != c.digest()


def test_purpose_is_part_of_the_key():
    req = planning_request()
    mock = ScriptedMock().register_script([{"purpose": "planning", "digest": req.digest(), "completion": "x"}])
    other = GenerationRequest(req.messages, "judge")
    with pytest.raises(UnregisteredDigestError):
        mock.complete(other)


def test_unregistered_digest_is_hard_error():
    with pytest.raises(UnregisteredDigestError):
        chat_complete(planning_request("nothing registered"), ScriptedMock())


def test_conflicting_registration():
    req = planning_request()
    mock = ScriptedMock().register_script([{"purpose": "planning", "digest": req.digest(), "completion": "a"}])
    mock.register_script([{"purpose": "planning", "digest": req.digest(), "completion": "a"}])
    with pytest.raises(MockScriptError):
        mock.register_script([{"purpose": "planning", "digest": req.digest(), "completion": "b"}])
    with pytest.raises(MockScriptError):
        mock.register_script([{"purpose": "planning", "digest": "xyz", "completion": "b"}])
    with pytest.raises(MockScriptError):
        mock.register_script([{"purpose": "nope", "digest": req.digest(), "completion": "b"}])


def test_embedding_mock():
    mock = ScriptedMock().register_script([{"text": "aspirin", "vector": [0.5] * 768}])
    assert embed_text("aspirin", mock) == [0.5] * 768
    assert embed_text("aspirin", mock) == embed_text("aspirin", mock)
    with pytest.raises(UnregisteredDigestError):
        embed_text("ibuprofen", mock)
    with pytest.raises(ValueError):
        embed_text("", mock)


def test_embedding_dimension_mismatch():
    mock = ScriptedMock(dimension=768).register_script([{"text": "short", "vector": [0.1] * 512}])
    with pytest.raises(EmbeddingProtocolError):
        embed_text("short", mock)
    mock.register_script([{"text": "nan", "vector": [float("nan")] * 768}])
    with pytest.raises(EmbeddingProtocolError):
        embed_text("nan", mock)


def test_request_validation():
    with pytest.raises(ValueError):
        GenerationRequest((), "planning")
    with pytest.raises(ValueError):
        GenerationRequest((Message("user", "x"),), "chatting")
    assert planning_request().temperature == 0.0
    assert request("synthesis", "s", "u", profile="provider-default").temperature is None


@pytest.mark.parametrize(
    "text,expected",
    [
        ('{"a": 1}', {"a": 1}),
        ('Sure! Here it is:\n```json\n{"a": {"b": [1, 2]}}\n```', {"a": {"b": [1, 2]}}),
        ('prefix {not json} then {"ok": true} and {"later": 1}', {"ok": True}),
        ('text with "braces }" first {"s": "x}y"}', {"s": "x}y"}),
    ],
)
def test_extract_json(text, expected):
    assert extract_json(text) == expected


def test_extract_json_failure():
    with pytest.raises(StructuredOutputError):
        extract_json("no object here [1, 2]")


def test_complete_json_reprompts_once():
    req = planning_request()
    mock = ScriptedMock()
    mock.register_script([{"purpose": "planning", "digest": req.digest(), "completion": "I cannot comply"}])
    reprompt = req.followed_by(
        Message("assistant", "I cannot comply"),
        Message("user", "Your previous reply could not be used (no JSON object found in completion). Reply again with only one valid JSON object in the requested format."),
    )
    mock.register_script([{"purpose": "planning", "digest": reprompt.digest(), "completion": '{"ok": 1}'}])
    assert complete_json(req, mock) == {"ok": 1}


def test_complete_json_gives_up_after_second_failure():
    req = planning_request()
    rec = ScriptRecorder(_Echo("garbage"))
    with pytest.raises(StructuredOutputError):
        complete_json(req, rec)
    assert len(rec.entries) == 2


class _Echo:
    name = "echo"
    live = False

    def __init__(self, text):
        self.text = text

    def complete(self, request):
        return self.text


def test_recorder_round_trip(tmp_path):
    rec = ScriptRecorder(_Echo('{"x": 1}'))
    req = planning_request()
    rec.complete(req)
    rec.dump(tmp_path / "script.json")
    mock = ScriptedMock.from_file(tmp_path / "script.json")
    assert mock.complete(req) == '{"x": 1}'


def test_auditing_provider_logs_every_call():
    req = planning_request()
    audit = AuditingProvider(_Echo("hi"))
    chat_complete(req, audit)
    assert audit.log == [("planning", req.digest())]


class _Scripted:
    def __init__(self, *outcomes):
        self.outcomes = list(outcomes)
        self.sent = []

    def send(self, req):
        self.sent.append(req)
        out = self.outcomes.pop(0)
        if isinstance(out, Exception):
            raise out
        return out


def test_http_chat_provider(monkeypatch):
    monkeypatch.setenv("DEEPER_LLM_API_KEY", "sekrit")
    body = {"choices": [{"message": {"content": "hello"}, "finish_reason": "stop"}]}
    t = _Scripted(TransportError("x"), HttpResponse(200, json.dumps(body)))
    p = HttpChatProvider("planning", "https://llm.invalid/v1/chat/completions", "m", t, "DEEPER_LLM_API_KEY", clock=FakeClock())
    assert chat_complete(planning_request(), p) == "hello"
    sent = t.sent[-1]
    assert sent.body["temperature"] == 0.0 and sent.body["messages"][0]["role"] == "system"
    assert dict(sent.headers)["Authorization"] == "Bearer sekrit"
    assert "sekrit" not in json.dumps(sent.canonical())


def test_http_chat_provider_errors():
    trunc = {"choices": [{"message": {"content": "par"}, "finish_reason": "length"}]}
    p = HttpChatProvider("s", "https://llm.invalid", "m", _Scripted(HttpResponse(200, json.dumps(trunc))), clock=FakeClock())
    with pytest.raises(TokenLimitError):
        p.complete(planning_request())
    p = HttpChatProvider("s", "https://llm.invalid", "m", _Scripted(*[HttpResponse(503, "")] * 3), clock=FakeClock())
    with pytest.raises(ProviderError):
        p.complete(planning_request())


def test_http_embedding_provider():
    data = {"data": [{"embedding": [0.0] * 512}]}
    p = HttpEmbeddingProvider("emb", "https://emb.invalid", "m", _Scripted(HttpResponse(200, json.dumps(data))), dimension=768, clock=FakeClock())
    with pytest.raises(EmbeddingProtocolError):
        embed_text("x", p)


def test_prompt_digest_stable_value():
    msgs = (Message("user", "a  b"),)
    assert prompt_digest(msgs) == prompt_digest((Message("user", "a b"),))
