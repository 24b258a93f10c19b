"""Test doubles for chat providers."""

import json

from deeper.llm import ScriptedMock


class FnProvider:
    """Answers each purpose with a python callable; raises KeyError for unhandled purposes."""

    live = False

    def __init__(self, name="fn", dimension=768, **handlers):
        self.name = name
        self.dimension = dimension
        self.handlers = handlers
        self.calls = []

    def complete(self, request):
        self.calls.append(request)
        out = self.handlers[request.purpose](request)
        return out if isinstance(out, str) else json.dumps(out)


def scripted(*pairs):
    """ScriptedMock from (request, completion) pairs."""
    mock = ScriptedMock()
    mock.register_script(
        {"purpose": req.purpose, "digest": req.digest(), "completion": out if isinstance(out, str) else json.dumps(out)}
        for req, out in pairs
    )
    return mock


def user_text(request):
    return request.messages[-1].content if request.messages[-1].role == "user" else ""


def item_refs(request):
    """Item references listed in an appraisal prompt, in order."""
    import re

    return re.findall(r"^\[([^\]]+)\]", user_text(request), re.MULTILINE)


def appraiser(include=(), default="exclude"):
    """Appraisal handler that includes the given ids (or all when default='include')."""

    def handle(request):
        labels = []
        for ref in item_refs(request):
            inc = ref in include or default == "include"
            labels.append({
                "source_id": ref,
                "relevance": "high" if inc else "low",
                "strength": "moderate",
                "quality": "moderate",
                "decision": "include" if inc else "exclude",
                "reason": "scripted",
            })
        return {"labels": labels}

    return handle
