"""Prompt templates shipped as editable text files.

Each file has a ``[system]`` and a ``[user]`` section; placeholders use
``$name`` syntax so literal JSON braces need no escaping.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources
from string import Template

from ..llm import GenerationRequest, Profile, Purpose, request


@lru_cache(maxsize=None)
def _load(name: str) -> tuple[str, str]:
    text = resources.files(__package__).joinpath(f"{name}.txt").read_text(encoding="utf-8")
    head, _, user = text.partition("[user]\n")
    system = head.removeprefix("[system]\n")
    if not user:
        raise ValueError(f"prompt {name!r} has no [user] section")
    return system.rstrip("\n"), user.rstrip("\n")


def render(
    name: str,
    purpose: Purpose,
    profile: Profile = "deterministic",
    max_tokens: int = 2048,
    system: str | None = None,
    **values: object,
) -> GenerationRequest:
    """Fill a template; ``system`` replaces the shipped system section when given."""
    default_system, user = _load(name)
    system = default_system if system is None else system.strip()
    vals = {k: ("" if v is None else str(v)) for k, v in values.items()}
    return request(purpose, Template(system).substitute(vals), Template(user).substitute(vals), profile, max_tokens)


def capability_document() -> str:
    return resources.files("deeper").joinpath("assets/capabilities.md").read_text(encoding="utf-8")
