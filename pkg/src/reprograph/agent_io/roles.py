"""Agent roles, prompt templates, and deterministic prompt rendering.

Each role binds exactly one prompt template (shipped as a text asset with
``---SYSTEM_PROMPT---`` / ``---USER_PROMPT---`` sections) and one response
schema (shipped as a JSON asset). Rendering is a single-pass placeholder
substitution: values are never rescanned, so a value containing ``{{`` can
not smuggle in a second substitution round.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Any, Mapping

from ..errors import TemplateError


class AgentRole(str, Enum):
    SUMMARIZER = "summarizer"
    REVIEWER = "reviewer"
    RELATION_ANALYZER = "relation_analyzer"
    ENCAPSULATOR = "encapsulator"
    AGGREGATOR_ADVISOR = "aggregator_advisor"
    REPRO_AGENT = "repro_agent"
    INDUCTOR = "inductor"
    INJECTOR = "injector"


ROLES: tuple[AgentRole, ...] = tuple(AgentRole)

_PLACEHOLDER = re.compile(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}")
_SYSTEM_MARK = "---SYSTEM_PROMPT---"
_USER_MARK = "---USER_PROMPT---"


@dataclass(frozen=True)
class PromptTemplate:
    role: AgentRole
    system_text: str
    user_text: str
    response_schema: Any

    def __hash__(self) -> int:
        return hash((self.role, self.system_text, self.user_text))

    @property
    def placeholders(self) -> tuple[str, ...]:
        """Placeholder names in first-appearance order, system text first."""
        seen: list[str] = []
        for text in (self.system_text, self.user_text):
            for match in _PLACEHOLDER.finditer(text):
                name = match.group(1)
                if name not in seen:
                    seen.append(name)
        return tuple(seen)


def _asset_text(subdir: str, filename: str) -> str:
    package = resources.files(__package__)
    path = package / subdir / filename
    try:
        return path.read_text(encoding="utf-8")
    except (FileNotFoundError, OSError) as exc:
        raise TemplateError(f"missing asset {subdir}/{filename}: {exc}") from exc


def _split_template(role: AgentRole, content: str) -> tuple[str, str]:
    head, marker, rest = content.partition(_SYSTEM_MARK)
    if not marker or head.strip():
        raise TemplateError(f"{role.value} template must start with {_SYSTEM_MARK}")
    system_text, marker, user_text = rest.partition(_USER_MARK)
    if not marker:
        raise TemplateError(f"{role.value} template is missing {_USER_MARK}")
    return system_text.strip("\n"), user_text.strip("\n")


@lru_cache(maxsize=None)
def load_template(role: AgentRole) -> PromptTemplate:
    """Load the role's prompt template and response schema from the assets."""
    content = _asset_text("templates", f"{role.value}.txt")
    system_text, user_text = _split_template(role, content)
    try:
        schema = json.loads(_asset_text("schemas", f"{role.value}.json"))
    except ValueError as exc:
        raise TemplateError(f"{role.value} response schema is not valid JSON: {exc}") from exc
    return PromptTemplate(
        role=role, system_text=system_text, user_text=user_text, response_schema=schema
    )


def _substitute(role: AgentRole, text: str, variables: Mapping[str, str]) -> str:
    def replace(match: re.Match[str]) -> str:
        name = match.group(1)
        if name not in variables:
            raise TemplateError(f"{role.value} template rendering is missing variable '{name}'")
        value = variables[name]
        if not isinstance(value, str):
            raise TemplateError(
                f"variable '{name}' must be a string, got {type(value).__name__}"
            )
        return value

    return _PLACEHOLDER.sub(replace, text)


def render_prompt(
    template: PromptTemplate, variables: Mapping[str, str]
) -> tuple[str, str]:
    """Byte-deterministic substitution of every placeholder in the template.

    Extra variables are allowed (callers may pass routing context that the
    template does not reference); a missing one raises with its name.
    """
    system_text = _substitute(template.role, template.system_text, variables)
    user_text = _substitute(template.role, template.user_text, variables)
    return system_text, user_text
