"""Strict parsing and validation of agent responses.

Three failure classes, each raised as AgentResponseError with a distinct
``kind``: "malformed" (no JSON document could be extracted), "schema"
(violates the role's response schema), "semantic" (schema-valid but breaks
a role rule, e.g. reviewer ranks that are not a permutation).
"""

from __future__ import annotations

import json
import re
from typing import Any, Callable

import jsonschema

from ..errors import AgentResponseError
from ..induction import CONFIDENCE_LEVELS, KnowledgeCategory, KnowledgeEntry
from ..relation import normalize_unit_name
from .roles import AgentRole, load_template

_FENCE = re.compile(r"```(?:json)?\s*\n(.*?)```", re.DOTALL)


def extract_json(raw: str) -> Any:
    """Parse ``raw`` as JSON, stripping prose or code-fence wrapping if present."""
    candidates = [raw]
    fence = _FENCE.search(raw)
    if fence:
        candidates.append(fence.group(1))
    starts = [i for i in (raw.find("{"), raw.find("[")) if i != -1]
    if starts:
        start = min(starts)
        closer = "}" if raw[start] == "{" else "]"
        end = raw.rfind(closer)
        if end > start:
            candidates.append(raw[start : end + 1])
    for candidate in candidates:
        try:
            return json.loads(candidate)
        except ValueError:
            continue
    raise AgentResponseError(
        f"response is not JSON (starts {raw[:80]!r})", kind="malformed"
    )


def _semantic(message: str) -> AgentResponseError:
    return AgentResponseError(message, kind="semantic")


def _check_reviewer(data: Any) -> None:
    ranking = data["ranking"]
    ids = [item["paper_id"] for item in ranking]
    if len(set(ids)) != len(ids):
        raise _semantic("reviewer ranking repeats a paper_id")
    ranks = sorted(item["rank"] for item in ranking)
    if ranks != list(range(1, len(ranking) + 1)):
        raise _semantic(
            f"reviewer ranks must form a permutation of 1..{len(ranking)}, got {ranks}"
        )


def _check_relation(data: Any) -> None:
    groups = ("reusable_units", "adaptable_units", "new_units")
    seen: dict[str, str] = {}
    for group in groups:
        for unit in data[group]:
            key = normalize_unit_name(unit["unit_name"])
            if key in seen:
                raise _semantic(
                    f"unit {unit['unit_name']!r} appears in both {seen[key]} and {group}"
                )
            seen[key] = group


def _check_encapsulator(data: Any) -> None:
    names = [item["api_name"] for item in data]
    if len(set(names)) != len(names):
        raise _semantic("encapsulated api_name values must be unique")


def _check_aggregator(data: Any) -> None:
    selected = [item["unit_name"] for item in data["selected"]]
    deferred = [item["unit_name"] for item in data["deferred"]]
    if len(set(selected)) != len(selected) or len(set(deferred)) != len(deferred):
        raise _semantic("aggregation lists repeat a unit_name")
    overlap = set(selected) & set(deferred)
    if overlap:
        raise _semantic(f"units both selected and deferred: {sorted(overlap)}")


def _check_repro_agent(data: Any) -> None:
    no_op = bool(data.get("no_op", False))
    if no_op and data["edits"]:
        raise _semantic("a no_op plan must carry an empty edits list")
    if not no_op and not data["edits"]:
        raise _semantic("a repair plan requires at least one edit unless no_op is true")


def parse_frequency(text: str) -> tuple[int, int]:
    """Parse a "count/total" string, enforcing count <= total and total >= 1."""
    count_text, _, total_text = text.partition("/")
    try:
        count, total = int(count_text), int(total_text)
    except ValueError as exc:
        raise _semantic(f"frequency {text!r} is not count/total") from exc
    if total < 1:
        raise _semantic(f"frequency {text!r} has a non-positive total")
    if count > total:
        raise _semantic(f"frequency {text!r} has count exceeding total")
    return count, total


def _check_inductor(data: Any) -> None:
    for entry in data:
        parse_frequency(entry["frequency"])
        if entry["confidence"] not in CONFIDENCE_LEVELS:
            raise _semantic(f"confidence {entry['confidence']!r} not in {CONFIDENCE_LEVELS}")


_SEMANTIC_CHECKS: dict[AgentRole, Callable[[Any], None]] = {
    AgentRole.REVIEWER: _check_reviewer,
    AgentRole.RELATION_ANALYZER: _check_relation,
    AgentRole.ENCAPSULATOR: _check_encapsulator,
    AgentRole.AGGREGATOR_ADVISOR: _check_aggregator,
    AgentRole.REPRO_AGENT: _check_repro_agent,
    AgentRole.INDUCTOR: _check_inductor,
}


def parse_response(role: AgentRole, raw: str) -> Any:
    """Extract, schema-validate, and semantically check one agent response."""
    data = extract_json(raw)
    schema = load_template(role).response_schema
    validator = jsonschema.Draft202012Validator(schema)
    error = next(validator.iter_errors(data), None)
    if error is not None:
        path = "/".join(str(p) for p in error.absolute_path) or "<root>"
        raise AgentResponseError(
            f"{role.value} schema violation at {path}: {error.message}", kind="schema"
        )
    check = _SEMANTIC_CHECKS.get(role)
    if check is not None:
        check(data)
    return data


def knowledge_entries_from_response(
    data: Any,
    *,
    category: KnowledgeCategory = KnowledgeCategory.COLLECTIVE,
) -> list[KnowledgeEntry]:
    """Map a validated inductor response 1:1 onto knowledge-entry drafts."""
    entries = []
    for item in data:
        entries.append(
            KnowledgeEntry(
                pattern=item["pattern"],
                trigger=item["trigger"],
                action=item["action"],
                rationale=item.get("rationale", "unknown"),
                verification=item.get("verification", "unknown"),
                scope=item.get("scope", "unknown"),
                frequency=parse_frequency(item["frequency"]),
                confidence=item["confidence"],
                evidence=tuple(item["evidence"]),
                category=category,
            )
        )
    return entries
