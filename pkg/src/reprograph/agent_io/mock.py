"""Deterministic offline agents driven by a scripted behavior profile.

The mock backend answers from the structured variable map (the same map the
template was rendered with), not by re-parsing prompt text. Callers may pass
routing extras beyond the template placeholders — ``target_paper_id`` and
``neighbor_paper_id`` — which the profile lookup keys on. Every response is
canonical JSON with latency 0.0 so repeated runs are byte-identical.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field
from typing import Any, Mapping

from ..errors import AgentBackendError
from ..serialize import canonical_dumps
from .backend import BackendReply
from .roles import AgentRole

_TOKEN = re.compile(r"[a-z0-9]+")

NO_OP_PLAN = {
    "diagnosis": "no change warranted",
    "root_cause": "none",
    "edit_units": [],
    "edits": [],
    "expected_outcome": "metrics unchanged",
    "fallback": "unknown",
    "no_op": True,
}

_PRIORITY_BY_CONFIDENCE = {"high": "high", "medium": "medium", "low": "low"}


def tokens(text: str) -> frozenset[str]:
    return frozenset(_TOKEN.findall(text.lower()))


def token_overlap(a: str, b: str) -> int:
    return len(tokens(a) & tokens(b))


@dataclass(frozen=True)
class MockProfile:
    """Scripted responses, keyed by paper / pair / subgraph identifiers.

    Pair-keyed tables accept "target|neighbor" keys first and fall back to
    the bare neighbor id; missing keys fall back to a deterministic default
    synthesized from the call variables, so a partial profile still yields a
    complete pipeline run.
    """

    summary_scripts: Mapping[str, Any] = field(default_factory=dict)
    relation_scripts: Mapping[str, Any] = field(default_factory=dict)
    encapsulation_scripts: Mapping[str, Any] = field(default_factory=dict)
    aggregation_scripts: Mapping[str, Any] = field(default_factory=dict)
    plan_scripts: Mapping[str, Any] = field(default_factory=dict)
    induction_scripts: Mapping[str, Any] = field(default_factory=dict)
    injection_scripts: Mapping[str, Any] = field(default_factory=dict)


def _loads_var(variables: Mapping[str, str], name: str, default: str) -> Any:
    text = variables.get(name, default)
    try:
        return json.loads(text)
    except ValueError as exc:
        raise AgentBackendError(f"mock backend variable {name!r} is not JSON: {exc}") from exc


def _pair_script(table: Mapping[str, Any], target: str, neighbor: str) -> Any | None:
    script = table.get(f"{target}|{neighbor}")
    if script is None:
        script = table.get(neighbor)
    return script


def _require_mapping(script: Any, what: str) -> dict[str, Any]:
    if not isinstance(script, Mapping):
        raise AgentBackendError(f"behavior profile script for {what} is not a mapping")
    return dict(script)


def _require_list(script: Any, what: str) -> list[Any]:
    if not isinstance(script, (list, tuple)):
        raise AgentBackendError(f"behavior profile script for {what} is not a list")
    return list(script)


def _stub_code(unit_name: str) -> str:
    return (
        f"def {unit_name}():\n"
        f'    raise NotImplementedError("TODO: implement {unit_name}")\n'
    )


class MockAgentBackend:
    """Offline agent ensemble: summaries echo the paper text, reviewers rank
    by token overlap, and the remaining roles replay profile scripts."""

    def __init__(self, seed: int = 0, profile: MockProfile | None = None) -> None:
        self.seed = int(seed)
        self.profile = profile or MockProfile()
        self._plan_cursor: dict[str, int] = {}
        self._lock = threading.Lock()

    def complete(
        self,
        role: AgentRole,
        system_text: str,
        user_text: str,
        variables: Mapping[str, str] | None = None,
    ) -> BackendReply:
        if variables is None:
            raise AgentBackendError("mock backend requires the structured variable map")
        handlers = {
            AgentRole.SUMMARIZER: self._summarize,
            AgentRole.REVIEWER: self._review,
            AgentRole.RELATION_ANALYZER: self._relate,
            AgentRole.ENCAPSULATOR: self._encapsulate,
            AgentRole.AGGREGATOR_ADVISOR: self._aggregate,
            AgentRole.REPRO_AGENT: self._plan,
            AgentRole.INDUCTOR: self._induce,
            AgentRole.INJECTOR: self._inject,
        }
        with self._lock:
            document = handlers[role](dict(variables))
        return BackendReply(text=canonical_dumps(document), latency=0.0, model="mock")

    def _summarize(self, variables: dict[str, str]) -> Any:
        paper_id = variables.get("paper_id", "unknown")
        script = self.profile.summary_scripts.get(paper_id)
        if script is not None:
            return _require_mapping(script, f"summarizer/{paper_id}")
        text = variables.get("method_experiments", "").strip()
        return {
            "paper_id": paper_id,
            "method_summary": text or "unknown",
            "components": [],
            "architecture": {"backbone": "unknown", "key_blocks": [], "input_outputs": "unknown"},
            "training": {
                "optimizer": "unknown",
                "learning_rate": "unknown",
                "schedule": "unknown",
                "batch_size": "unknown",
                "epochs": "unknown",
                "losses": [],
                "regularization": "unknown",
            },
            "hyperparameters": {},
            "data": {"datasets": [], "preprocessing": "unknown", "splits": "unknown"},
            "evaluation": {"metrics": [], "protocol": "unknown"},
            "implicit_decisions": [],
        }

    def _review(self, variables: dict[str, str]) -> Any:
        target_text = variables.get("target_summary", "")
        candidates = _require_list(
            _loads_var(variables, "candidate_summaries", "[]"), "reviewer candidates"
        )
        scored: list[tuple[str, int]] = []
        for candidate in candidates:
            entry = _require_mapping(candidate, "reviewer candidate")
            summary = entry.get("summary", "")
            text = summary if isinstance(summary, str) else json.dumps(summary, sort_keys=True)
            scored.append((str(entry["paper_id"]), token_overlap(target_text, text)))
        scored.sort(key=lambda item: (-item[1], item[0]))
        ranking = [
            {
                "paper_id": paper_id,
                "rank": position,
                "confidence": 0.5,
                "rationale": f"token overlap {overlap}",
                "evidence": [f"shared tokens: {overlap}"],
            }
            for position, (paper_id, overlap) in enumerate(scored, start=1)
        ]
        return {"ranking": ranking, "unknown": []}

    def _relate(self, variables: dict[str, str]) -> Any:
        target = variables.get("target_paper_id", "")
        neighbor = variables.get("neighbor_paper_id", "")
        script = _pair_script(self.profile.relation_scripts, target, neighbor)
        if script is not None:
            return _require_mapping(script, f"relation_analyzer/{target}|{neighbor}")
        return {"reusable_units": [], "adaptable_units": [], "new_units": []}

    def _encapsulate(self, variables: dict[str, str]) -> Any:
        target = variables.get("target_paper_id", "")
        neighbor = variables.get("neighbor_paper_id", "unknown")
        script = _pair_script(self.profile.encapsulation_scripts, target, neighbor)
        if script is not None:
            return _require_list(script, f"encapsulator/{target}|{neighbor}")
        annotation = _require_mapping(
            _loads_var(variables, "relation_annotation", "{}"), "relation annotation"
        )
        snippets = _require_mapping(
            _loads_var(variables, "code_snippets", "{}"), "code snippets"
        )
        apis: list[dict[str, Any]] = []
        for kind, group in (
            ("reuse", "reusable_units"),
            ("adapt", "adaptable_units"),
            ("new", "new_units"),
        ):
            for unit in annotation.get(group, []):
                name = unit["unit_name"]
                code = snippets.get(name) if kind != "new" else None
                apis.append(
                    {
                        "api_name": name,
                        "kind": kind,
                        "source": neighbor,
                        "signature": f"def {name}(...)",
                        "dependencies": [],
                        "code": code or _stub_code(name),
                        "notes": unit.get("diff_instruction", unit.get("reason", "unknown")),
                    }
                )
        return apis

    def _aggregate(self, variables: dict[str, str]) -> Any:
        target = variables.get("target_paper_id", "")
        script = self.profile.aggregation_scripts.get(target)
        if script is not None:
            return _require_mapping(script, f"aggregator_advisor/{target}")
        candidates = _require_mapping(
            _loads_var(variables, "candidate_apis", "{}"), "candidate apis"
        )
        try:
            beta = float(variables.get("beta", "0.15"))
        except ValueError as exc:
            raise AgentBackendError(f"mock aggregator beta is not numeric: {exc}") from exc
        selected, deferred = [], []
        for unit_name in sorted(candidates):
            rows = _require_list(candidates[unit_name], f"candidates for {unit_name}")
            pool = []
            for row in rows:
                entry = _require_mapping(row, f"candidate for {unit_name}")
                weight = float(entry.get("weight", 0.0))
                kind = entry.get("kind", "adapt")
                priority = weight + (beta if kind == "reuse" else 0.0)
                pool.append(
                    (
                        -priority,
                        0 if kind == "reuse" else 1,
                        -weight,
                        str(entry.get("source", "")),
                        str(entry["api_name"]),
                    )
                )
            if not pool:
                deferred.append(
                    {
                        "unit_name": unit_name,
                        "reason": "no suitable api",
                        "next_step": "implement from scratch",
                    }
                )
                continue
            pool.sort()
            best = pool[0]
            selected.append(
                {
                    "unit_name": unit_name,
                    "chosen_api": best[4],
                    "score": -best[0],
                    "reason": "highest weight-plus-reuse priority",
                    "alternatives": sorted(row[4] for row in pool[1:]),
                }
            )
        return {"selected": selected, "deferred": deferred}

    def _plan(self, variables: dict[str, str]) -> Any:
        target = variables.get("target_paper_id", "")
        script = self.profile.plan_scripts.get(target)
        if script is not None:
            plans = _require_list(script, f"repro_agent/{target}")
            cursor = self._plan_cursor.get(target, 0)
            if cursor < len(plans):
                self._plan_cursor[target] = cursor + 1
                return _require_mapping(plans[cursor], f"repro_agent/{target}[{cursor}]")
        return dict(NO_OP_PLAN)

    def _induce(self, variables: dict[str, str]) -> Any:
        subgraph = variables.get("subgraph_id", "")
        script = self.profile.induction_scripts.get(subgraph)
        if script is not None:
            return _require_list(script, f"inductor/{subgraph}")
        return []

    def _inject(self, variables: dict[str, str]) -> Any:
        target = variables.get("target_paper_id", "unknown")
        script = self.profile.injection_scripts.get(target)
        if script is not None:
            return _require_mapping(script, f"injector/{target}")
        entries = _require_list(
            _loads_var(variables, "retrieved_knowledge_entries", "[]"), "knowledge entries"
        )
        selected, context = [], []
        for raw in entries:
            entry = _require_mapping(raw, "knowledge entry")
            pattern = str(entry.get("pattern", "unknown"))
            action = str(entry.get("action", "unknown"))
            frequency = entry.get("frequency", {})
            if isinstance(frequency, Mapping):
                evidence = f"frequency {frequency.get('count', '?')}/{frequency.get('total', '?')}"
            else:
                evidence = f"frequency {frequency}"
            selected.append(
                {
                    "pattern": pattern,
                    "trigger_match": str(entry.get("trigger", "unknown")),
                    "action": action,
                    "priority": _PRIORITY_BY_CONFIDENCE.get(
                        str(entry.get("confidence", "medium")), "medium"
                    ),
                    "evidence": evidence,
                }
            )
            context.append(f"{pattern}: {action}")
        return {
            "target_paper_id": target,
            "selected_entries": selected,
            "rejected_entries": [],
            "injected_context": context,
        }


def mock_backend(seed: int = 0, profile: MockProfile | None = None) -> MockAgentBackend:
    """Deterministic offline backend: same seed and inputs give byte-identical
    responses."""
    return MockAgentBackend(seed=seed, profile=profile)


_PROFILE_KEYS = frozenset(
    (
        "summary_scripts",
        "relation_scripts",
        "encapsulation_scripts",
        "aggregation_scripts",
        "plan_scripts",
        "induction_scripts",
        "injection_scripts",
    )
)


def profile_from_mapping(doc: Mapping[str, Any]) -> MockProfile:
    unknown = set(doc) - _PROFILE_KEYS
    if unknown:
        raise AgentBackendError(f"unknown mock profile keys: {sorted(unknown)}")
    return MockProfile(**{key: doc[key] for key in doc})


def profile_from_file(path: str) -> MockProfile:
    try:
        with open(path, encoding="utf-8") as handle:
            doc = json.load(handle)
    except (OSError, ValueError) as exc:
        raise AgentBackendError(f"cannot load mock profile {path!r}: {exc}") from exc
    if not isinstance(doc, Mapping):
        raise AgentBackendError(f"mock profile {path!r} must be a JSON object")
    return profile_from_mapping(doc)
