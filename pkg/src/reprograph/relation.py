"""Relation-aware neighborhood aggregation.

For each kept neighbor, an annotation classifies the target's implementation
units as reusable, adaptable, or missing from that neighbor's code. Units are
encapsulated as callable API records, checked for callability, and the best
candidate per unit is selected by priority: the neighbor's edge weight plus a
bias toward verbatim reuse.
"""

from __future__ import annotations

import ast
import importlib.util
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Protocol, Sequence

from .errors import AnnotationError, EncapsulationError, ReprographError
from .serialize import canonical_dumps

DEFAULT_BETA = 0.15

UNIT_KINDS = ("reuse", "adapt", "new")
RISK_LEVELS = ("low", "medium", "high")

DEFER_REASON = "no suitable api"


def normalize_unit_name(name: str) -> str:
    """Lowercase snake case, the key units from different neighbors match on."""
    name = re.sub(r"[\s\-]+", "_", name.strip().lower())
    return re.sub(r"_+", "_", name)


def near_miss_names(names: Sequence[str]) -> list[tuple[str, str]]:
    """Pairs of distinct normalized names that collide once underscores are
    dropped (e.g. data_loader vs dataloader) — surfaced as report warnings."""
    by_squashed: dict[str, list[str]] = {}
    for name in sorted(set(names)):
        by_squashed.setdefault(name.replace("_", ""), []).append(name)
    pairs = []
    for group in by_squashed.values():
        pairs.extend((a, b) for i, a in enumerate(group) for b in group[i + 1 :])
    return pairs


@dataclass(frozen=True)
class UnitDecl:
    unit_name: str
    description: str
    code_location: str | None = None
    risk: str = "low"
    evidence: str = "unknown"
    extra: dict[str, Any] = field(default_factory=dict)

    def __hash__(self) -> int:
        return hash((self.unit_name, self.code_location))

    def validate(self, kind: str) -> None:
        if not self.unit_name:
            raise AnnotationError("unit_name must be non-empty")
        if self.risk not in RISK_LEVELS:
            raise AnnotationError(
                f"unit {self.unit_name!r}: risk {self.risk!r} not in {RISK_LEVELS}"
            )
        if kind in ("reuse", "adapt") and not self.code_location:
            raise AnnotationError(
                f"{kind} unit {self.unit_name!r} is missing a code_location"
            )
        if kind == "new" and self.code_location:
            raise AnnotationError(
                f"new unit {self.unit_name!r} must not carry a code_location"
            )


@dataclass(frozen=True)
class RelationAnnotation:
    target_id: str
    neighbor_id: str
    reuse_units: tuple[UnitDecl, ...] = ()
    adapt_units: tuple[UnitDecl, ...] = ()
    new_units: tuple[UnitDecl, ...] = ()
    diff_instructions: dict[str, str] = field(default_factory=dict)


def validate_annotation(a: RelationAnnotation) -> RelationAnnotation:
    """Checks disjointness, diff-instruction coverage, and location rules.

    Violations name the offending units.
    """
    groups = (("reuse", a.reuse_units), ("adapt", a.adapt_units), ("new", a.new_units))
    seen: dict[str, str] = {}
    for kind, units in groups:
        for unit in units:
            unit.validate(kind)
            key = normalize_unit_name(unit.unit_name)
            if key in seen:
                raise AnnotationError(
                    f"unit {unit.unit_name!r} appears in both "
                    f"{seen[key]} and {kind} sets"
                )
            seen[key] = kind

    adapt_names = {u.unit_name for u in a.adapt_units}
    for name in adapt_names:
        if not a.diff_instructions.get(name, "").strip():
            raise AnnotationError(
                f"adapt unit {name!r} has no diff instruction"
            )
    for name in a.diff_instructions:
        if name not in adapt_names:
            raise AnnotationError(
                f"diff instruction for {name!r} does not match any adapt unit"
            )
    return a


def annotation_from_wire(
    target_id: str, neighbor_id: str, doc: dict[str, Any]
) -> RelationAnnotation:
    """Build an annotation from the analyzer response shape."""

    def decl(item: dict[str, Any], with_location: bool) -> UnitDecl:
        known = {"unit_name", "description", "code_location", "evidence", "risk",
                 "diff_instruction"}
        return UnitDecl(
            unit_name=item["unit_name"],
            description=item.get("description", ""),
            code_location=item.get("code_location") if with_location else None,
            risk=item.get("risk", "low"),
            evidence=item.get("evidence", "unknown"),
            extra={k: v for k, v in item.items() if k not in known},
        )

    diffs = {
        item["unit_name"]: item.get("diff_instruction", "")
        for item in doc.get("adaptable_units", [])
    }
    annotation = RelationAnnotation(
        target_id=target_id,
        neighbor_id=neighbor_id,
        reuse_units=tuple(decl(i, True) for i in doc.get("reusable_units", [])),
        adapt_units=tuple(decl(i, True) for i in doc.get("adaptable_units", [])),
        new_units=tuple(decl(i, False) for i in doc.get("new_units", [])),
        diff_instructions=diffs,
    )
    return validate_annotation(annotation)


def annotation_to_wire(a: RelationAnnotation) -> dict[str, Any]:
    def item(unit: UnitDecl, **extras: Any) -> dict[str, Any]:
        doc = {
            "unit_name": unit.unit_name,
            "description": unit.description,
            "evidence": unit.evidence,
            "risk": unit.risk,
        }
        if unit.code_location is not None:
            doc["code_location"] = unit.code_location
        doc.update(unit.extra)
        doc.update(extras)
        return doc

    return {
        "reusable_units": [item(u) for u in a.reuse_units],
        "adaptable_units": [
            item(u, diff_instruction=a.diff_instructions[u.unit_name])
            for u in a.adapt_units
        ],
        "new_units": [
            {"unit_name": u.unit_name, "description": u.description,
             "reason": u.extra.get("reason", "unknown"), "evidence": u.evidence}
            for u in a.new_units
        ],
    }


@dataclass(frozen=True)
class ApiUnit:
    api_name: str
    kind: str
    source: str  # neighbor id, or "stub" for new units
    signature: str
    dependencies: tuple[str, ...]
    code_body: str
    callability: str = "unvalidated"  # unvalidated | pass | fail
    failure_reason: str | None = None
    provenance: dict[str, Any] = field(default_factory=dict)

    def __hash__(self) -> int:
        return hash((self.api_name, self.kind, self.source))

    def to_wire(self) -> dict[str, Any]:
        return {
            "api_name": self.api_name,
            "kind": self.kind,
            "source": self.source,
            "signature": self.signature,
            "dependencies": list(self.dependencies),
            "code": self.code_body,
            "notes": self.provenance.get("notes", ""),
            "callability": self.callability,
            "failure_reason": self.failure_reason,
            "provenance": self.provenance,
        }

    @staticmethod
    def from_wire(doc: dict[str, Any]) -> "ApiUnit":
        provenance = dict(doc.get("provenance", {}))
        if doc.get("notes"):
            provenance.setdefault("notes", doc["notes"])
        return ApiUnit(
            api_name=doc["api_name"],
            kind=doc["kind"],
            source=doc["source"],
            signature=doc.get("signature", "unknown"),
            dependencies=tuple(doc.get("dependencies", [])),
            code_body=doc["code"],
            callability=doc.get("callability", "unvalidated"),
            failure_reason=doc.get("failure_reason"),
            provenance=provenance,
        )


class CodeProvider(Protocol):
    def resolve(self, code_ref: str | None, location: str) -> str: ...


class DirectoryCodeProvider:
    """Resolves "relative/path.py:symbol" locators under a code root.

    Without a symbol the whole file is returned; with one, the source segment
    of the matching module-level function or class.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def resolve(self, code_ref: str | None, location: str) -> str:
        if code_ref is None:
            raise EncapsulationError(
                f"cannot resolve {location!r}: neighbor has no code reference"
            )
        rel_path, _, symbol = location.partition(":")
        path = self.root / code_ref / rel_path
        if not path.is_file():
            raise EncapsulationError(f"unresolvable code location {location!r}: "
                                     f"no file {path}")
        source = path.read_text(encoding="utf-8")
        if not symbol:
            return source
        try:
            tree = ast.parse(source)
        except SyntaxError as exc:
            raise EncapsulationError(
                f"unresolvable code location {location!r}: {exc}"
            ) from None
        for node in tree.body:
            if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
                if node.name == symbol:
                    return ast.get_source_segment(source, node) or ""
        raise EncapsulationError(
            f"unresolvable code location {location!r}: no symbol {symbol!r}"
        )


class MappingCodeProvider:
    """In-memory provider for tests and synthetic fixtures."""

    def __init__(self, sources: dict[tuple[str, str], str]):
        self.sources = dict(sources)

    def resolve(self, code_ref: str | None, location: str) -> str:
        try:
            return self.sources[(code_ref or "", location)]
        except KeyError:
            raise EncapsulationError(
                f"unresolvable code location {location!r} under {code_ref!r}"
            ) from None


Transformer = Callable[[UnitDecl, str, str], str]


def _signature_of(body: str, name: str) -> str:
    try:
        tree = ast.parse(body)
    except SyntaxError:
        return "unknown"
    defs = [n for n in ast.walk(tree) if isinstance(n, (ast.FunctionDef, ast.AsyncFunctionDef))]
    for node in defs:
        if node.name == name:
            return f"{node.name}({ast.unparse(node.args)})"
    if defs:
        node = defs[0]
        return f"{node.name}({ast.unparse(node.args)})"
    return "unknown"


def _dependencies_of(body: str) -> tuple[str, ...]:
    try:
        tree = ast.parse(body)
    except SyntaxError:
        return ()
    deps: set[str] = set()
    for node in ast.walk(tree):
        if isinstance(node, ast.Import):
            deps.update(alias.name.split(".")[0] for alias in node.names)
        elif isinstance(node, ast.ImportFrom) and node.module and node.level == 0:
            deps.add(node.module.split(".")[0])
    return tuple(sorted(deps))


def stub_body(unit_name: str) -> str:
    name = normalize_unit_name(unit_name)
    return (
        f"def {name}(*args, **kwargs):\n"
        f"    raise NotImplementedError(\"unit '{name}' is not implemented\")\n"
    )


def encapsulate(
    a: RelationAnnotation,
    code_provider: CodeProvider,
    transformer: Transformer,
    code_ref: str | None = None,
) -> list[ApiUnit]:
    """Turn a validated annotation into API records.

    Reuse bodies are extracted verbatim; adapt bodies come from the
    transformer with the diff instruction recorded as provenance; new units
    become stubs that raise when invoked. A transformer failure marks the
    unit failed rather than dropping it.
    """
    validate_annotation(a)
    units: list[ApiUnit] = []

    for decl in a.reuse_units:
        body = code_provider.resolve(code_ref, decl.code_location or "")
        name = normalize_unit_name(decl.unit_name)
        units.append(
            ApiUnit(
                api_name=name,
                kind="reuse",
                source=a.neighbor_id,
                signature=_signature_of(body, name),
                dependencies=_dependencies_of(body),
                code_body=body,
                provenance={"code_location": decl.code_location},
            )
        )

    for decl in a.adapt_units:
        source_body = code_provider.resolve(code_ref, decl.code_location or "")
        diff = a.diff_instructions[decl.unit_name]
        name = normalize_unit_name(decl.unit_name)
        provenance = {"code_location": decl.code_location, "diff_instruction": diff}
        try:
            body = transformer(decl, source_body, diff)
        except Exception as exc:  # agent-backed; any failure is recorded
            units.append(
                ApiUnit(
                    api_name=name,
                    kind="adapt",
                    source=a.neighbor_id,
                    signature=_signature_of(source_body, name),
                    dependencies=_dependencies_of(source_body),
                    code_body=source_body,
                    callability="fail",
                    failure_reason=f"transformer: {exc}",
                    provenance=provenance,
                )
            )
            continue
        units.append(
            ApiUnit(
                api_name=name,
                kind="adapt",
                source=a.neighbor_id,
                signature=_signature_of(body, name),
                dependencies=_dependencies_of(body),
                code_body=body,
                provenance=provenance,
            )
        )

    for decl in a.new_units:
        name = normalize_unit_name(decl.unit_name)
        body = stub_body(decl.unit_name)
        units.append(
            ApiUnit(
                api_name=name,
                kind="new",
                source="stub",
                signature=f"{name}(*args, **kwargs)",
                dependencies=(),
                code_body=body,
                provenance={"reason": decl.extra.get("reason", decl.description)},
            )
        )
    return units


class CallabilityExecutor(Protocol):
    def check_callable(self, api: ApiUnit) -> tuple[str, str | None]: ...


class InProcessExecutor:
    """Syntax, import, and smoke-invocation checks run in this interpreter.

    Suitable for trusted synthetic fixtures and mock pipelines; untrusted
    code belongs in the external sandbox runner.
    """

    def check_callable(self, api: ApiUnit) -> tuple[str, str | None]:
        try:
            ast.parse(api.code_body)
        except SyntaxError as exc:
            return "fail", f"import/parse: {exc}"

        for dep in _dependencies_of(api.code_body):
            try:
                found = importlib.util.find_spec(dep)
            except (ImportError, ValueError):
                found = None
            if found is None:
                return "fail", f"missing dependency {dep!r}"

        namespace: dict[str, Any] = {}
        try:
            exec(compile(api.code_body, f"<unit {api.api_name}>", "exec"), namespace)
        except Exception as exc:
            return "fail", f"import/parse: {exc}"

        target = namespace.get(api.api_name)
        if not callable(target):
            callables = [v for k, v in namespace.items()
                         if callable(v) and not k.startswith("_")]
            if not callables:
                return "fail", "no callable defined"
            target = callables[0]

        try:
            target()
        except NotImplementedError as exc:
            if api.kind == "new":
                if api.api_name in str(exc):
                    return "pass", None
                return "fail", "stub does not name its unit"
            return "fail", f"smoke invocation: {exc!r}"
        except TypeError:
            # Signature requires arguments we cannot synthesize; the
            # interface exists, which is all the smoke test asserts.
            return "pass", None
        except Exception as exc:
            return "fail", f"smoke invocation: {exc!r}"
        return "pass", None


def validate_callability(u: ApiUnit, executor: CallabilityExecutor | None) -> ApiUnit:
    """Returns a copy of the unit with callability decided by the executor.

    With no executor the unit stays unvalidated and is flagged, so downstream
    consumers can see that the check never ran.
    """
    if not u.code_body:
        raise EncapsulationError(f"unit {u.api_name!r} has an empty code body")
    if executor is None:
        provenance = dict(u.provenance)
        provenance["validation"] = "executor unavailable"
        return replace(u, callability="unvalidated", provenance=provenance)
    try:
        status, reason = executor.check_callable(u)
    except Exception as exc:
        provenance = dict(u.provenance)
        provenance["validation"] = f"executor unavailable: {exc}"
        return replace(u, callability="unvalidated", provenance=provenance)
    return replace(u, callability=status, failure_reason=reason)


def priority(candidate: ApiUnit, edge_weight: float, beta: float = DEFAULT_BETA) -> float:
    """Edge weight plus the reuse bias; new units never compete."""
    if candidate.kind == "new":
        raise ReprographError(
            f"unit {candidate.api_name!r}: new units have no priority score"
        )
    if candidate.kind not in ("reuse", "adapt"):
        raise ReprographError(f"unknown unit kind {candidate.kind!r}")
    return edge_weight + (beta if candidate.kind == "reuse" else 0.0)


@dataclass(frozen=True)
class Selection:
    api: ApiUnit
    priority: float
    alternatives: tuple[ApiUnit, ...]


@dataclass(frozen=True)
class AggregationResult:
    selections: dict[str, Selection]
    deferred: tuple[tuple[str, str], ...]  # (unit_name, reason)

    def unit_names(self) -> set[str]:
        return set(self.selections) | {name for name, _ in self.deferred}

    def to_wire(self) -> dict[str, Any]:
        selected = []
        for name in sorted(self.selections):
            sel = self.selections[name]
            selected.append(
                {
                    "unit_name": name,
                    "chosen_api": sel.api.api_name,
                    "source": sel.api.source,
                    "kind": sel.api.kind,
                    "score": sel.priority,
                    "reason": f"highest priority {sel.priority:.6f}",
                    "alternatives": [
                        {"api_name": alt.api_name, "source": alt.source,
                         "kind": alt.kind, "callability": alt.callability,
                         "failure_reason": alt.failure_reason}
                        for alt in sel.alternatives
                    ],
                }
            )
        deferred = [
            {"unit_name": name, "reason": reason, "next_step": "implement stub"}
            for name, reason in self.deferred
        ]
        return {"selected": selected, "deferred": deferred}

    def wire_json(self) -> str:
        return canonical_dumps(self.to_wire())


def _competition_key(api: ApiUnit, weight: float, beta: float):
    # Total order: priority desc, reuse before adapt, weight desc, then
    # lexicographic neighbor id and api name.
    return (
        -priority(api, weight, beta),
        0 if api.kind == "reuse" else 1,
        -weight,
        api.source,
        api.api_name,
    )


def aggregate_neighborhood(
    candidates: dict[str, list[tuple[ApiUnit, float]]],
    beta: float = DEFAULT_BETA,
) -> AggregationResult:
    """Select the best candidate per unit, or defer units nothing can serve.

    Candidates that failed callability are excluded from competition but kept
    in the alternatives list with their failure reason.
    """
    if not candidates:
        raise ReprographError("no candidate units to aggregate")

    selections: dict[str, Selection] = {}
    deferred: list[tuple[str, str]] = []
    for raw_name in sorted(candidates):
        name = normalize_unit_name(raw_name)
        pool = candidates[raw_name]
        runnable = [
            (api, w) for api, w in pool
            if api.kind in ("reuse", "adapt") and api.callability == "pass"
        ]
        if not runnable:
            deferred.append((name, DEFER_REASON))
            continue
        ranked = sorted(runnable, key=lambda c: _competition_key(c[0], c[1], beta))
        best_api, best_w = ranked[0]
        alternatives = tuple(api for api, _ in ranked[1:]) + tuple(
            api for api, _ in sorted(
                ((a, w) for a, w in pool if (a, w) not in runnable),
                key=lambda c: (c[0].kind, c[0].source, c[0].api_name),
            )
        )
        selections[name] = Selection(
            api=best_api,
            priority=priority(best_api, best_w, beta),
            alternatives=alternatives,
        )
    return AggregationResult(selections=selections, deferred=tuple(deferred))
