"""Execution-feedback refinement.

A candidate implementation is executed in a sandbox, its metrics are compared
against the official ones with a bounded relative-discrepancy score, and a
repair agent proposes edit plans until the score drops below a threshold or
the iteration budget runs out. The loop never mutates a code version in
place; every step keeps the executed version in history so the best one can
be returned even when later edits regress.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any, Protocol, Sequence

from .errors import PlanError, RefinementError, ReprographError
from .serialize import canonical_dumps

FEEDBACK_STATUSES = ("ok", "runtime_error", "timeout", "non_executable")
CHANGE_TYPES = ("add", "modify", "delete")

GAP_MAX = 100.0

DEFAULT_BUDGET = 50  # repair rounds per attempt
DEFAULT_ATTEMPTS = 5  # independent attempts per target; best one is reported
DEFAULT_EXEC_TIMEOUT = 7200.0  # seconds per execution


@dataclass(frozen=True)
class MetricVector:
    entries: tuple[tuple[str, float], ...]

    @staticmethod
    def from_dict(values: dict[str, float]) -> "MetricVector":
        return MetricVector(entries=tuple(sorted(values.items())))

    def validate(self) -> None:
        names = [name for name, _ in self.entries]
        if len(set(names)) != len(names):
            raise ReprographError(f"duplicate metric names in {names}")
        for name, value in self.entries:
            if value < 0:
                raise ReprographError(f"metric {name!r} is negative: {value}")

    def names(self) -> tuple[str, ...]:
        return tuple(sorted(name for name, _ in self.entries))

    def as_dict(self) -> dict[str, float]:
        return dict(self.entries)

    def to_wire(self) -> dict[str, float]:
        return dict(sorted(self.entries))


@dataclass(frozen=True)
class ExecutionFeedback:
    status: str
    logs: str = ""
    error_message: str | None = None
    metrics: MetricVector | None = None
    wall_time: float = 0.0

    def validate(self) -> None:
        if self.status not in FEEDBACK_STATUSES:
            raise ReprographError(f"unknown feedback status {self.status!r}")
        if self.status == "ok" and self.metrics is None:
            raise ReprographError("status ok requires a metrics payload")
        if self.status == "non_executable" and self.metrics is not None:
            raise ReprographError("non_executable feedback cannot carry metrics")

    def to_wire(self) -> dict[str, Any]:
        return {
            "status": self.status,
            "logs": self.logs,
            "error_message": self.error_message,
            "metrics": self.metrics.to_wire() if self.metrics else None,
            "wall_time": self.wall_time,
        }

    @staticmethod
    def from_wire(doc: dict[str, Any]) -> "ExecutionFeedback":
        metrics = doc.get("metrics")
        fb = ExecutionFeedback(
            status=doc["status"],
            logs=doc.get("logs", ""),
            error_message=doc.get("error_message"),
            metrics=MetricVector.from_dict(metrics) if metrics is not None else None,
            wall_time=float(doc.get("wall_time", 0.0)),
        )
        fb.validate()
        return fb


def performance_gap(official: MetricVector, generated: MetricVector) -> float:
    """Mean relative discrepancy in percent, bounded to [0, 100].

    Per metric: |P - P_hat| / max(P, P_hat) * 100, with the 0/0 term defined
    as 0 (neither system scored; there is no discrepancy to report).
    """
    official.validate()
    generated.validate()
    if official.names() != generated.names():
        raise ReprographError(
            "metric names differ: "
            f"official={list(official.names())} generated={list(generated.names())}"
        )
    p = official.as_dict()
    q = generated.as_dict()
    terms = []
    for name in official.names():
        denom = max(p[name], q[name])
        terms.append(0.0 if denom == 0 else abs(p[name] - q[name]) / denom * 100.0)
    return sum(terms) / len(terms)


def gap_from_feedback(official: MetricVector, feedback: ExecutionFeedback) -> float:
    """Gap implied by one execution.

    Clean runs score their metrics directly. Runs that died after producing
    metrics (runtime_error with a payload) are scored on what they produced.
    Everything else counts as zero on every official metric, which makes a
    non-trivial official vector score the full 100.
    """
    feedback.validate()
    if feedback.status == "ok" or (
        feedback.status == "runtime_error" and feedback.metrics is not None
    ):
        assert feedback.metrics is not None
        return performance_gap(official, feedback.metrics)
    zeros = MetricVector.from_dict({name: 0.0 for name in official.names()})
    return performance_gap(official, zeros)


@dataclass(frozen=True)
class PlanEdit:
    file: str
    change_type: str
    diff: str
    risk: str = "low"

    def validate(self) -> None:
        if self.change_type not in CHANGE_TYPES:
            raise PlanError(f"unknown change_type {self.change_type!r}")
        if not self.file:
            raise PlanError("edit is missing a file path")


@dataclass(frozen=True)
class RepairPlan:
    diagnosis: str
    root_cause: str
    edits: tuple[PlanEdit, ...]
    expected_outcome: str
    edit_units: tuple[str, ...] = ()
    fallback: str = ""
    no_op: bool = False

    def validate(self) -> None:
        if not self.edits and not self.no_op:
            raise PlanError("plan has no edits and is not a declared no-op")
        for edit in self.edits:
            edit.validate()

    def to_wire(self) -> dict[str, Any]:
        return {
            "diagnosis": self.diagnosis,
            "root_cause": self.root_cause,
            "edit_units": list(self.edit_units),
            "edits": [
                {"file": e.file, "change_type": e.change_type,
                 "diff": e.diff, "risk": e.risk}
                for e in self.edits
            ],
            "expected_outcome": self.expected_outcome,
            "fallback": self.fallback,
            "no_op": self.no_op,
        }

    @staticmethod
    def from_wire(doc: dict[str, Any]) -> "RepairPlan":
        plan = RepairPlan(
            diagnosis=doc.get("diagnosis", ""),
            root_cause=doc.get("root_cause", ""),
            edits=tuple(
                PlanEdit(
                    file=e["file"],
                    change_type=e["change_type"],
                    diff=e.get("diff", ""),
                    risk=e.get("risk", "low"),
                )
                for e in doc.get("edits", [])
            ),
            expected_outcome=doc.get("expected_outcome", ""),
            edit_units=tuple(doc.get("edit_units", [])),
            fallback=doc.get("fallback", ""),
            no_op=bool(doc.get("no_op", False)),
        )
        plan.validate()
        return plan


@dataclass(frozen=True)
class CodeVersion:
    """An implementation: unit manifest plus the materialized file tree."""

    files: dict[str, str]
    manifest: tuple[dict[str, Any], ...] = ()

    def __hash__(self) -> int:
        return hash(canonical_dumps({"files": self.files}, indent=None))

    def to_wire(self) -> dict[str, Any]:
        return {"files": dict(sorted(self.files.items())),
                "manifest": list(self.manifest)}

    @staticmethod
    def from_wire(doc: dict[str, Any]) -> "CodeVersion":
        return CodeVersion(
            files=dict(doc["files"]), manifest=tuple(doc.get("manifest", []))
        )


def _apply_modify(content: str, diff: str, path: str) -> str:
    try:
        patch = json.loads(diff)
    except (json.JSONDecodeError, TypeError):
        return diff  # whole-file replacement
    if not isinstance(patch, dict):
        return diff
    if set(patch) != {"find", "replace"}:
        raise PlanError(
            f"malformed diff for {path!r}: patch object must have exactly "
            "'find' and 'replace' keys"
        )
    if patch["find"] not in content:
        raise PlanError(f"malformed diff for {path!r}: find text not present")
    return content.replace(patch["find"], patch["replace"], 1)


def apply_edits(version: CodeVersion, plan: RepairPlan) -> CodeVersion:
    """Apply the plan's edits, in order, to a copy of the file tree."""
    plan.validate()
    files = dict(version.files)
    for edit in plan.edits:
        if edit.change_type == "add":
            if edit.file in files:
                raise PlanError(f"add targets existing file {edit.file!r}")
            files[edit.file] = edit.diff
        elif edit.change_type == "modify":
            if edit.file not in files:
                raise PlanError(f"modify targets missing file {edit.file!r}")
            files[edit.file] = _apply_modify(files[edit.file], edit.diff, edit.file)
        else:  # delete
            if edit.file not in files:
                raise PlanError(f"delete targets missing file {edit.file!r}")
            del files[edit.file]
    return CodeVersion(files=files, manifest=version.manifest)


@dataclass(frozen=True)
class HistoryStep:
    iteration: int
    gap: float
    feedback: ExecutionFeedback
    plan: RepairPlan | None  # None on the loop's final execution
    version: CodeVersion

    def to_wire(self) -> dict[str, Any]:
        return {
            "iteration": self.iteration,
            "gap": self.gap,
            "feedback": self.feedback.to_wire(),
            "plan": self.plan.to_wire() if self.plan else None,
        }


@dataclass(frozen=True)
class RefinementState:
    iteration: int
    code_version: CodeVersion
    budget: int
    threshold: float
    history: tuple[HistoryStep, ...] = ()

    def validate(self) -> None:
        if self.iteration > self.budget:
            raise RefinementError(
                f"iteration {self.iteration} exceeds budget {self.budget}"
            )
        if len(self.history) != self.iteration:
            raise RefinementError(
                f"history length {len(self.history)} != iteration {self.iteration}"
            )
        for step in self.history:
            if not 0.0 <= step.gap <= GAP_MAX:
                raise RefinementError(f"gap {step.gap} outside [0, 100]")


def apply_plan(
    state: RefinementState,
    plan: RepairPlan,
    feedback: ExecutionFeedback,
    gap: float,
) -> RefinementState:
    """Advance one iteration: record the executed version, apply the edits."""
    state.validate()
    if state.iteration >= state.budget:
        raise RefinementError("iteration budget exhausted")
    step = HistoryStep(
        iteration=state.iteration,
        gap=gap,
        feedback=feedback,
        plan=plan,
        version=state.code_version,
    )
    new_version = apply_edits(state.code_version, plan)
    new_state = RefinementState(
        iteration=state.iteration + 1,
        code_version=new_version,
        budget=state.budget,
        threshold=state.threshold,
        history=state.history + (step,),
    )
    new_state.validate()
    return new_state


class ExecutionBackend(Protocol):
    def run(self, version: CodeVersion) -> ExecutionFeedback: ...


class RepairAgent(Protocol):
    def propose(
        self, version: CodeVersion, feedback: ExecutionFeedback, gap: float
    ) -> RepairPlan: ...


@dataclass(frozen=True)
class RefinementResult:
    version: CodeVersion
    feedback: ExecutionFeedback
    gap: float
    history: tuple[HistoryStep, ...]
    converged: bool
    aborted: str | None = None  # reason, when the loop stopped early

    def history_wire(self) -> list[dict[str, Any]]:
        return [step.to_wire() for step in self.history]


def run_refinement(
    initial: CodeVersion,
    executor: ExecutionBackend,
    agent: RepairAgent,
    official: MetricVector,
    budget: int,
    threshold: float,
) -> RefinementResult:
    """Execute-diagnose-repair until the gap clears the threshold or the
    budget is spent. Performs at most budget + 1 executions and returns the
    best version seen, which is not necessarily the last one.
    """
    if budget < 1:
        raise RefinementError(f"budget must be >= 1, got {budget}")
    official.validate()

    history: list[HistoryStep] = []
    version = initial
    converged = False
    aborted: str | None = None

    for k in range(budget + 1):
        feedback = executor.run(version)
        gap = gap_from_feedback(official, feedback)
        step = HistoryStep(iteration=k, gap=gap, feedback=feedback,
                           plan=None, version=version)
        if gap < threshold:
            history.append(step)
            converged = True
            break
        if k == budget:
            history.append(step)
            break
        try:
            plan = agent.propose(version, feedback, gap)
            plan.validate()
        except ReprographError as exc:
            history.append(step)
            aborted = f"repair agent failed: {exc}"
            break
        history.append(replace(step, plan=plan))
        version = apply_edits(version, plan)

    best = min(history, key=lambda s: (s.gap, s.iteration))
    return RefinementResult(
        version=best.version,
        feedback=best.feedback,
        gap=best.gap,
        history=tuple(history),
        converged=converged,
        aborted=aborted,
    )
