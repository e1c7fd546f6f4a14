"""End-to-end orchestration: prune, relate, aggregate, refine, inject.

Each reproduction runs as a sequence of stages with idempotent completion
markers under the target's output directory, so an interrupted run resumes
by reloading the persisted artifacts of finished stages. All artifacts are
canonical JSON; under the mock backend two runs with equal config and seed
produce byte-identical trees.
"""

from __future__ import annotations

import ast
import logging
import math
import random
import subprocess
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import agent_io, induction, refine, relation, ssgp
from .agent_io import (
    AgentBackend,
    AgentRole,
    HttpAgentBackend,
    LiveBackendConfig,
    TranscriptLog,
    call_with_retry,
    knowledge_entries_from_response,
    mock_backend,
    profile_from_file,
)
from .errors import (
    AgentResponseError,
    ExecutorUnavailableError,
    KnowledgeBaseError,
    PipelineConfigError,
    RefinementError,
    ReprographError,
    StageFailureError,
)
from .graph import CitationGraph, PaperNode, load_graph
from .induction import (
    KnowledgeBase,
    KnowledgeEntry,
    SubgraphPartition,
    build_task_graph,
    frequency_threshold,
    induce_knowledge,
    louvain_partition,
    retrieve_knowledge,
    subgraph_affinity,
)
from .refine import (
    CodeVersion,
    ExecutionFeedback,
    MetricVector,
    RepairPlan,
    run_refinement,
)
from .relation import (
    AggregationResult,
    ApiUnit,
    DirectoryCodeProvider,
    InProcessExecutor,
    UnitDecl,
    aggregate_neighborhood,
    annotation_from_wire,
    annotation_to_wire,
    encapsulate,
    normalize_unit_name,
    stub_body,
    validate_callability,
)
from .serialize import canonical_dumps, read_json, write_json
from .ssgp import (
    WeightedNeighborhood,
    aggregate_ranks,
    ballot_from_review,
    edge_weights,
    prune,
)

log = logging.getLogger(__name__)

STAGES = ("summaries", "ssgp", "relation", "aggregate", "refine", "knowledge")
BACKENDS = ("mock", "live")
DEFAULT_THRESHOLD = 10.0  # percent gap below which a run counts as converged


# --------------------------------------------------------------------- config


@dataclass(frozen=True)
class RunConfig:
    graph_path: str
    output_dir: str
    targets: tuple[str, ...] = ()
    backend: str = "mock"
    seed: int | None = None
    reviewers: int = ssgp.DEFAULT_REVIEWERS
    lam: float = ssgp.DEFAULT_LAMBDA
    k_keep: int = ssgp.DEFAULT_K_KEEP
    beta: float = relation.DEFAULT_BETA
    budget: int = refine.DEFAULT_BUDGET
    threshold: float = DEFAULT_THRESHOLD
    attempts: int = refine.DEFAULT_ATTEMPTS
    exec_timeout: float = refine.DEFAULT_EXEC_TIMEOUT
    epochs: int = induction.DEFAULT_EPOCHS
    top_k: int = induction.DEFAULT_TOP_K
    min_val_runs: int = induction.DEFAULT_MIN_VAL_RUNS
    retries: int = agent_io.DEFAULT_RETRIES
    entry_file: str = "main.py"
    knowledge_dir: str | None = None
    mock_profile: str | None = None
    sandbox_command: tuple[str, ...] = ()
    strict_split: bool = False
    live_base_url: str | None = None
    live_model: str | None = None
    live_auth_env: str = "REPROGRAPH_API_KEY"
    live_timeout: float = 120.0
    live_temperature: float = 0.0

    def validate(self) -> None:
        if not self.graph_path or not self.output_dir:
            raise PipelineConfigError("graph_path and output_dir are required")
        if self.backend not in BACKENDS:
            raise PipelineConfigError(
                f"backend {self.backend!r} not in {BACKENDS}"
            )
        if self.backend == "mock" and self.seed is None:
            raise PipelineConfigError("mock runs require an explicit seed")
        if self.backend == "live" and not (self.live_base_url and self.live_model):
            raise PipelineConfigError("live runs require live_base_url and live_model")
        ranges = (
            ("reviewers", self.reviewers >= 1),
            ("lam", self.lam >= 0),
            ("k_keep", self.k_keep >= 1),
            ("beta", self.beta >= 0),
            ("budget", self.budget >= 1),
            ("threshold", 0 < self.threshold <= 100),
            ("attempts", self.attempts >= 1),
            ("exec_timeout", self.exec_timeout > 0),
            ("epochs", self.epochs >= 1),
            ("top_k", self.top_k >= 1),
            ("min_val_runs", self.min_val_runs >= 1),
            ("retries", self.retries >= 0),
            ("entry_file", bool(self.entry_file)),
        )
        for name, ok in ranges:
            if not ok:
                raise PipelineConfigError(f"config value {name} is out of range")

    def public_dict(self) -> dict[str, Any]:
        doc = {f.name: getattr(self, f.name) for f in fields(self)}
        doc["targets"] = list(self.targets)
        doc["sandbox_command"] = list(self.sandbox_command)
        return doc


_CONFIG_KEYS = frozenset(f.name for f in fields(RunConfig))
_TUPLE_KEYS = ("targets", "sandbox_command")


def config_from_mapping(
    doc: Mapping[str, Any], overrides: Mapping[str, Any] | None = None
) -> RunConfig:
    """Build a validated RunConfig from a config document plus overrides.

    Override values of None mean "not given" and never mask the document.
    """
    merged = dict(doc)
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    unknown = set(merged) - _CONFIG_KEYS
    if unknown:
        raise PipelineConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in _TUPLE_KEYS:
        if key in merged:
            value = merged[key]
            if isinstance(value, str):
                value = [part for part in value.split(",") if part]
            merged[key] = tuple(value)
    try:
        cfg = RunConfig(**merged)
    except TypeError as exc:
        raise PipelineConfigError(f"incomplete config: {exc}") from None
    cfg.validate()
    return cfg


def build_backend(cfg: RunConfig) -> AgentBackend:
    if cfg.backend == "mock":
        profile = profile_from_file(cfg.mock_profile) if cfg.mock_profile else None
        return mock_backend(seed=cfg.seed or 0, profile=profile)
    live = LiveBackendConfig(
        base_url=cfg.live_base_url or "",
        model=cfg.live_model or "",
        auth_env=cfg.live_auth_env,
        temperature=cfg.live_temperature,
        timeout=cfg.live_timeout,
    )
    return HttpAgentBackend(live)


def build_executor(cfg: RunConfig) -> refine.ExecutionBackend:
    if cfg.sandbox_command:
        return SandboxCommandBackend(
            command=cfg.sandbox_command,
            entry_file=cfg.entry_file,
            timeout=cfg.exec_timeout,
            scratch_root=Path(cfg.output_dir) / "sandbox",
        )
    return InProcessRunBackend(entry_file=cfg.entry_file)


# ------------------------------------------------------------------ executors


@dataclass(frozen=True)
class InProcessRunBackend:
    """Deterministic executor for trusted synthetic fixtures: exec() the entry
    file in a fresh namespace and read its RESULTS mapping as the metrics
    document. Wall time is reported as 0.0 so artifacts stay byte-stable."""

    entry_file: str = "main.py"
    results_name: str = "RESULTS"

    def run(self, version: CodeVersion) -> ExecutionFeedback:
        source = version.files.get(self.entry_file)
        if source is None:
            return ExecutionFeedback(
                status="non_executable",
                error_message=f"entry file {self.entry_file!r} is missing",
            )
        try:
            code = compile(source, self.entry_file, "exec")
        except SyntaxError as exc:
            return ExecutionFeedback(
                status="non_executable", error_message=f"syntax error: {exc}"
            )
        namespace: dict[str, Any] = {"__name__": "__candidate__"}
        try:
            exec(code, namespace)  # trusted fixture code only
        except (Exception, SystemExit) as exc:
            return ExecutionFeedback(
                status="runtime_error",
                logs=f"execution halted in {self.entry_file}",
                error_message=f"{type(exc).__name__}: {exc}",
            )
        results = namespace.get(self.results_name)
        if not isinstance(results, Mapping):
            return ExecutionFeedback(
                status="non_executable",
                logs=f"executed {self.entry_file}",
                error_message=f"no {self.results_name!r} mapping was produced",
            )
        try:
            values = {str(name): float(value) for name, value in results.items()}
            if not all(math.isfinite(v) for v in values.values()):
                raise ValueError("metrics must be finite numbers")
            metrics = MetricVector.from_dict(values)
            metrics.validate()
        except (TypeError, ValueError, ReprographError) as exc:
            return ExecutionFeedback(
                status="non_executable",
                logs=f"executed {self.entry_file}",
                error_message=f"bad metrics document: {exc}",
            )
        return ExecutionFeedback(
            status="ok",
            logs=f"executed {self.entry_file}; metrics {sorted(results)}",
            metrics=metrics,
        )


class SandboxCommandBackend:
    """Runs versions through an external runner command that speaks the
    feedback wire contract: argv = [request.json, feedback.json]."""

    def __init__(
        self,
        command: Sequence[str],
        entry_file: str,
        timeout: float,
        scratch_root: str | Path,
        metrics_path: str = "metrics.json",
    ) -> None:
        if not command:
            raise PipelineConfigError("sandbox command must be non-empty")
        self.command = tuple(command)
        self.entry_file = entry_file
        self.timeout = timeout
        self.scratch_root = Path(scratch_root)
        self.metrics_path = metrics_path
        self._runs = 0

    def run(self, version: CodeVersion) -> ExecutionFeedback:
        self._runs += 1
        workdir = self.scratch_root / f"run_{self._runs:04d}"
        workdir.mkdir(parents=True, exist_ok=True)
        for name, content in version.files.items():
            path = workdir / name
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(content, encoding="utf-8")
        request_path = workdir / "request.json"
        feedback_path = workdir / "feedback.json"
        write_json(
            request_path,
            {
                "workdir": str(workdir),
                "entrypoint": self.entry_file,
                "args": [],
                "timeout": self.timeout,
                "metrics_path": self.metrics_path,
            },
        )
        argv = [*self.command, str(request_path), str(feedback_path)]
        try:
            proc = subprocess.run(argv, capture_output=True, timeout=self.timeout + 60)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise ExecutorUnavailableError(f"sandbox runner failed: {exc}") from exc
        if proc.returncode != 0 or not feedback_path.is_file():
            tail = proc.stderr.decode("utf-8", "replace")[-2000:]
            raise ExecutorUnavailableError(
                f"sandbox runner exited {proc.returncode} without feedback: {tail}"
            )
        return ExecutionFeedback.from_wire(read_json(feedback_path))


# ------------------------------------------------------------- agent adapters


def paper_text(node: PaperNode) -> str:
    return "\n\n".join(
        f"# {name}\n{text}" for name, text in sorted(node.doc_sections.items())
    )


def _call_stage(
    backend: AgentBackend,
    role: AgentRole,
    variables: Mapping[str, str],
    *,
    stage: str,
    retries: int,
    log_sink: TranscriptLog,
) -> Any:
    call = call_with_retry(backend, role, variables, retries=retries, log=log_sink)
    if not call.ok:
        raise StageFailureError(f"stage {stage}: {role.value} failed: {call.error}")
    return call.structure


@dataclass
class _RepairAgentAdapter:
    """Bridges the repro_agent role onto the refinement loop's protocol."""

    backend: AgentBackend
    target: PaperNode
    official: MetricVector
    retries: int
    log_sink: TranscriptLog
    injected_context: str = "none"
    mode: str = "iterative_repair"

    def propose(
        self, version: CodeVersion, feedback: ExecutionFeedback, gap: float
    ) -> RepairPlan:
        variables = {
            "mode": self.mode,
            "target_paper_text": paper_text(self.target),
            "current_code": canonical_dumps(dict(sorted(version.files.items()))),
            "execution_feedback": canonical_dumps(feedback.to_wire()),
            "current_metrics": canonical_dumps(
                feedback.metrics.to_wire() if feedback.metrics else None
            ),
            "reference_metrics": canonical_dumps(self.official.to_wire()),
            "injected_knowledge_context": self.injected_context,
            "target_paper_id": self.target.id,
        }
        call = call_with_retry(
            self.backend,
            AgentRole.REPRO_AGENT,
            variables,
            retries=self.retries,
            log=self.log_sink,
        )
        if not call.ok:
            raise AgentResponseError(f"repro_agent failed after retries: {call.error}")
        plan = RepairPlan.from_wire(call.structure)
        if plan.no_op:
            # A deterministic executor replays the same feedback forever, so
            # a declared no-change plan means the loop cannot progress.
            raise RefinementError("repair agent proposed no change")
        return plan


@dataclass
class _InductorAdapter:
    backend: AgentBackend
    task_name: str
    domain: str
    subgraph_id: int
    eta: int
    retries: int
    log_sink: TranscriptLog

    def induce(self, outcomes: Sequence[induction.Outcome]) -> list[KnowledgeEntry]:
        payload = [
            {
                "paper_id": paper_id,
                "manifest": list(manifest),
                "feedback": feedback.to_wire(),
            }
            for paper_id, manifest, feedback in outcomes
        ]
        variables = {
            "task_name": self.task_name,
            "domain": self.domain,
            "subgraph_id": str(self.subgraph_id),
            "min_frequency": str(self.eta),
            "execution_feedback_outcomes": canonical_dumps(payload),
        }
        call = call_with_retry(
            self.backend,
            AgentRole.INDUCTOR,
            variables,
            retries=self.retries,
            log=self.log_sink,
        )
        if not call.ok:
            raise KnowledgeBaseError(f"inductor failed after retries: {call.error}")
        return knowledge_entries_from_response(call.structure)


# ------------------------------------------------------------ stage machinery


def _marker(target_dir: Path, stage: str) -> Path:
    return target_dir / f"stage_{stage}.done"


def _mark(target_dir: Path, stage: str) -> None:
    _marker(target_dir, stage).write_text("", encoding="utf-8")


def _set_stage_warnings(target_dir: Path, stage: str, messages: Sequence[str]) -> None:
    path = target_dir / "warnings.json"
    doc = read_json(path) if path.is_file() else {}
    doc[stage] = list(messages)
    write_json(path, doc)
    for message in messages:
        log.warning("%s: %s", stage, message)


def _all_warnings(target_dir: Path) -> list[str]:
    path = target_dir / "warnings.json"
    if not path.is_file():
        return []
    doc = read_json(path)
    merged: list[str] = []
    for stage in STAGES:
        merged.extend(doc.get(stage, []))
    return merged


def official_metrics_for(target: PaperNode) -> MetricVector:
    doc = target.extra.get("official_metrics")
    if not isinstance(doc, Mapping) or not doc:
        raise StageFailureError(
            f"stage refine: target {target.id!r} carries no official_metrics record"
        )
    metrics = MetricVector.from_dict(
        {str(name): float(value) for name, value in doc.items()}
    )
    metrics.validate()
    return metrics


def assemble_version(result: AggregationResult, entry_file: str = "main.py") -> CodeVersion:
    """Materialize the aggregation outcome as one entry file plus a manifest
    of unit origins (the provenance the code-source breakdown consumes)."""
    parts: list[str] = []
    manifest: list[dict[str, Any]] = []
    for name in sorted(result.selections):
        selection = result.selections[name]
        body = selection.api.code_body.rstrip("\n") + "\n"
        parts.append(body)
        manifest.append(
            {
                "unit_name": name,
                "kind": selection.api.kind,
                "source": selection.api.source,
                "api_name": selection.api.api_name,
                "lines": len(body.splitlines()),
            }
        )
    for name, reason in result.deferred:
        body = stub_body(name)
        parts.append(body)
        manifest.append(
            {
                "unit_name": name,
                "kind": "new",
                "source": "stub",
                "api_name": normalize_unit_name(name),
                "lines": len(body.splitlines()),
                "reason": reason,
            }
        )
    return CodeVersion(
        files={entry_file: "\n".join(parts) if parts else ""},
        manifest=tuple(manifest),
    )


def code_source_breakdown(
    manifest: Sequence[Mapping[str, Any]],
) -> tuple[float, float, float]:
    """Percentage of final code lines originating from reuse / adapt / new."""
    lines = {"reuse": 0, "adapt": 0, "new": 0}
    for row in manifest:
        kind = row.get("kind")
        if kind not in lines:
            raise ReprographError(f"manifest row has unknown kind {kind!r}")
        lines[kind] += int(row.get("lines", 0))
    total = sum(lines.values())
    if total == 0:
        log.warning("empty manifest; code-source breakdown degenerates to zeros")
        return (0.0, 0.0, 0.0)
    return tuple(100.0 * lines[kind] / total for kind in ("reuse", "adapt", "new"))


def _code_index(root: Path) -> str:
    """Deterministic one-line-per-symbol listing of a code directory."""
    if not root.is_dir():
        return "unavailable"
    lines: list[str] = []
    for path in sorted(root.rglob("*.py")):
        rel = path.relative_to(root).as_posix()
        names: list[str] = []
        try:
            tree = ast.parse(path.read_text(encoding="utf-8"))
            for node in tree.body:
                if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
                    names.append(f"def {node.name}")
                elif isinstance(node, ast.ClassDef):
                    names.append(f"class {node.name}")
        except (OSError, SyntaxError):
            names = ["<unparseable>"]
        lines.append(f"{rel}: {', '.join(names) if names else '<no symbols>'}")
    return "\n".join(lines) if lines else "empty"


def _snippets_for(
    annotation_units: Sequence[UnitDecl],
    provider: DirectoryCodeProvider,
    code_ref: str | None,
) -> dict[str, str]:
    snippets: dict[str, str] = {}
    for decl in annotation_units:
        if not decl.code_location:
            continue
        try:
            snippets[decl.unit_name] = provider.resolve(code_ref, decl.code_location)
        except ReprographError:
            continue
    return snippets


# ----------------------------------------------------------------- reproduce


def reproduce(
    cfg: RunConfig,
    target_id: str,
    *,
    graph: CitationGraph | None = None,
    backend: AgentBackend | None = None,
    executor: refine.ExecutionBackend | None = None,
    stop_after: str | None = None,
) -> dict[str, Any]:
    """Run (or resume) the full reproduction of one target; returns the
    RunReport entry. `stop_after` halts after the named stage for the partial
    CLI subcommands."""
    cfg.validate()
    if stop_after is not None and stop_after not in STAGES:
        raise PipelineConfigError(f"unknown stage {stop_after!r}; pick from {STAGES}")
    graph = graph if graph is not None else load_graph(cfg.graph_path, cfg.strict_split)
    target = graph.node(target_id)
    backend = backend if backend is not None else build_backend(cfg)
    executor = executor if executor is not None else build_executor(cfg)

    target_dir = Path(cfg.output_dir) / "targets" / target_id
    target_dir.mkdir(parents=True, exist_ok=True)
    transcripts = TranscriptLog(target_dir / "transcripts.jsonl")
    provider = DirectoryCodeProvider(Path(cfg.graph_path).resolve().parent)

    candidate_ids = sorted(
        cid for cid in graph.out_ids(target_id) if graph.node(cid).code_ref is not None
    )

    # ---- stage: summaries
    if not _marker(target_dir, "summaries").exists():
        target_summary = _call_stage(
            backend,
            AgentRole.SUMMARIZER,
            {"paper_id": target.id, "method_experiments": paper_text(target)},
            stage="summaries",
            retries=cfg.retries,
            log_sink=transcripts,
        )
        candidate_summaries = {
            cid: _call_stage(
                backend,
                AgentRole.SUMMARIZER,
                {"paper_id": cid, "method_experiments": paper_text(graph.node(cid))},
                stage="summaries",
                retries=cfg.retries,
                log_sink=transcripts,
            )
            for cid in candidate_ids
        }
        write_json(
            target_dir / "summaries.json",
            {"target": target_summary, "candidates": candidate_summaries},
        )
        _set_stage_warnings(target_dir, "summaries", [])
        _mark(target_dir, "summaries")
    summaries = read_json(target_dir / "summaries.json")
    if stop_after == "summaries":
        return {"target": target_id, "stopped_after": "summaries"}

    # ---- stage: ssgp
    if not _marker(target_dir, "ssgp").exists():
        messages: list[str] = []
        if not candidate_ids:
            messages.append(
                "no code-bearing neighbors; degrading to the refinement-only path"
            )
            neighborhood = WeightedNeighborhood(target_id=target_id, members=())
            write_json(target_dir / "ballots.json", [])
            write_json(target_dir / "rank_aggregates.json", [])
        else:
            ballots = []
            records = []
            for idx in range(cfg.reviewers):
                order = candidate_ids[:]
                random.Random(f"{cfg.seed}:{idx}").shuffle(order)
                payload = [
                    {"paper_id": cid, "summary": summaries["candidates"][cid]}
                    for cid in order
                ]
                review = _call_stage(
                    backend,
                    AgentRole.REVIEWER,
                    {
                        "target_summary": canonical_dumps(summaries["target"]),
                        "candidate_summaries": canonical_dumps(payload),
                        "target_paper_id": target_id,
                    },
                    stage="ssgp",
                    retries=cfg.retries,
                    log_sink=transcripts,
                )
                try:
                    ballots.append(ballot_from_review(f"reviewer_{idx}", review))
                except ReprographError as exc:
                    raise StageFailureError(f"stage ssgp: reviewer_{idx}: {exc}") from exc
                records.append(
                    {
                        "reviewer_id": f"reviewer_{idx}",
                        "presented_order": order,
                        "review": review,
                    }
                )
            try:
                aggregates = aggregate_ranks(ballots, cfg.lam)
                kept = prune(aggregates, cfg.k_keep)
                neighborhood = edge_weights(kept, target_id)
            except ReprographError as exc:
                raise StageFailureError(f"stage ssgp: {exc}") from exc
            write_json(target_dir / "ballots.json", records)
            write_json(
                target_dir / "rank_aggregates.json", [a.to_wire() for a in aggregates]
            )
        write_json(target_dir / "neighborhood.json", neighborhood.to_wire())
        _set_stage_warnings(target_dir, "ssgp", messages)
        _mark(target_dir, "ssgp")
    neighborhood = WeightedNeighborhood.from_wire(
        read_json(target_dir / "neighborhood.json")
    )
    if stop_after == "ssgp":
        return {"target": target_id, "stopped_after": "ssgp"}

    # ---- stage: relation
    if not _marker(target_dir, "relation").exists():
        annotations_doc: dict[str, Any] = {}
        apis_doc: dict[str, Any] = {}
        messages = []
        for cid in neighborhood.member_ids():
            neighbor = graph.node(cid)
            code_root = (
                Path(cfg.graph_path).resolve().parent / (neighbor.code_ref or "")
            )
            wire = _call_stage(
                backend,
                AgentRole.RELATION_ANALYZER,
                {
                    "target_paper_text": paper_text(target),
                    "neighbor_paper_text": paper_text(neighbor),
                    "neighbor_code_index": _code_index(code_root),
                    "target_paper_id": target_id,
                    "neighbor_paper_id": cid,
                },
                stage="relation",
                retries=cfg.retries,
                log_sink=transcripts,
            )
            try:
                annotation = annotation_from_wire(target_id, cid, wire)
            except ReprographError as exc:
                raise StageFailureError(
                    f"stage relation: neighbor {cid}: {exc}"
                ) from exc
            snippets = _snippets_for(
                tuple(annotation.reuse_units) + tuple(annotation.adapt_units),
                provider,
                neighbor.code_ref,
            )
            agent_apis = _call_stage(
                backend,
                AgentRole.ENCAPSULATOR,
                {
                    "relation_annotation": canonical_dumps(annotation_to_wire(annotation)),
                    "code_snippets": canonical_dumps(snippets),
                    "target_paper_id": target_id,
                    "neighbor_paper_id": cid,
                },
                stage="relation",
                retries=cfg.retries,
                log_sink=transcripts,
            )
            bodies = {
                normalize_unit_name(api["api_name"]): api.get("code", "")
                for api in agent_apis
            }

            def adapt_with_agent(decl: UnitDecl, source: str, diff: str) -> str:
                body = bodies.get(normalize_unit_name(decl.unit_name))
                if not body:
                    raise ReprographError(
                        f"encapsulator returned no body for {decl.unit_name!r}"
                    )
                return body

            try:
                units = encapsulate(
                    annotation, provider, adapt_with_agent, code_ref=neighbor.code_ref
                )
            except ReprographError as exc:
                raise StageFailureError(
                    f"stage relation: neighbor {cid}: {exc}"
                ) from exc
            checker = InProcessExecutor()
            units = [validate_callability(unit, checker) for unit in units]
            for unit in units:
                if unit.callability == "fail":
                    messages.append(
                        f"unit {unit.api_name} from {cid} failed callability: "
                        f"{unit.failure_reason}"
                    )
            annotations_doc[cid] = annotation_to_wire(annotation)
            apis_doc[cid] = [unit.to_wire() for unit in units]
        write_json(target_dir / "annotations.json", annotations_doc)
        write_json(target_dir / "apis.json", apis_doc)
        _set_stage_warnings(target_dir, "relation", messages)
        _mark(target_dir, "relation")
    apis_doc = read_json(target_dir / "apis.json")
    if stop_after == "relation":
        return {"target": target_id, "stopped_after": "relation"}

    # ---- stage: aggregate
    if not _marker(target_dir, "aggregate").exists():
        messages = []
        candidates_map: dict[str, list[tuple[ApiUnit, float]]] = {}
        for cid, unit_wires in apis_doc.items():
            weight = neighborhood.weight_of(cid)
            for wire in unit_wires:
                api = ApiUnit.from_wire(wire)
                candidates_map.setdefault(api.api_name, []).append((api, weight))
        if candidates_map:
            try:
                result = aggregate_neighborhood(candidates_map, cfg.beta)
            except ReprographError as exc:
                raise StageFailureError(f"stage aggregate: {exc}") from exc
            for name, reason in result.deferred:
                messages.append(f"unit {name} deferred: {reason}")
        else:
            result = AggregationResult(selections={}, deferred=())
            messages.append("no candidate units; starting from an empty implementation")
        version = assemble_version(result, cfg.entry_file)
        write_json(target_dir / "aggregation.json", result.to_wire())
        write_json(target_dir / "code_initial.json", version.to_wire())
        _set_stage_warnings(target_dir, "aggregate", messages)
        _mark(target_dir, "aggregate")
    initial_version = CodeVersion.from_wire(read_json(target_dir / "code_initial.json"))
    if stop_after == "aggregate":
        return {"target": target_id, "stopped_after": "aggregate"}

    # ---- stage: refine
    official = official_metrics_for(target)
    if not _marker(target_dir, "refine").exists():
        write_json(target_dir / "official_metrics.json", official.to_wire())
        attempts_docs = []
        best = None
        best_idx = 0
        for attempt in range(cfg.attempts):
            agent = _RepairAgentAdapter(
                backend=backend,
                target=target,
                official=official,
                retries=cfg.retries,
                log_sink=transcripts,
            )
            try:
                result = run_refinement(
                    initial_version, executor, agent, official, cfg.budget, cfg.threshold
                )
            except ReprographError as exc:
                raise StageFailureError(f"stage refine: {exc}") from exc
            attempts_docs.append(
                {
                    "attempt": attempt,
                    "gap": result.gap,
                    "converged": result.converged,
                    "aborted": result.aborted,
                    "history": result.history_wire(),
                }
            )
            if best is None or (result.gap, attempt) < (best.gap, best_idx):
                best, best_idx = result, attempt
        assert best is not None
        write_json(
            target_dir / "feedback_initial.json",
            attempts_docs[0]["history"][0]["feedback"],
        )
        write_json(
            target_dir / "refinement.json",
            {
                "attempts": attempts_docs,
                "best_attempt": best_idx,
                "initial_gap": attempts_docs[0]["history"][0]["gap"],
                "refined_gap": best.gap,
                "iterations": best.history[-1].iteration,
                "converged": best.converged,
            },
        )
        write_json(target_dir / "code_refined.json", best.version.to_wire())
        write_json(target_dir / "feedback_refined.json", best.feedback.to_wire())
        _set_stage_warnings(target_dir, "refine", [])
        _mark(target_dir, "refine")
    refinement_doc = read_json(target_dir / "refinement.json")
    refined_version = CodeVersion.from_wire(read_json(target_dir / "code_refined.json"))
    if stop_after == "refine":
        return {"target": target_id, "stopped_after": "refine"}

    # ---- stage: knowledge (retrieval + injected repair pass)
    if not _marker(target_dir, "knowledge").exists():
        messages = []
        injection_doc: dict[str, Any] = {
            "affinities": [],
            "retrieved": [],
            "response": None,
            "note": None,
            "final_history": None,
        }
        entries: list[KnowledgeEntry] = []
        if cfg.knowledge_dir:
            partition, bases = load_knowledge(cfg.knowledge_dir)
            affinities, unassigned = subgraph_affinity(neighborhood, partition)
            entries = retrieve_knowledge(affinities, bases, cfg.top_k)
            injection_doc["affinities"] = [[idx, s] for idx, s in affinities]
            injection_doc["retrieved"] = [e.to_wire(None) for e in entries]
            for cid, weight in unassigned:
                messages.append(
                    f"neighbor {cid} (weight {weight:.6f}) lies outside every subgraph"
                )
            if not entries:
                injection_doc["note"] = "retrieval returned no entries"
        else:
            injection_doc["note"] = "no knowledge directory configured"
        if entries:
            response = _call_stage(
                backend,
                AgentRole.INJECTOR,
                {
                    "target_paper_id": target_id,
                    "target_summary": canonical_dumps(summaries["target"]),
                    "current_state": (
                        f"refined gap {refinement_doc['refined_gap']:.6f} after "
                        f"{refinement_doc['iterations']} iterations"
                    ),
                    "retrieved_knowledge_entries": canonical_dumps(
                        [e.to_wire(None) for e in entries]
                    ),
                },
                stage="knowledge",
                retries=cfg.retries,
                log_sink=transcripts,
            )
            injection_doc["response"] = response
            context_lines = response.get("injected_context", [])
            context = "\n".join(context_lines) if context_lines else "none"
            agent = _RepairAgentAdapter(
                backend=backend,
                target=target,
                official=official,
                retries=cfg.retries,
                log_sink=transcripts,
                injected_context=context,
            )
            try:
                final_result = run_refinement(
                    refined_version, executor, agent, official, cfg.budget, cfg.threshold
                )
            except ReprographError as exc:
                raise StageFailureError(f"stage knowledge: {exc}") from exc
            injection_doc["final_history"] = final_result.history_wire()
            final_gap = final_result.gap
            final_version = final_result.version
            final_feedback_wire = final_result.feedback.to_wire()
        else:
            final_gap = refinement_doc["refined_gap"]
            final_version = refined_version
            final_feedback_wire = read_json(target_dir / "feedback_refined.json")
        write_json(target_dir / "injection.json", injection_doc)
        write_json(target_dir / "code_final.json", final_version.to_wire())
        write_json(target_dir / "feedback_final.json", final_feedback_wire)
        write_json(target_dir / "final_gap.json", {"final_gap": final_gap})
        _set_stage_warnings(target_dir, "knowledge", messages)
        _mark(target_dir, "knowledge")
    final_version = CodeVersion.from_wire(read_json(target_dir / "code_final.json"))
    final_gap = read_json(target_dir / "final_gap.json")["final_gap"]

    # ---- report entry
    reuse_pct, adapt_pct, new_pct = code_source_breakdown(final_version.manifest)
    unit_counts = {"reuse": 0, "adapt": 0, "new": 0}
    for row in final_version.manifest:
        unit_counts[row["kind"]] += 1
    entry = {
        "target": target_id,
        "initial_gap": refinement_doc["initial_gap"],
        "refined_gap": refinement_doc["refined_gap"],
        "final_gap": final_gap,
        "iterations": refinement_doc["iterations"],
        "converged": refinement_doc["converged"],
        "code_breakdown": {
            "reuse_pct": reuse_pct,
            "adapt_pct": adapt_pct,
            "new_pct": new_pct,
        },
        "unit_counts": unit_counts,
        "degraded": not candidate_ids,
        "transcripts": "transcripts.jsonl",
        "warnings": _all_warnings(target_dir),
    }
    validate_report_entry(entry)
    write_json(target_dir / "report_entry.json", entry)
    return entry


def validate_report_entry(entry: Mapping[str, Any]) -> None:
    for key in ("initial_gap", "refined_gap", "final_gap"):
        gap = entry[key]
        if not 0.0 <= gap <= 100.0:
            raise StageFailureError(f"report {key} {gap} outside [0, 100]")
    breakdown = entry["code_breakdown"]
    total = breakdown["reuse_pct"] + breakdown["adapt_pct"] + breakdown["new_pct"]
    if sum(entry["unit_counts"].values()) > 0 and abs(total - 100.0) > 0.1:
        raise StageFailureError(f"code breakdown sums to {total}, not 100")


def reproduce_all(
    cfg: RunConfig,
    *,
    graph: CitationGraph | None = None,
    backend: AgentBackend | None = None,
    executor: refine.ExecutionBackend | None = None,
) -> dict[str, Any]:
    """Reproduce every configured target (default: all test-split nodes) and
    write the aggregate RunReport."""
    cfg.validate()
    graph = graph if graph is not None else load_graph(cfg.graph_path, cfg.strict_split)
    backend = backend if backend is not None else build_backend(cfg)
    executor = executor if executor is not None else build_executor(cfg)
    targets = cfg.targets or tuple(
        sorted(node.id for node in graph.nodes if node.split == "test")
    )
    if not targets:
        raise PipelineConfigError("no targets configured and no test-split nodes")
    entries = {}
    for target_id in targets:
        entries[target_id] = reproduce(
            cfg, target_id, graph=graph, backend=backend, executor=executor
        )
    report = {
        "config": cfg.public_dict(),
        "targets": entries,
        "mean_final_gap": sum(e["final_gap"] for e in entries.values()) / len(entries),
    }
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "report.json", report)
    return report


# ------------------------------------------------------------------ training


def load_knowledge(
    knowledge_dir: str | Path,
) -> tuple[SubgraphPartition, dict[int, KnowledgeBase]]:
    """Load a partition and its knowledge bases from a checkpoint directory.

    Accepts either a training root (manifest.json present; the best epoch is
    followed) or a single epoch directory (partition.json + kb/)."""
    root = Path(knowledge_dir)
    manifest_path = root / "manifest.json"
    if manifest_path.is_file():
        manifest = read_json(manifest_path)
        root = root / f"epoch_{manifest['best_epoch']}"
    partition_doc = read_json(root / "partition.json")
    partition = SubgraphPartition(
        subgraphs=tuple(tuple(group) for group in partition_doc["subgraphs"]),
        modularity=partition_doc["modularity"],
        seed=partition_doc["seed"],
    )
    bases: dict[int, KnowledgeBase] = {}
    kb_dir = root / "kb"
    if kb_dir.is_dir():
        for path in sorted(kb_dir.glob("sub_*.json")):
            base = KnowledgeBase.from_wire(read_json(path))
            bases[base.subgraph_id] = base
    return partition, bases


class InjectionValidationHarness:
    """Measures an entry's gap improvement on the validation members by
    rerunning one bounded repair pass with only that entry injected."""

    def __init__(
        self,
        cfg: RunConfig,
        graph: CitationGraph,
        backend: AgentBackend,
        executor: refine.ExecutionBackend,
        val_ids: Sequence[str],
        scratch_dir: str | Path,
    ) -> None:
        self.cfg = cfg
        self.graph = graph
        self.backend = backend
        self.executor = executor
        self.val_ids = tuple(val_ids)
        self.scratch_dir = Path(scratch_dir)
        self._baselines: dict[str, tuple[float, CodeVersion, MetricVector]] = {}
        self._transcripts = TranscriptLog(self.scratch_dir / "transcripts.jsonl")

    def _baseline(self, member: str) -> tuple[float, CodeVersion, MetricVector]:
        if member not in self._baselines:
            base_cfg = replace(
                self.cfg,
                output_dir=str(self.scratch_dir / "baseline"),
                knowledge_dir=None,
            )
            entry = reproduce(
                base_cfg,
                member,
                graph=self.graph,
                backend=self.backend,
                executor=self.executor,
            )
            target_dir = Path(base_cfg.output_dir) / "targets" / member
            version = CodeVersion.from_wire(read_json(target_dir / "code_refined.json"))
            official = official_metrics_for(self.graph.node(member))
            self._baselines[member] = (entry["refined_gap"], version, official)
        return self._baselines[member]

    def entry_gains(self, entry: KnowledgeEntry) -> list[float]:
        gains = []
        for member in self.val_ids:
            baseline_gap, version, official = self._baseline(member)
            agent = _RepairAgentAdapter(
                backend=self.backend,
                target=self.graph.node(member),
                official=official,
                retries=self.cfg.retries,
                log_sink=self._transcripts,
                injected_context=f"{entry.pattern}: {entry.action}",
            )
            result = run_refinement(
                version, self.executor, agent, official, 1, self.cfg.threshold
            )
            gains.append(baseline_gap - result.gap)
        return gains


def train_knowledge(
    cfg: RunConfig,
    *,
    task_name: str = "training",
    domain: str = "unknown",
    graph: CitationGraph | None = None,
    backend: AgentBackend | None = None,
    executor: refine.ExecutionBackend | None = None,
    validation: induction.ValidationHarness | None = None,
    evaluator: Any = None,
) -> dict[str, Any]:
    """Epoch loop: reproduce the training members, induce per-subgraph
    knowledge, evaluate on the validation split, and keep the best epoch."""
    cfg.validate()
    graph = graph if graph is not None else load_graph(cfg.graph_path, cfg.strict_split)
    backend = backend if backend is not None else build_backend(cfg)
    executor = executor if executor is not None else build_executor(cfg)

    train_ids = sorted(node.id for node in graph.nodes if node.split == "train")
    val_ids = sorted(node.id for node in graph.nodes if node.split == "validation")
    with_code = [tid for tid in train_ids if graph.node(tid).code_ref is not None]
    if len(with_code) < 2:
        raise PipelineConfigError(
            f"training needs at least 2 code-bearing members, found {len(with_code)}"
        )
    warnings: list[str] = []
    if not val_ids:
        warnings.append(
            "validation set is empty; no induced entry can pass the gain gate"
        )
        log.warning(warnings[-1])

    directed: dict[tuple[str, str], float] = {}
    members = set(train_ids)
    for src, dst in graph.edges:
        if src in members and dst in members:
            weights = graph.weights or {}
            directed[(src, dst)] = weights.get((src, dst), 1.0)
    task_graph = build_task_graph(task_name, train_ids, directed)
    partition = louvain_partition(task_graph, seed=cfg.seed or 0)

    train_dir = Path(cfg.output_dir) / "training"
    train_dir.mkdir(parents=True, exist_ok=True)
    write_json(train_dir / "partition.json", partition.to_wire())
    transcripts = TranscriptLog(train_dir / "transcripts.jsonl")

    epoch_docs = []
    previous_kb: str | None = None
    for epoch in range(1, cfg.epochs + 1):
        epoch_dir = train_dir / f"epoch_{epoch}"
        epoch_dir.mkdir(parents=True, exist_ok=True)
        write_json(epoch_dir / "partition.json", partition.to_wire())

        run_cfg = replace(
            cfg, output_dir=str(epoch_dir / "runs"), knowledge_dir=previous_kb
        )
        outcomes: dict[int, list[induction.Outcome]] = {}
        for member in train_ids:
            reproduce(
                run_cfg, member, graph=graph, backend=backend, executor=executor
            )
            member_dir = Path(run_cfg.output_dir) / "targets" / member
            feedback = ExecutionFeedback.from_wire(
                read_json(member_dir / "feedback_final.json")
            )
            manifest = read_json(member_dir / "code_final.json").get("manifest", [])
            idx = partition.index_of(member)
            if idx is None:
                continue
            outcomes.setdefault(idx, []).append((member, manifest, feedback))

        harness = validation or InjectionValidationHarness(
            cfg, graph, backend, executor, val_ids, epoch_dir / "validation"
        )
        kb_dir = epoch_dir / "kb"
        kb_dir.mkdir(parents=True, exist_ok=True)
        rows = []
        for idx in range(len(partition.subgraphs)):
            size = len(partition.subgraphs[idx])
            eta = frequency_threshold(size)
            subgraph_outcomes = outcomes.get(idx, [])
            if subgraph_outcomes:
                inductor = _InductorAdapter(
                    backend=backend,
                    task_name=task_name,
                    domain=domain,
                    subgraph_id=idx,
                    eta=eta,
                    retries=cfg.retries,
                    log_sink=transcripts,
                )
                base = induce_knowledge(
                    subgraph_outcomes,
                    inductor,
                    eta,
                    harness,
                    subgraph_id=idx,
                    epoch=epoch,
                    min_val_runs=cfg.min_val_runs,
                )
            else:
                base = KnowledgeBase(subgraph_id=idx, epoch=epoch, entries=())
            write_json(kb_dir / f"sub_{idx}.json", base.to_wire())
            rows.append(
                {
                    "epoch": epoch,
                    "subgraph": idx,
                    "file": f"epoch_{epoch}/kb/sub_{idx}.json",
                    "entries": len(base.entries),
                }
            )

        if evaluator is not None:
            mean_val_gap = float(evaluator(epoch, epoch_dir))
        elif val_ids:
            eval_cfg = replace(
                cfg, output_dir=str(epoch_dir / "eval"), knowledge_dir=str(epoch_dir)
            )
            val_gaps = [
                reproduce(
                    eval_cfg, member, graph=graph, backend=backend, executor=executor
                )["final_gap"]
                for member in val_ids
            ]
            mean_val_gap = sum(val_gaps) / len(val_gaps)
        else:
            mean_val_gap = 100.0
        for row in rows:
            row["mean_val_gap"] = mean_val_gap
        epoch_docs.append(
            {"epoch": epoch, "mean_val_gap": mean_val_gap, "bases": rows}
        )
        previous_kb = str(epoch_dir)

    best_epoch = min(epoch_docs, key=lambda d: (d["mean_val_gap"], d["epoch"]))["epoch"]
    manifest = {
        "task": task_name,
        "partition": partition.to_wire(),
        "epochs": epoch_docs,
        "best_epoch": best_epoch,
        "warnings": warnings,
    }
    write_json(train_dir / "manifest.json", manifest)
    return manifest
