"""Canonical data model and JSONL persistence for papers and citation edges.

Graphs are immutable after construction: every operation that would change
one builds a new graph instead, so loaded graphs are safe to share across
concurrent pipeline tasks.

File format is line-oriented JSON. Node records look like
``{"kind": "node", "id", "title", "sections", "code_ref", "release_date",
"split"}`` and edge records like ``{"kind": "edge", "from", "to"}`` with an
optional ``weight``. Unknown fields on either record survive a round-trip.
"""

from __future__ import annotations

import datetime
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .errors import GraphFormatError, GraphIntegrityError, UnknownPaperError

SPLITS = ("train", "validation", "test", "external")

# Sections every node must carry; extra sections are stored but unused.
REQUIRED_SECTIONS = ("method", "experiments")

_NODE_FIELDS = ("kind", "id", "title", "sections", "code_ref", "release_date", "split")
_EDGE_FIELDS = ("kind", "from", "to", "weight")

WEIGHT_SUM_TOL = 1e-9


class KnowledgeCategory(str, enum.Enum):
    """Provenance tier attached to decisions and induced entries."""

    RELATIONAL = "relational"
    SOMATIC = "somatic"
    COLLECTIVE = "collective"


@dataclass(frozen=True)
class PaperNode:
    id: str
    title: str
    doc_sections: dict[str, str]
    code_ref: str | None
    release_date: str
    split: str
    extra: dict[str, Any] = field(default_factory=dict)

    def __hash__(self) -> int:
        # Ids are unique within a graph; the dict fields are not hashable.
        return hash(self.id)

    def validate(self) -> None:
        if not self.id:
            raise GraphIntegrityError("node id must be non-empty")
        if self.split not in SPLITS:
            raise GraphIntegrityError(
                f"node {self.id!r}: split {self.split!r} not in {SPLITS}"
            )
        for name in REQUIRED_SECTIONS:
            if name not in self.doc_sections:
                raise GraphIntegrityError(
                    f"node {self.id!r}: missing required section {name!r}"
                )
        try:
            datetime.date.fromisoformat(self.release_date)
        except ValueError as exc:
            raise GraphIntegrityError(
                f"node {self.id!r}: bad release_date {self.release_date!r}: {exc}"
            ) from None

    def released(self) -> datetime.date:
        return datetime.date.fromisoformat(self.release_date)


@dataclass(frozen=True)
class CitationGraph:
    """Directed citation graph; edges run from the citing to the cited paper."""

    nodes: tuple[PaperNode, ...]
    edges: tuple[tuple[str, str], ...]
    weights: dict[tuple[str, str], float] | None = None
    edge_extra: dict[tuple[str, str], dict[str, Any]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_by_id", {n.id: n for n in self.nodes})
        out: dict[str, list[str]] = {n.id: [] for n in self.nodes}
        for src, dst in self.edges:
            if src in out:
                out[src].append(dst)
        object.__setattr__(self, "_out", out)

    def node(self, paper_id: str) -> PaperNode:
        by_id: dict[str, PaperNode] = getattr(self, "_by_id")
        try:
            return by_id[paper_id]
        except KeyError:
            raise UnknownPaperError(f"unknown paper id {paper_id!r}") from None

    def has_node(self, paper_id: str) -> bool:
        return paper_id in getattr(self, "_by_id")

    def out_ids(self, paper_id: str) -> tuple[str, ...]:
        if not self.has_node(paper_id):
            raise UnknownPaperError(f"unknown paper id {paper_id!r}")
        return tuple(getattr(self, "_out")[paper_id])

    def node_ids(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.nodes)

    def validate(self, strict_split: bool = False) -> None:
        seen: set[str] = set()
        for node in self.nodes:
            node.validate()
            if node.id in seen:
                raise GraphIntegrityError(f"duplicate node id {node.id!r}")
            seen.add(node.id)

        edge_seen: set[tuple[str, str]] = set()
        for src, dst in self.edges:
            if src == dst:
                raise GraphIntegrityError(f"self-loop on node {src!r}")
            if src not in seen:
                raise GraphIntegrityError(f"edge source {src!r} is not a node")
            if dst not in seen:
                raise GraphIntegrityError(f"edge target {dst!r} is not a node")
            if (src, dst) in edge_seen:
                raise GraphIntegrityError(f"duplicate edge {src!r} -> {dst!r}")
            edge_seen.add((src, dst))

        if self.weights is not None:
            self._validate_weights(edge_seen)
        if strict_split:
            self._validate_split_dates()

    def _validate_weights(self, edge_set: set[tuple[str, str]]) -> None:
        assert self.weights is not None
        weighted_sources: set[str] = set()
        for (src, dst), w in self.weights.items():
            if (src, dst) not in edge_set:
                raise GraphIntegrityError(
                    f"weight on missing edge {src!r} -> {dst!r}"
                )
            if not 0.0 <= w <= 1.0:
                raise GraphIntegrityError(
                    f"edge weight {src!r} -> {dst!r} = {w} outside [0, 1]"
                )
            weighted_sources.add(src)
        # A source with any weighted out-edge must weight all of them, and
        # those weights must normalize.
        for src in weighted_sources:
            outs = [(src, dst) for dst in getattr(self, "_out")[src]]
            missing = [e for e in outs if e not in self.weights]
            if missing:
                raise GraphIntegrityError(
                    f"node {src!r}: weights missing for out-edges {missing}"
                )
            total = sum(self.weights[e] for e in outs)
            if abs(total - 1.0) > WEIGHT_SUM_TOL:
                raise GraphIntegrityError(
                    f"node {src!r}: out-edge weights sum to {total}, expected 1"
                )

    def _validate_split_dates(self) -> None:
        fit_dates = [
            n.released() for n in self.nodes if n.split in ("train", "validation")
        ]
        if not fit_dates:
            return
        latest = max(fit_dates)
        for node in self.nodes:
            if node.split == "test" and node.released() <= latest:
                raise GraphIntegrityError(
                    f"test node {node.id!r} released {node.release_date}, "
                    f"not after the latest train/validation date {latest}"
                )


def neighbors(graph: CitationGraph, paper_id: str) -> set[PaperNode]:
    """Cited targets of ``paper_id``'s out-edges."""
    return {graph.node(dst) for dst in graph.out_ids(paper_id)}


def _node_from_record(record: dict[str, Any], lineno: int) -> PaperNode:
    for key in ("id", "title", "sections", "release_date", "split"):
        if key not in record:
            raise GraphFormatError(f"line {lineno}: node record missing {key!r}")
    sections = record["sections"]
    if not isinstance(sections, dict):
        raise GraphFormatError(f"line {lineno}: 'sections' must be an object")
    extra = {k: v for k, v in record.items() if k not in _NODE_FIELDS}
    return PaperNode(
        id=record["id"],
        title=record["title"],
        doc_sections=dict(sections),
        code_ref=record.get("code_ref"),
        release_date=record["release_date"],
        split=record["split"],
        extra=extra,
    )


def load_graph(path: str | Path, strict_split: bool = False) -> CitationGraph:
    """Parse and validate a JSONL graph file.

    Parse failures report the offending line number; integrity failures name
    the offending node or edge.
    """
    nodes: list[PaperNode] = []
    edges: list[tuple[str, str]] = []
    weights: dict[tuple[str, str], float] = {}
    edge_extra: dict[tuple[str, str], dict[str, Any]] = {}

    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise GraphFormatError(f"line {lineno}: malformed JSON: {exc}") from None
        if not isinstance(record, dict):
            raise GraphFormatError(f"line {lineno}: record must be an object")
        kind = record.get("kind")
        if kind == "node":
            nodes.append(_node_from_record(record, lineno))
        elif kind == "edge":
            if "from" not in record or "to" not in record:
                raise GraphFormatError(
                    f"line {lineno}: edge record missing 'from' or 'to'"
                )
            edge = (record["from"], record["to"])
            edges.append(edge)
            if "weight" in record:
                weights[edge] = float(record["weight"])
            extra = {k: v for k, v in record.items() if k not in _EDGE_FIELDS}
            if extra:
                edge_extra[edge] = extra
        else:
            raise GraphFormatError(f"line {lineno}: unknown record kind {kind!r}")

    graph = CitationGraph(
        nodes=tuple(nodes),
        edges=tuple(edges),
        weights=weights or None,
        edge_extra=edge_extra,
    )
    graph.validate(strict_split=strict_split)
    return graph


def save_graph(graph: CitationGraph, path: str | Path) -> None:
    """Write the graph back out; inverse of load_graph for valid graphs."""
    lines = []
    for n in graph.nodes:
        record: dict[str, Any] = {
            "kind": "node",
            "id": n.id,
            "title": n.title,
            "sections": n.doc_sections,
            "code_ref": n.code_ref,
            "release_date": n.release_date,
            "split": n.split,
        }
        record.update(n.extra)
        lines.append(json.dumps(record, sort_keys=True, ensure_ascii=False))
    for edge in graph.edges:
        src, dst = edge
        record = {"kind": "edge", "from": src, "to": dst}
        if graph.weights and edge in graph.weights:
            record["weight"] = graph.weights[edge]
        record.update(graph.edge_extra.get(edge, {}))
        lines.append(json.dumps(record, sort_keys=True, ensure_ascii=False))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def graphs_equal(a: CitationGraph, b: CitationGraph) -> bool:
    """Field-by-field equality, insensitive to node/edge file order."""
    return (
        sorted(a.nodes, key=lambda n: n.id) == sorted(b.nodes, key=lambda n: n.id)
        and sorted(a.edges) == sorted(b.edges)
        and (a.weights or {}) == (b.weights or {})
        and a.edge_extra == b.edge_extra
    )


def build_graph(
    nodes: Iterable[PaperNode],
    edges: Iterable[tuple[str, str]],
    weights: dict[tuple[str, str], float] | None = None,
    strict_split: bool = False,
) -> CitationGraph:
    """Construct and validate a graph from in-memory pieces."""
    graph = CitationGraph(nodes=tuple(nodes), edges=tuple(edges), weights=weights)
    graph.validate(strict_split=strict_split)
    return graph
