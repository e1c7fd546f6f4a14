"""Subgraph knowledge induction and retrieval.

Directed pruning weights among a task's papers are symmetrized into an
undirected task graph, partitioned into communities, and each community
accumulates its own knowledge base: practice entries proposed by an induction
agent over reproduction outcomes, kept only when they recur often enough and
demonstrably help on validation papers. At reproduction time a target's
pruned neighborhood votes, by edge weight, for the communities whose bases
get injected.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Protocol, Sequence

from .errors import KnowledgeBaseError, PartitionError, ReprographError
from .graph import KnowledgeCategory
from .ssgp import WeightedNeighborhood

log = logging.getLogger(__name__)

DEFAULT_TOP_K = 3
DEFAULT_EPOCHS = 3
DEFAULT_MIN_VAL_RUNS = 2

CONFIDENCE_LEVELS = ("low", "medium", "high")

# Improvement below this is numerical noise, not a modularity gain.
_GAIN_TOL = 1e-12

Pair = tuple[str, str]


def _key(u: str, v: str) -> Pair:
    return (u, v) if u <= v else (v, u)


def frequency_threshold(subgraph_size: int) -> int:
    """Half the subgraph size, floored, never below 1."""
    return max(1, subgraph_size // 2)


@dataclass(frozen=True)
class TaskGraph:
    task_name: str
    members: frozenset[str]
    weights: dict[Pair, float] = field(default_factory=dict)

    def __hash__(self) -> int:
        return hash((self.task_name, self.members))

    def validate(self) -> None:
        for (u, v), w in self.weights.items():
            if u == v:
                raise PartitionError(f"self-pair weight on {u!r}")
            if (u, v) != _key(u, v):
                raise PartitionError(f"weight key {(u, v)} is not sorted")
            if u not in self.members or v not in self.members:
                raise PartitionError(f"weight on non-member pair {(u, v)}")
            if w < 0:
                raise PartitionError(f"negative weight {w} on {(u, v)}")

    def weight(self, u: str, v: str) -> float:
        return self.weights.get(_key(u, v), 0.0)


def symmetrize(directed: dict[tuple[str, str], float]) -> dict[Pair, float]:
    """Average each ordered pair with its reverse; missing directions are 0."""
    for (u, v), w in directed.items():
        if w < 0:
            raise ReprographError(f"negative weight {w} on edge {(u, v)}")
    out: dict[Pair, float] = {}
    for (u, v) in directed:
        pair = _key(u, v)
        if pair in out:
            continue
        out[pair] = (directed.get((u, v), 0.0) + directed.get((v, u), 0.0)) / 2.0
    return out


def build_task_graph(
    task_name: str,
    members: Iterable[str],
    directed: dict[tuple[str, str], float],
) -> TaskGraph:
    graph = TaskGraph(
        task_name=task_name,
        members=frozenset(members),
        weights=symmetrize(directed),
    )
    graph.validate()
    return graph


@dataclass(frozen=True)
class SubgraphPartition:
    subgraphs: tuple[tuple[str, ...], ...]
    modularity: float
    seed: int

    def validate(self, members: frozenset[str]) -> None:
        covered: list[str] = []
        for group in self.subgraphs:
            if not group:
                raise PartitionError("empty subgraph in partition")
            covered.extend(group)
        if len(covered) != len(set(covered)) or set(covered) != members:
            raise PartitionError("subgraphs do not partition the member set")

    def index_of(self, member: str) -> int | None:
        for idx, group in enumerate(self.subgraphs):
            if member in group:
                return idx
        return None

    def to_wire(self) -> dict[str, Any]:
        return {
            "subgraphs": [list(g) for g in self.subgraphs],
            "modularity": self.modularity,
            "seed": self.seed,
        }


def modularity(
    g: TaskGraph, groups: Sequence[Iterable[str]], resolution: float = 1.0
) -> float:
    """Weighted modularity of a disjoint cover of g's members."""
    m = sum(g.weights.values())
    if m == 0:
        return 0.0
    degree = {v: 0.0 for v in g.members}
    for (u, v), w in g.weights.items():
        degree[u] += w
        degree[v] += w
    q = 0.0
    for group in groups:
        nodes = set(group)
        intra = sum(
            w for (u, v), w in g.weights.items() if u in nodes and v in nodes
        )
        total_degree = sum(degree[v] for v in nodes)
        q += intra / m - resolution * (total_degree / (2.0 * m)) ** 2
    return q


class _MovingState:
    """Book-keeping for greedy modularity optimization.

    Nodes are visited in sorted-id order and communities are labeled by their
    smallest member, so every tie-break is a plain lexicographic comparison
    and the outcome is independent of hash ordering.
    """

    def __init__(self, g: TaskGraph, resolution: float):
        self.resolution = resolution
        self.m = sum(g.weights.values())
        self.nodes = sorted(g.members)
        self.adj: dict[str, dict[str, float]] = {v: {} for v in self.nodes}
        for (u, v), w in g.weights.items():
            if w > 0:
                self.adj[u][v] = self.adj[u].get(v, 0.0) + w
                self.adj[v][u] = self.adj[v].get(u, 0.0) + w
        self.degree = {v: sum(self.adj[v].values()) for v in self.nodes}
        self.community = {v: v for v in self.nodes}  # label = smallest member
        self.comm_degree = {v: self.degree[v] for v in self.nodes}
        self.comm_members: dict[str, set[str]] = {v: {v} for v in self.nodes}

    def _links_to_communities(self, node: str) -> dict[str, float]:
        links: dict[str, float] = {}
        for other, w in self.adj[node].items():
            c = self.community[other]
            links[c] = links.get(c, 0.0) + w
        return links

    def _relabel(self, comm: str) -> None:
        members = self.comm_members.pop(comm)
        label = min(members)
        self.comm_members[label] = members
        deg = self.comm_degree.pop(comm)
        self.comm_degree[label] = deg
        for v in members:
            self.community[v] = label

    def move_nodes(self) -> bool:
        """One-at-a-time node moves until no move improves modularity."""
        improved = False
        moved = True
        while moved:
            moved = False
            for node in self.nodes:
                current = self.community[node]
                k = self.degree[node]
                links = self._links_to_communities(node)
                # Detach node, then score candidate communities.
                self.comm_degree[current] -= k
                self.comm_members[current].discard(node)
                base_gain = (
                    links.get(current, 0.0) / self.m
                    - self.resolution * k * self.comm_degree[current] / (2.0 * self.m**2)
                )
                best_comm, best_gain = current, base_gain
                for cand in sorted(links):
                    if cand == current or not self.comm_members.get(cand):
                        continue
                    gain = (
                        links[cand] / self.m
                        - self.resolution * k * self.comm_degree[cand] / (2.0 * self.m**2)
                    )
                    if gain > best_gain + _GAIN_TOL:
                        best_comm, best_gain = cand, gain
                self.comm_degree[best_comm] = self.comm_degree.get(best_comm, 0.0) + k
                self.comm_members.setdefault(best_comm, set()).add(node)
                self.community[node] = best_comm
                if best_comm != current:
                    moved = improved = True
                    if not self.comm_members[current]:
                        del self.comm_members[current]
                        del self.comm_degree[current]
                    else:
                        self._relabel(current)
                    self._relabel(best_comm)
        return improved

    def merge_communities(self) -> bool:
        """Aggregation step: greedily merge connected communities while any
        merge improves modularity. Equivalent to local moving on the
        condensed graph, where a super-node is a whole community."""
        improved = False
        while True:
            between: dict[tuple[str, str], float] = {}
            for u in self.nodes:
                cu = self.community[u]
                for v, w in self.adj[u].items():
                    cv = self.community[v]
                    if cu < cv:
                        between[(cu, cv)] = between.get((cu, cv), 0.0) + w
            best_pair = None
            best_gain = _GAIN_TOL
            for pair in sorted(between):
                a, b = pair
                gain = (
                    between[pair] / self.m
                    - self.resolution
                    * self.comm_degree[a]
                    * self.comm_degree[b]
                    / (2.0 * self.m**2)
                )
                if gain > best_gain:
                    best_pair, best_gain = pair, gain
            if best_pair is None:
                return improved
            a, b = best_pair
            self.comm_members[a] |= self.comm_members.pop(b)
            self.comm_degree[a] += self.comm_degree.pop(b)
            for v in self.comm_members[a]:
                self.community[v] = a
            self._relabel(a)
            improved = True

    def partition(self) -> tuple[tuple[str, ...], ...]:
        groups = [tuple(sorted(g)) for g in self.comm_members.values()]
        return tuple(sorted(groups))


def louvain_partition(
    g: TaskGraph, seed: int, resolution: float = 1.0
) -> SubgraphPartition:
    """Greedy modularity maximization: alternating node-moving and
    community-aggregation passes from a singleton start.

    All tie-breaks are lexicographic, so the result is fully determined by
    the graph; the seed is recorded for provenance and reserved for variants
    that randomize visit order.
    """
    g.validate()
    if not g.members:
        raise PartitionError("cannot partition an empty task graph")

    total = sum(g.weights.values())
    if total == 0:
        singletons = tuple((v,) for v in sorted(g.members))
        return SubgraphPartition(subgraphs=singletons, modularity=0.0, seed=seed)

    state = _MovingState(g, resolution)
    while True:
        moved = state.move_nodes()
        merged = state.merge_communities()
        if not moved and not merged:
            break
    subgraphs = state.partition()
    part = SubgraphPartition(
        subgraphs=subgraphs,
        modularity=modularity(g, subgraphs, resolution),
        seed=seed,
    )
    part.validate(g.members)
    return part


@dataclass(frozen=True)
class KnowledgeEntry:
    pattern: str
    trigger: str
    action: str
    rationale: str
    verification: str
    scope: str
    frequency: tuple[int, int]  # (count, total)
    confidence: str
    evidence: tuple[str, ...]
    category: KnowledgeCategory = KnowledgeCategory.COLLECTIVE
    source_subgraph: int | None = None

    def validate(self) -> None:
        count, total = self.frequency
        if count > total:
            raise KnowledgeBaseError(
                f"entry {self.pattern!r}: frequency count {count} exceeds total {total}"
            )
        if count < 0 or total < 1:
            raise KnowledgeBaseError(f"entry {self.pattern!r}: bad frequency {self.frequency}")
        if not self.action:
            raise KnowledgeBaseError(f"entry {self.pattern!r}: action must be non-empty")
        if not self.evidence:
            raise KnowledgeBaseError(f"entry {self.pattern!r}: evidence must be non-empty")
        if self.confidence not in CONFIDENCE_LEVELS:
            raise KnowledgeBaseError(
                f"entry {self.pattern!r}: confidence {self.confidence!r} "
                f"not in {CONFIDENCE_LEVELS}"
            )

    def dedup_key(self) -> tuple[str, str]:
        return (self.pattern, self.action)

    def to_wire(self, validation_gain: float | None = None) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "pattern": self.pattern,
            "trigger": self.trigger,
            "action": self.action,
            "rationale": self.rationale,
            "verification": self.verification,
            "scope": self.scope,
            "confidence": self.confidence,
            "category": self.category.value,
            "provenance": {
                "frequency": {"count": self.frequency[0], "total": self.frequency[1]},
                "validation_gain": validation_gain,
                "evidence": list(self.evidence),
            },
        }
        if self.source_subgraph is not None:
            doc["source_subgraph"] = self.source_subgraph
        return doc

    @staticmethod
    def from_wire(doc: dict[str, Any]) -> "KnowledgeEntry":
        prov = doc["provenance"]
        entry = KnowledgeEntry(
            pattern=doc["pattern"],
            trigger=doc.get("trigger", ""),
            action=doc["action"],
            rationale=doc.get("rationale", ""),
            verification=doc.get("verification", ""),
            scope=doc.get("scope", ""),
            frequency=(prov["frequency"]["count"], prov["frequency"]["total"]),
            confidence=doc.get("confidence", "low"),
            evidence=tuple(prov["evidence"]),
            category=KnowledgeCategory(doc.get("category", "collective")),
            source_subgraph=doc.get("source_subgraph"),
        )
        entry.validate()
        return entry


@dataclass(frozen=True)
class KnowledgeBase:
    subgraph_id: int
    epoch: int
    entries: tuple[KnowledgeEntry, ...]
    validation_gain: dict[tuple[str, str], float] = field(default_factory=dict)

    def validate(self, eta: int) -> None:
        for entry in self.entries:
            entry.validate()
            if entry.frequency[0] < eta:
                raise KnowledgeBaseError(
                    f"entry {entry.pattern!r} retained below frequency threshold {eta}"
                )
            gain = self.validation_gain.get(entry.dedup_key())
            if gain is None or gain <= 0:
                raise KnowledgeBaseError(
                    f"entry {entry.pattern!r} retained without positive validation gain"
                )

    def to_wire(self) -> dict[str, Any]:
        return {
            "subgraph_id": self.subgraph_id,
            "epoch": self.epoch,
            "entries": [
                e.to_wire(self.validation_gain.get(e.dedup_key()))
                for e in self.entries
            ],
        }

    @staticmethod
    def from_wire(doc: dict[str, Any]) -> "KnowledgeBase":
        entries = tuple(KnowledgeEntry.from_wire(e) for e in doc["entries"])
        gains = {
            e.dedup_key(): raw["provenance"]["validation_gain"]
            for e, raw in zip(entries, doc["entries"])
        }
        return KnowledgeBase(
            subgraph_id=doc["subgraph_id"],
            epoch=doc["epoch"],
            entries=entries,
            validation_gain=gains,
        )


Outcome = tuple[str, Any, Any]  # (paper id, refined manifest, ExecutionFeedback)


class InductionAgent(Protocol):
    def induce(self, outcomes: Sequence[Outcome]) -> list[KnowledgeEntry]: ...


class ValidationHarness(Protocol):
    def entry_gains(self, entry: KnowledgeEntry) -> list[float]: ...


def induce_knowledge(
    subgraph_outcomes: Sequence[Outcome],
    inductor: InductionAgent,
    eta: int,
    validation: ValidationHarness,
    subgraph_id: int = 0,
    epoch: int = 0,
    min_val_runs: int = DEFAULT_MIN_VAL_RUNS,
) -> KnowledgeBase:
    """Propose, frequency-gate, and validation-gate entries for one subgraph.

    An entry survives only if its recurrence count reaches eta and its mean
    gap improvement over at least min_val_runs validation papers is strictly
    positive.
    """
    if not subgraph_outcomes:
        raise KnowledgeBaseError("no outcomes to induce from")
    if eta < 1:
        raise KnowledgeBaseError(f"eta must be >= 1, got {eta}")

    proposed = inductor.induce(subgraph_outcomes)
    retained: list[KnowledgeEntry] = []
    gains: dict[tuple[str, str], float] = {}
    for entry in proposed:
        entry.validate()
        if entry.frequency[0] < eta:
            continue
        samples = validation.entry_gains(entry)
        if len(samples) < min_val_runs:
            continue
        mean_gain = sum(samples) / len(samples)
        if mean_gain <= 0:
            continue
        retained.append(entry)
        gains[entry.dedup_key()] = mean_gain

    base = KnowledgeBase(
        subgraph_id=subgraph_id,
        epoch=epoch,
        entries=tuple(retained),
        validation_gain=gains,
    )
    base.validate(eta)
    return base


def subgraph_affinity(
    neighborhood: WeightedNeighborhood, partition: SubgraphPartition
) -> tuple[list[tuple[int, float]], list[tuple[str, float]]]:
    """Edge-weight mass of the pruned neighborhood inside each subgraph.

    Returns (affinities, unassigned): one (index, s_j) per subgraph, plus the
    neighbors falling outside every subgraph with their stranded weight.
    """
    affinities = [[idx, 0.0] for idx in range(len(partition.subgraphs))]
    unassigned: list[tuple[str, float]] = []
    for cid, _, weight in neighborhood.members:
        idx = partition.index_of(cid)
        if idx is None:
            unassigned.append((cid, weight))
        else:
            affinities[idx][1] += weight
    if unassigned:
        log.warning(
            "neighbors outside every subgraph: %s",
            ", ".join(cid for cid, _ in unassigned),
        )
    return [(idx, s) for idx, s in affinities], unassigned


def retrieve_knowledge(
    affinities: Sequence[tuple[int, float]],
    bases: dict[int, KnowledgeBase],
    top_k: int = DEFAULT_TOP_K,
) -> list[KnowledgeEntry]:
    """Union of the top_k highest-affinity subgraphs' entries.

    Deduplicated on (pattern, action); each entry is tagged with its source
    subgraph. Missing bases yield an empty result with a warning — retrieval
    never hard-fails a reproduction.
    """
    if top_k < 1:
        raise ReprographError(f"top_k must be >= 1, got {top_k}")
    if not bases:
        log.warning("no knowledge bases available; retrieval returns nothing")
        return []
    ranked = sorted(affinities, key=lambda a: (-a[1], a[0]))
    chosen = [idx for idx, _ in ranked[:top_k]]
    seen: set[tuple[str, str]] = set()
    result: list[KnowledgeEntry] = []
    for idx in chosen:
        base = bases.get(idx)
        if base is None:
            continue
        for entry in base.entries:
            if entry.dedup_key() in seen:
                continue
            seen.add(entry.dedup_key())
            result.append(replace(entry, source_subgraph=idx))
    return result
