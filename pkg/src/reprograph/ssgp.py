"""Semantic neighbor pruning: ensemble rank aggregation and edge weights.

Reviewers each rank the candidate neighbors of a target paper. Ranks are
aggregated into a risk-averse composite score (mean rank plus a penalty on
rank dispersion), the lowest-scoring candidates are kept, and the survivors'
scores are converted to normalized edge weights with a stabilized softmax.

The module also ships a Monte-Carlo simulator that stress-tests the tail
bounds governing how likely a relevant neighbor is to be mis-ranked out of
the kept set under noisy reviewers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import BallotError, ReprographError
from .serialize import canonical_dumps

DEFAULT_REVIEWERS = 5
DEFAULT_LAMBDA = 0.5
DEFAULT_K_KEEP = 3

WEIGHT_SUM_TOL = 1e-9

NOISE_FAMILIES = ("bounded_variance", "sub_gaussian")


@dataclass(frozen=True)
class RankingBallot:
    """One reviewer's complete ranking of the candidate set.

    ranks maps candidate id to a 1-based rank and must be a permutation of
    1..N. provenance keeps fields the engine does not score on (confidence,
    rationale, the reviewer's unknown-info notes).
    """

    reviewer_id: str
    ranks: dict[str, int]
    provenance: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        n = len(self.ranks)
        if sorted(self.ranks.values()) != list(range(1, n + 1)):
            raise BallotError(
                f"reviewer {self.reviewer_id!r}: ranks are not a permutation "
                f"of 1..{n}: {dict(sorted(self.ranks.items()))}"
            )


@dataclass(frozen=True)
class RankAggregate:
    candidate_id: str
    mean_rank: float
    rank_std: float
    composite_score: float
    lam: float

    def to_wire(self) -> dict[str, Any]:
        return {
            "candidate_id": self.candidate_id,
            "mean_rank": self.mean_rank,
            "rank_std": self.rank_std,
            "composite_score": self.composite_score,
            "lambda": self.lam,
        }


@dataclass(frozen=True)
class WeightedNeighborhood:
    """Pruned neighbor set with normalized weights, ordered best first."""

    target_id: str
    members: tuple[tuple[str, float, float], ...]  # (candidate_id, score, weight)

    def weight_of(self, candidate_id: str) -> float:
        for cid, _, w in self.members:
            if cid == candidate_id:
                return w
        raise KeyError(candidate_id)

    def member_ids(self) -> tuple[str, ...]:
        return tuple(cid for cid, _, _ in self.members)

    def to_wire(self) -> dict[str, Any]:
        return {
            "target_id": self.target_id,
            "members": [
                {"candidate_id": cid, "composite_score": score, "weight": w}
                for cid, score, w in self.members
            ],
        }

    def wire_json(self) -> str:
        return canonical_dumps(self.to_wire())

    @staticmethod
    def from_wire(doc: dict[str, Any]) -> "WeightedNeighborhood":
        return WeightedNeighborhood(
            target_id=doc["target_id"],
            members=tuple(
                (m["candidate_id"], m["composite_score"], m["weight"])
                for m in doc["members"]
            ),
        )


def ballot_from_review(reviewer_id: str, review: dict[str, Any]) -> RankingBallot:
    """Convert a parsed reviewer response into a ballot.

    confidence/rationale/evidence and the unknown-info list do not affect
    scoring but are retained as provenance.
    """
    ranks = {item["paper_id"]: int(item["rank"]) for item in review["ranking"]}
    provenance = {
        "ranking": review["ranking"],
        "unknown": review.get("unknown", []),
    }
    ballot = RankingBallot(reviewer_id=reviewer_id, ranks=ranks, provenance=provenance)
    ballot.validate()
    return ballot


def aggregate_ranks(
    ballots: Sequence[RankingBallot], lam: float = DEFAULT_LAMBDA
) -> list[RankAggregate]:
    """Mean/std rank per candidate plus the composite score.

    The std uses the population divisor (the K ballots are a census of the
    reviewer ensemble, not a sample), so unanimous candidates get exactly 0.
    """
    if not ballots:
        raise BallotError("no ballots to aggregate")
    candidates = set(ballots[0].ranks)
    for ballot in ballots:
        ballot.validate()
        if set(ballot.ranks) != candidates:
            raise BallotError(
                f"reviewer {ballot.reviewer_id!r} ranked a different candidate "
                f"set than reviewer {ballots[0].reviewer_id!r}"
            )

    aggregates = []
    k = len(ballots)
    for cid in sorted(candidates):
        ranks = [b.ranks[cid] for b in ballots]
        mean = sum(ranks) / k
        std = math.sqrt(sum((r - mean) ** 2 for r in ranks) / k)
        aggregates.append(
            RankAggregate(
                candidate_id=cid,
                mean_rank=mean,
                rank_std=std,
                composite_score=mean + lam * std,
                lam=lam,
            )
        )
    return aggregates


def prune(aggregates: Sequence[RankAggregate], k_keep: int = DEFAULT_K_KEEP) -> list[RankAggregate]:
    """Keep the min(k_keep, N) lowest-scoring candidates.

    Sorted ascending by (composite_score, candidate_id); the id tie-break
    makes the kept set reproducible when scores collide.
    """
    if not aggregates:
        raise ReprographError("cannot prune an empty aggregate list")
    if k_keep < 1:
        raise ReprographError(f"k_keep must be positive, got {k_keep}")
    ordered = sorted(aggregates, key=lambda a: (a.composite_score, a.candidate_id))
    return ordered[: min(k_keep, len(ordered))]


def edge_weights(selected: Sequence[RankAggregate], target_id: str) -> WeightedNeighborhood:
    """softmax(-score) over the kept candidates, max-shift stabilized."""
    if not selected:
        raise ReprographError("cannot weight an empty selection")
    scores = [a.composite_score for a in selected]
    low = min(scores)  # exp(-(s - min s)) keeps every exponent <= 0
    exps = [math.exp(-(s - low)) for s in scores]
    total = sum(exps)
    members = tuple(
        (a.candidate_id, a.composite_score, e / total)
        for a, e in zip(selected, exps)
    )
    members = tuple(sorted(members, key=lambda m: (m[1], m[0])))
    return WeightedNeighborhood(target_id=target_id, members=members)


@dataclass(frozen=True)
class BoundSimConfig:
    noise_family: str
    lam: float
    k: int
    trials: int
    seed: int
    tail_exponent: float = 3.0  # bounded_variance family
    scale_c: float = 1.0  # sub_gaussian family

    def validate(self) -> None:
        if self.noise_family not in NOISE_FAMILIES:
            raise ReprographError(
                f"unknown noise family {self.noise_family!r}; pick from {NOISE_FAMILIES}"
            )
        if self.lam <= 0:
            raise ReprographError("lambda must be positive")
        if self.k < 1 or self.trials < 1:
            raise ReprographError("k and trials must be positive")
        if self.noise_family == "bounded_variance" and self.tail_exponent <= 2:
            raise ReprographError(
                "tail_exponent must exceed 2 so the noise variance is finite"
            )
        if self.noise_family == "sub_gaussian" and self.scale_c < 1:
            raise ReprographError("scale_c must be >= 1")


@dataclass(frozen=True)
class BoundReport:
    empirical_violation_prob: float
    analytic_bound: float
    mc_stderr: float


def analytic_bound(cfg: BoundSimConfig) -> float:
    if cfg.noise_family == "bounded_variance":
        bound = cfg.k / (1.0 + cfg.lam**2)
    else:
        bound = cfg.k * math.exp(-cfg.lam**2 / (2.0 * cfg.scale_c**2))
    return min(1.0, bound)


def _unit_variance_pareto(
    rng: np.random.Generator, tail_exponent: float, shape: tuple[int, int]
) -> np.ndarray:
    # Symmetric Pareto scaled to unit variance: |X| = x_m * U^(-1/alpha) with
    # E[X^2] = x_m^2 * alpha / (alpha - 2), so x_m = sqrt((alpha - 2) / alpha).
    x_m = math.sqrt((tail_exponent - 2.0) / tail_exponent)
    u = 1.0 - rng.random(shape)  # (0, 1], keeps U**(-1/alpha) finite
    signs = rng.integers(0, 2, shape) * 2 - 1
    return signs * x_m * u ** (-1.0 / tail_exponent)


def simulate_pruning_bound(cfg: BoundSimConfig) -> BoundReport:
    """Estimate the probability that any of K candidates exceeds its
    lambda-sigma envelope, and compare against the analytic tail bound.

    Noisy ranks are R(u) = mu(u) + sigma(u) * X(u); the violation event
    {exists u: R(u) >= mu(u) + lambda * sigma(u)} reduces to {exists u:
    X(u) >= lambda} for standardized noise X, so mu and sigma drop out.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    if cfg.noise_family == "bounded_variance":
        noise = _unit_variance_pareto(rng, cfg.tail_exponent, (cfg.trials, cfg.k))
    else:
        noise = rng.standard_normal((cfg.trials, cfg.k)) * cfg.scale_c
    violated = (noise >= cfg.lam).any(axis=1)
    p_hat = float(violated.mean())
    stderr = math.sqrt(p_hat * (1.0 - p_hat) / cfg.trials)
    return BoundReport(
        empirical_violation_prob=p_hat,
        analytic_bound=analytic_bound(cfg),
        mc_stderr=stderr,
    )


SWEEP_COLUMNS = ("family", "lambda", "K", "trials", "empirical", "bound", "stderr")


def sweep_rows(configs: Iterable[BoundSimConfig]) -> list[dict[str, Any]]:
    rows = []
    for cfg in configs:
        report = simulate_pruning_bound(cfg)
        rows.append(
            {
                "family": cfg.noise_family,
                "lambda": cfg.lam,
                "K": cfg.k,
                "trials": cfg.trials,
                "empirical": report.empirical_violation_prob,
                "bound": report.analytic_bound,
                "stderr": report.mc_stderr,
            }
        )
    return rows


def write_sweep_csv(rows: Sequence[dict[str, Any]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
