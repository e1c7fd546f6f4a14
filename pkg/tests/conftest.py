"""Shared fixtures and builders for the test suite."""

from __future__ import annotations

import random

from reprograph.graph import CitationGraph, PaperNode


def make_node(
    paper_id: str,
    split: str = "train",
    code_ref: str | None = None,
    release_date: str = "2023-01-01",
    title: str | None = None,
    method: str = "standard method text",
    experiments: str = "standard experiments text",
    **extra,
) -> PaperNode:
    return PaperNode(
        id=paper_id,
        title=title if title is not None else f"Paper {paper_id}",
        doc_sections={"method": method, "experiments": experiments},
        code_ref=code_ref,
        release_date=release_date,
        split=split,
        extra=extra,
    )


def random_graph(rng: random.Random, n_nodes: int, edge_prob: float = 0.1) -> CitationGraph:
    nodes = [
        make_node(
            f"p{i:04d}",
            split=rng.choice(["train", "validation", "external"]),
            code_ref=f"code/p{i:04d}" if rng.random() < 0.5 else None,
            release_date=f"20{rng.randint(10, 23)}-0{rng.randint(1, 9)}-1{rng.randint(0, 9)}",
        )
        for i in range(n_nodes)
    ]
    edges = [
        (a.id, b.id)
        for a in nodes
        for b in nodes
        if a.id != b.id and rng.random() < edge_prob
    ]
    return CitationGraph(nodes=tuple(nodes), edges=tuple(edges))
