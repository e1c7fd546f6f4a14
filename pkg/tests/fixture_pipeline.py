"""Synthetic five-paper corpus with scripted agent behavior.

The target paper cites three code-bearing neighbors (encoder, augmentation,
probe) plus one without code. Scripted relation annotations mark units for
reuse/adapt/new, and the scripted repair plan rewrites the entry file into a
driver whose RESULTS equal the official metrics, so a full mock run converges
to gap zero deterministically.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from reprograph.agent_io import MockProfile

TARGET = "p_target"
NEIGHBOR_ENCODER = "p_enc"
NEIGHBOR_AUGMENT = "p_aug"
NEIGHBOR_PROBE = "p_far"
NEIGHBOR_NO_CODE = "p_tab"

OFFICIAL = {
    TARGET: {"accuracy": 0.5, "f1": 0.4},
    NEIGHBOR_ENCODER: {"score": 0.62},
    NEIGHBOR_AUGMENT: {"score": 0.57},
    NEIGHBOR_PROBE: {"score": 0.8},
}

_SECTIONS = {
    TARGET: {
        "method": (
            "We learn a tabular row encoder with contrastive training; "
            "column dropout augmentation builds positive pairs."
        ),
        "experiments": (
            "A linear probe evaluation on adult and covertype reports "
            "accuracy and f1."
        ),
    },
    NEIGHBOR_ENCODER: {
        "method": (
            "A tabular row encoder maps numeric columns into embeddings "
            "with contrastive training."
        ),
        "experiments": "Embedding quality measured on adult.",
    },
    NEIGHBOR_AUGMENT: {
        "method": (
            "Column dropout augmentation builds contrastive positive pairs "
            "for tabular rows."
        ),
        "experiments": "Ablation over dropout rates.",
    },
    NEIGHBOR_PROBE: {
        "method": "A linear probe protocol for representation evaluation.",
        "experiments": "Probe sweep on covertype.",
    },
    NEIGHBOR_NO_CODE: {
        "method": "A survey of tabular learning benchmarks.",
        "experiments": "None reported.",
    },
}

_CODE_FILES = {
    f"code/{NEIGHBOR_ENCODER}/model.py": (
        "def build_encoder(dim):\n"
        "    return {\"dim\": dim, \"layers\": 2}\n"
        "\n"
        "\n"
        "def encode_batch(rows, dim):\n"
        "    return [[float(v) * 0.5 for v in row[:dim]] for row in rows]\n"
    ),
    f"code/{NEIGHBOR_AUGMENT}/augment.py": (
        "def column_dropout(row, rate):\n"
        "    keep = 1.0 - rate\n"
        "    return [v * keep for v in row]\n"
    ),
    f"code/{NEIGHBOR_PROBE}/probe.py": (
        "def linear_probe(features, labels):\n"
        "    hits = sum(1 for f, y in zip(features, labels) if (f >= 0.5) == bool(y))\n"
        "    return hits / max(1, len(labels))\n"
    ),
}


def _node(
    paper_id: str,
    split: str,
    release_date: str,
    code_ref: str | None,
) -> dict[str, Any]:
    record: dict[str, Any] = {
        "kind": "node",
        "id": paper_id,
        "title": f"paper {paper_id}",
        "sections": _SECTIONS[paper_id],
        "code_ref": code_ref,
        "release_date": release_date,
        "split": split,
    }
    if paper_id in OFFICIAL:
        record["official_metrics"] = OFFICIAL[paper_id]
    return record


def driver_code(metrics: dict[str, float]) -> str:
    """Replacement entry file whose RESULTS reproduce the official metrics."""
    body = json.dumps(metrics, sort_keys=True)
    return (
        "def train_and_report():\n"
        f"    return {body}\n"
        "\n"
        "\n"
        "RESULTS = train_and_report()\n"
    )


def correct_plan(paper_id: str) -> dict[str, Any]:
    return {
        "diagnosis": "the assembled units are defined but never invoked",
        "root_cause": "no driver produces a RESULTS mapping",
        "edit_units": ["training_loop"],
        "edits": [
            {
                "file": "main.py",
                "change_type": "modify",
                "diff": driver_code(OFFICIAL[paper_id]),
                "risk": "low",
            }
        ],
        "expected_outcome": "RESULTS matches the official report",
        "fallback": "none",
        "no_op": False,
    }


RELATION_SCRIPTS = {
    f"{TARGET}|{NEIGHBOR_ENCODER}": {
        "reusable_units": [
            {
                "unit_name": "build_encoder",
                "description": "constructs the tabular encoder",
                "code_location": "model.py:build_encoder",
                "evidence": "method section",
                "risk": "low",
            }
        ],
        "adaptable_units": [
            {
                "unit_name": "encode_batch",
                "description": "batch encoding pass",
                "code_location": "model.py:encode_batch",
                "diff_instruction": "accept variable-width rows",
                "evidence": "experiments section",
                "risk": "medium",
            }
        ],
        "new_units": [],
    },
    f"{TARGET}|{NEIGHBOR_AUGMENT}": {
        "reusable_units": [
            {
                "unit_name": "column_dropout",
                "description": "dropout-based positive pair construction",
                "code_location": "augment.py:column_dropout",
                "evidence": "method section",
                "risk": "low",
            }
        ],
        "adaptable_units": [],
        "new_units": [
            {
                "unit_name": "training_loop",
                "description": "end-to-end optimization loop",
                "reason": "schedule is specific to the target",
                "evidence": "experiments section",
            }
        ],
    },
    f"{TARGET}|{NEIGHBOR_PROBE}": {
        "reusable_units": [
            {
                "unit_name": "linear_probe",
                "description": "frozen-feature probe evaluation",
                "code_location": "probe.py:linear_probe",
                "evidence": "experiments section",
                "risk": "low",
            }
        ],
        "adaptable_units": [],
        "new_units": [],
    },
}

INDUCTION_ENTRIES = [
    {
        "pattern": "seed everything before sampling",
        "trigger": "metrics drift across reruns",
        "action": "set one seed for all samplers at startup",
        "frequency": "2/2",
        "confidence": "high",
        "evidence": ["p_enc run log", "p_aug run log"],
        "rationale": "both members stabilized after seeding",
        "verification": "rerun twice and diff the metrics",
        "scope": "any stochastic pipeline",
    },
    {
        "pattern": "normalize columns before encoding",
        "trigger": "loss plateaus immediately",
        "action": "scale each numeric column to unit variance",
        "frequency": "1/2",
        "confidence": "medium",
        "evidence": ["p_enc run log"],
        "rationale": "seen once; may be dataset-specific",
        "verification": "compare loss curves",
        "scope": "tabular encoders",
    },
]


def profile_doc(plan_repeats: int = 4) -> dict[str, Any]:
    """JSON-serializable behavior profile for the corpus.

    plan_repeats controls how many identical correct plans each paper's
    script holds; training loops re-reproduce members every epoch and each
    full reproduction consumes one plan.
    """
    return {
        "relation_scripts": RELATION_SCRIPTS,
        "plan_scripts": {
            paper_id: [correct_plan(paper_id)] * plan_repeats
            for paper_id in OFFICIAL
        },
        "induction_scripts": {"0": INDUCTION_ENTRIES},
    }


def profile(plan_repeats: int = 4) -> MockProfile:
    doc = profile_doc(plan_repeats)
    return MockProfile(
        relation_scripts=doc["relation_scripts"],
        plan_scripts=doc["plan_scripts"],
        induction_scripts=doc["induction_scripts"],
    )


def build_corpus(root: Path) -> Path:
    """Write the graph file and neighbor code tree; returns the graph path."""
    records = [
        _node(TARGET, "test", "2025-03-01", None),
        _node(NEIGHBOR_ENCODER, "train", "2023-05-01", f"code/{NEIGHBOR_ENCODER}"),
        _node(NEIGHBOR_AUGMENT, "train", "2023-08-01", f"code/{NEIGHBOR_AUGMENT}"),
        _node(NEIGHBOR_PROBE, "validation", "2024-02-01", f"code/{NEIGHBOR_PROBE}"),
        _node(NEIGHBOR_NO_CODE, "external", "2022-01-01", None),
        {"kind": "edge", "from": TARGET, "to": NEIGHBOR_ENCODER},
        {"kind": "edge", "from": TARGET, "to": NEIGHBOR_AUGMENT},
        {"kind": "edge", "from": TARGET, "to": NEIGHBOR_PROBE},
        {"kind": "edge", "from": TARGET, "to": NEIGHBOR_NO_CODE},
        {"kind": "edge", "from": NEIGHBOR_ENCODER, "to": NEIGHBOR_AUGMENT},
    ]
    root.mkdir(parents=True, exist_ok=True)
    graph_path = root / "graph.jsonl"
    graph_path.write_text(
        "\n".join(json.dumps(r, sort_keys=True) for r in records) + "\n",
        encoding="utf-8",
    )
    for rel, content in _CODE_FILES.items():
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content, encoding="utf-8")
    return graph_path


def write_profile(root: Path, plan_repeats: int = 4) -> Path:
    path = root / "profile.json"
    path.write_text(
        json.dumps(profile_doc(plan_repeats), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return path
