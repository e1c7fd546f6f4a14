"""Citation-graph-guided reproduction engine.

Submodules:
  graph      — paper/citation data model and JSONL persistence
  ssgp       — semantic neighbor pruning and tail-bound simulation
  relation   — relation-aware unit encapsulation and aggregation
  refine     — execution-feedback repair loop and the gap metric
  induction  — subgraph partitioning and knowledge-base lifecycle
  agent_io   — pluggable agent contracts, prompts, schemas, mocks
  pipeline   — end-to-end orchestration and artifact persistence
  cli        — command-line surface
  report     — figures and delimited summaries for finished runs
"""

from __future__ import annotations

__version__ = "0.1.0"
