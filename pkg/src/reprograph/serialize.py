"""Canonical JSON helpers.

Every artifact the engine persists goes through canonical_dumps so that
identical inputs produce byte-identical files, which the determinism
contracts and the crash-resume logic rely on.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any


def canonical_dumps(doc: Any, indent: int | None = 2) -> str:
    return json.dumps(doc, sort_keys=True, ensure_ascii=False, indent=indent)


def write_json(path: str | Path, doc: Any) -> None:
    Path(path).write_text(canonical_dumps(doc) + "\n", encoding="utf-8")


def read_json(path: str | Path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))
