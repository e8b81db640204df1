"""Canonical JSON helpers used wherever byte determinism matters."""

from __future__ import annotations

import json
from typing import Any


def canonical_dumps(obj: Any) -> str:
    """Serialize with sorted keys and compact separators.

    Floats go through ``repr``, which round-trips exactly, so re-serializing
    a loaded document reproduces the original bytes.
    """
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def canonical_jsonl(rows: list[Any]) -> str:
    """One canonical JSON object per line, with a trailing newline."""
    return "".join(canonical_dumps(row) + "\n" for row in rows)
