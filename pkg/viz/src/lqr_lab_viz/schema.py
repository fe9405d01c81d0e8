"""Versioned CSV reading for the lab's result files.

The renderers never recompute statistics; every number plotted comes
straight out of the CSV.
"""

from __future__ import annotations

import csv

SCHEMA_LINE = "# switched-lqr-lab v1"


class SchemaError(ValueError):
    pass


def read_rows(path: str, required: tuple[str, ...]) -> list[dict[str, str]]:
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
        if first != SCHEMA_LINE:
            raise SchemaError(f"{path}: expected schema line {SCHEMA_LINE!r}, got {first!r}")
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    missing = [col for col in required if col not in rows[0]]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing}")
    return rows


def as_float(value: str, default: float = float("nan")) -> float:
    return float(value) if value not in ("", None) else default
