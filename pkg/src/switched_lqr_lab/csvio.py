"""CSV emission with the versioned schema header.

Every file starts with the comment line ``# switched-lqr-lab v1`` followed
by a plain header row; floats are written with ``repr`` so files are
byte-stable across identical runs.
"""

from __future__ import annotations

import csv
import io

SCHEMA_LINE = "# switched-lqr-lab v1"


def format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header: list[str], rows) -> None:
    buf = io.StringIO()
    buf.write(SCHEMA_LINE + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_cell(v) for v in row])
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
        if first != SCHEMA_LINE:
            raise ValueError(f"unsupported schema line {first!r}")
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]
