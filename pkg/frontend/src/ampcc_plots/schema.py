"""Reader for the bench CSV artifacts (schema "# ampcc-csv v1").

The plotter consumes files only; it recomputes nothing. Threshold lines and
intersection markers arrive via the sidecar JSON files written upstream.
"""

from __future__ import annotations

import json
from pathlib import Path

CSV_SCHEMA = "# ampcc-csv v1"


class SchemaError(ValueError):
    pass


def read_table(path):
    """Parse a schema-v1 CSV into {column: list of floats}."""
    path = Path(path)
    if not path.exists():
        raise SchemaError("input CSV does not exist: %s" % path)
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != CSV_SCHEMA:
            raise SchemaError("%s: expected header %r, got %r"
                              % (path, CSV_SCHEMA, header))
        columns = fh.readline().strip().split(",")
        if columns == [""]:
            raise SchemaError("%s: missing column row" % path)
        rows = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(columns):
                raise SchemaError("%s: ragged row %r" % (path, line))
            rows.append([float(x) for x in parts])
    if not rows:
        raise SchemaError("%s: no data rows" % path)
    return {c: [r[i] for r in rows] for i, c in enumerate(columns)}


def read_sidecar(path):
    with open(path) as fh:
        return json.load(fh)
