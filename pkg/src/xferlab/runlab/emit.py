"""Result tables and their CSV / JSON serialisation."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class ResultTable:
    columns: list[str]
    rows: list[dict] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def column(self, name):
        return [r.get(name) for r in self.rows]

    def where(self, **match) -> list[dict]:
        return [r for r in self.rows if all(r.get(k) == v for k, v in match.items())]


def format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return format(v, ".6g")
    return str(v)


def _round6(v):
    if isinstance(v, float):
        if not math.isfinite(v):
            return None
        return float(format(v, ".6g"))
    return v


def table_to_csv(table: ResultTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([format_cell(row.get(c)) for c in table.columns])
    return buf.getvalue()


def table_to_json(table: ResultTable) -> str:
    rows = [{c: _round6(r.get(c)) for c in table.columns} for r in table.rows]
    return json.dumps(rows, indent=2) + "\n"


def emit(table: ResultTable, path, fmt: str = "csv") -> Path:
    """Write ``table`` as RFC-4180 CSV or as a JSON array of row objects."""
    path = Path(path)
    if fmt == "csv":
        text = table_to_csv(table)
    elif fmt == "json":
        text = table_to_json(table)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    with open(path, "w", newline="") as f:
        f.write(text)
    return path


def _parse_cell(s: str):
    if s == "":
        return None
    if s in ("true", "false"):
        return s == "true"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def read_csv(path) -> ResultTable:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            columns = next(reader)
        except StopIteration:
            return ResultTable([])
        rows = [dict(zip(columns, (_parse_cell(v) for v in rec))) for rec in reader]
    return ResultTable(columns, rows)
