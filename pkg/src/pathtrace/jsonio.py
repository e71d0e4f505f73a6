"""JSONL and CSV helpers with line-level error reporting."""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

from .errors import MalformedLine, SchemaMismatch


def dumps(obj):
    """Canonical single-line JSON (sorted keys, no whitespace drift)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_jsonl(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(dumps(row) + "\n")
    os.replace(tmp, path)


def append_jsonl(path, row):
    with open(path, "a", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(row) + "\n")
        fh.flush()


def read_jsonl(path, required=(), tolerate_partial_tail=False):
    """Parse one object per line.

    Raises MalformedLine naming the 1-based line for unparseable lines or
    missing ``required`` keys. With ``tolerate_partial_tail`` a truncated
    final line (a crashed append) is dropped instead.
    """
    rows = []
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
        complete_tail = True
    else:
        complete_tail = False
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            if tolerate_partial_tail and lineno == len(lines) and not complete_tail:
                break
            raise MalformedLine(str(path), lineno, f"invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise MalformedLine(str(path), lineno, "expected a JSON object")
        missing = [k for k in required if k not in obj]
        if missing:
            raise MalformedLine(str(path), lineno, f"missing keys {missing}")
        rows.append(obj)
    return rows


def check_schema(obj, expected, path="<memory>"):
    found = obj.get("schema_version")
    if found != expected:
        raise SchemaMismatch(f"{path}: schema_version {found!r}, expected {expected!r}")


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt_cell(v) for v in row])


def fmt_cell(v):
    if isinstance(v, float):
        return "" if v != v else f"{v:.6f}"
    if v is None:
        return ""
    return v


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))
