from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, List

COLUMNS = ("k", "n", "N", "messages_measured", "messages_formula", "latency_p50_ticks",
           "latency_p99_ticks", "throughput", "safety", "liveness")
CSV_HEADER = ",".join(COLUMNS)


class ExportError(OSError):
    pass


def _dicts(rows) -> List[dict]:
    return [r.as_dict() if hasattr(r, "as_dict") else dict(r) for r in rows]


def to_csv(rows: Iterable) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=COLUMNS, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for d in _dicts(rows):
        w.writerow({c: str(d[c]).lower() if isinstance(d[c], bool) else d[c] for c in COLUMNS})
    return buf.getvalue()


def to_json(rows: Iterable) -> str:
    return json.dumps({"columns": list(COLUMNS), "rows": [{c: d[c] for c in COLUMNS} for d in _dicts(rows)]},
                      indent=2)


def from_json(text: str) -> List[dict]:
    data = json.loads(text)
    if data.get("columns") != list(COLUMNS):
        raise ValueError("unexpected column layout")
    return data["rows"]


def export(rows, path, fmt: str = None):
    """Write rows as CSV or JSON; the format defaults to the file suffix."""
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".") or "csv"
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown export format {fmt!r}")
    text = to_csv(rows) if fmt == "csv" else to_json(rows)
    try:
        path.write_text(text)
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc}") from exc
    return path
