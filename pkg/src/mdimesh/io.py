"""CSV and JSON output with schema tags, plus validating readers."""
from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path

import numpy as np

__all__ = ["write_csv", "read_csv", "write_json", "read_json", "to_jsonable", "default_out_dir", "OUT_ENV"]

OUT_ENV = "MDIMESH_OUT"


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def read_csv(path, header=None) -> list[dict]:
    """Read a CSV written by :func:`write_csv`; checks the header when given."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    if header is not None and tuple(rows[0]) != tuple(header):
        raise ValueError(f"{path}: header {rows[0]} != {list(header)}")
    return [dict(zip(rows[0], r)) for r in rows[1:]]


def write_json(path, schema: str, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"schema": schema, **{k: v for k, v in to_jsonable(payload).items() if k != "schema"}}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True, ensure_ascii=False)
        fh.write("\n")
    return path


def read_json(path, schema: str | None = None) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if "schema" not in doc:
        raise ValueError(f"{path}: missing schema field")
    if schema is not None and doc["schema"] != schema:
        raise ValueError(f"{path}: schema {doc['schema']!r} != {schema!r}")
    return doc


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "mdimesh-out"))
