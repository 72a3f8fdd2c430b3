"""CSV storage for labeled embeddings.

Layout: header ``x0,...,x{m-1},y,d`` with an optional trailing ``d_tilde``
column. Features are written with 17 significant digits, which round-trips
IEEE doubles exactly; labels are integers. A sidecar ``<file>.json`` may
carry ``num_classes``, ``num_domains`` and free-form metadata such as group
names.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from ..core import DataError, LabeledDataset


def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def expected_header(m: int, with_d_tilde: bool = False) -> list[str]:
    cols = [f"x{j}" for j in range(m)] + ["y", "d"]
    return cols + ["d_tilde"] if with_d_tilde else cols


def save_csv(data: LabeledDataset, path, meta: dict | None = None) -> None:
    path = Path(path)
    with_dt = data.d_tilde is not None
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(expected_header(data.m, with_dt))
        for i in range(data.n):
            row = ["%.17g" % v for v in data.features[i]] + [int(data.y[i]), int(data.d[i])]
            if with_dt:
                row.append(int(data.d_tilde[i]))
            w.writerow(row)
    side = {"num_classes": data.num_classes, "num_domains": data.num_domains}
    side.update(meta or {})
    sidecar_path(path).write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")


def read_sidecar(path) -> dict:
    sp = sidecar_path(path)
    if not sp.exists():
        return {}
    try:
        return json.loads(sp.read_text())
    except json.JSONDecodeError as e:
        raise DataError("malformed-metadata", f"{sp}: {e}") from None


def _int_label(tok: str, lineno: int, name: str) -> int:
    try:
        v = float(tok)
    except ValueError:
        raise DataError("malformed-row", f"line {lineno}: {name}={tok!r} is not a number") from None
    if v != int(v) or v < 0:
        raise DataError("invalid-label", f"line {lineno}: {name}={tok!r} is not a non-negative integer")
    return int(v)


def load_embeddings(path, schema: dict | None = None) -> LabeledDataset:
    """Parse a labeled-embedding CSV.

    ``schema`` may fix ``m``, ``num_classes``, ``num_domains`` and
    ``d_tilde`` (bool). Explicit schema values win over the sidecar, which
    wins over inference from the data. Errors name the offending line.
    """
    path = Path(path)
    if not path.exists():
        raise DataError("missing-file", str(path))
    schema = dict(schema or {})
    side = read_sidecar(path)
    with path.open(newline="") as fh:
        rows = csv.reader(fh)
        try:
            header = [h.strip() for h in next(rows)]
        except StopIteration:
            raise DataError("schema-mismatch", "line 1: empty file") from None
        with_dt = bool(header) and header[-1] == "d_tilde"
        m = len(header) - (3 if with_dt else 2)
        if m < 1 or header != expected_header(m, with_dt):
            raise DataError("schema-mismatch", f"line 1: unexpected header {header}")
        if "m" in schema and schema["m"] != m:
            raise DataError("schema-mismatch", f"line 1: {m} feature columns, schema expects {schema['m']}")
        if "d_tilde" in schema and bool(schema["d_tilde"]) != with_dt:
            raise DataError("schema-mismatch", "line 1: d_tilde column presence differs from schema")
        K = schema.get("num_classes", side.get("num_classes"))
        M = schema.get("num_domains", side.get("num_domains"))
        X, Y, D, DT = [], [], [], []
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError("schema-mismatch", f"line {lineno}: {len(row)} fields, header has {len(header)}")
            try:
                X.append([float(t) for t in row[:m]])
            except ValueError:
                raise DataError("malformed-row", f"line {lineno}: non-numeric feature") from None
            y = _int_label(row[m], lineno, "y")
            d = _int_label(row[m + 1], lineno, "d")
            if K is not None and y >= K:
                raise DataError("invalid-label", f"line {lineno}: y={y} outside {K} classes")
            if M is not None and d >= M:
                raise DataError("invalid-label", f"line {lineno}: d={d} outside {M} domains")
            Y.append(y)
            D.append(d)
            if with_dt:
                dt = _int_label(row[m + 2], lineno, "d_tilde")
                if dt > 1:
                    raise DataError("invalid-label", f"line {lineno}: d_tilde={dt} must be 0 or 1")
                DT.append(dt)
    if not Y:
        raise DataError("empty-dataset", f"{path}: no rows")
    feats = np.array(X, dtype=float).reshape(len(Y), m)
    return LabeledDataset(
        feats,
        np.array(Y, dtype=np.int64),
        np.array(D, dtype=np.int64),
        np.array(DT, dtype=np.int64) if with_dt else None,
        K,
        M,
    )
