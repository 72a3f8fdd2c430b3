"""Result files: per-run JSON lines, a summary CSV, a summary JSON with
both spread conventions, and a long-format curves CSV with an optional
closed-form overlay."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from ..core import DataError
from ..synthgen import MixtureSpec
from ..theory import ds_uw_wga
from .experiment import RunRecord, summarize

SUMMARY_HEADER = ["method", "p", "mean_wga", "std_wga", "n"]
CURVES_HEADER = ["source", "method", "p", "wga", "std_wga"]


def _num(x) -> str:
    return repr(float(x))


def write_jsonl(records, path) -> None:
    with Path(path).open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")


def read_jsonl(path) -> list[RunRecord]:
    out = []
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(RunRecord(**json.loads(line)))
            except (json.JSONDecodeError, TypeError) as e:
                raise DataError("malformed-row", f"line {lineno}: {e}") from None
    return out


def theory_rows(spec: MixtureSpec, p_grid) -> list[list[str]]:
    rows = []
    for p in p_grid:
        pt = ds_uw_wga(spec, spec.pi0, p)
        rows.append(["theory", "erm", _num(p), _num(pt.wga_erm), ""])
        rows.append(["theory", "ds-uw", _num(p), _num(pt.wga_ds), ""])
    return rows


def report(records, out_dir, metric: str = "holdout", theory_spec: MixtureSpec | None = None) -> dict:
    """Write ``runs.jsonl``, ``summary.csv``, ``summary.json`` and
    ``curves.csv`` into ``out_dir``; returns their paths."""
    records = list(records)
    if not records:
        raise DataError("nothing-to-report", "no records")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / name for k, name in (
        ("runs", "runs.jsonl"), ("summary", "summary.csv"), ("summary_json", "summary.json"), ("curves", "curves.csv"))}
    write_jsonl(records, paths["runs"])
    summary = summarize(records, metric)
    with paths["summary"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for r in summary.rows:
            w.writerow([r.method, _num(r.p), _num(r.mean_wga), _num(r.std_wga), r.n])
    payload = {
        "metric": metric,
        "std_conventions": {
            "std_wga": "population std of per-seed mean WGA across noise seeds",
            "pooled_std": "population std over every individual run",
        },
        "rows": [r.__dict__ for r in summary.rows],
    }
    paths["summary_json"].write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    p_grid = sorted({r.p for r in summary.rows})
    with paths["curves"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVES_HEADER)
        for r in summary.rows:
            w.writerow(["sweep", r.method, _num(r.p), _num(r.mean_wga), _num(r.std_wga)])
        if theory_spec is not None:
            w.writerows(theory_rows(theory_spec, p_grid))
    return paths
