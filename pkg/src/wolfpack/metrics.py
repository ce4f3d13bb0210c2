"""Append-only JSONL metrics with a versioned schema, plus export helpers.

Every row is one JSON object with ``"v": 1`` and a ``kind`` discriminator:

- ``train_episode``: per-episode training curve point (returns, losses).
- ``eval_episode`` / ``eval_summary``: evaluation rows per attacker.
- ``attack``: one attacked step (window id, targets, joint-value drop).
- ``stepprob``: one firing decision (forecast vector, probability, fired).
"""

from __future__ import annotations

import csv
import json
import os

SCHEMA_VERSION = 1

KIND_FIELDS = {
    "curves": ("train_episode", "eval_episode", "eval_summary"),
    "attacks": ("attack",),
    "stepprobs": ("stepprob",),
}


class MetricsWriter:
    """Single-writer JSONL sink; common fields are stamped on every row."""

    def __init__(self, path, run_id: str, seed: int, method: str,
                 cell: str | None = None):
        self.path = str(path)
        self.common = {"v": SCHEMA_VERSION, "run": run_id, "seed": seed,
                       "method": method}
        if cell is not None:
            self.common["cell"] = cell
        os.makedirs(os.path.dirname(self.path) or ".", exist_ok=True)
        self._fh = open(self.path, "a", encoding="utf-8")

    def write(self, kind: str, **fields) -> None:
        row = dict(self.common)
        row["kind"] = kind
        row.update(fields)
        self._fh.write(json.dumps(row, sort_keys=True) + "\n")

    def flush(self) -> None:
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(paths) -> list[dict]:
    """Load rows from JSONL files (or all *.jsonl under directories)."""
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    files: list[str] = []
    for p in paths:
        p = str(p)
        if os.path.isdir(p):
            for name in sorted(os.listdir(p)):
                if name.endswith(".jsonl"):
                    files.append(os.path.join(p, name))
        else:
            files.append(p)
    rows = []
    for f in files:
        with open(f, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rows.append(json.loads(line))
    return rows


def export_rows(metrics_path, what: str, fmt: str, out_path=None) -> str:
    """Filter rows by topic and write them as jsonl or csv; returns output."""
    if what not in KIND_FIELDS:
        raise ValueError(f"unknown export topic {what!r}; "
                         f"expected one of {sorted(KIND_FIELDS)}")
    if fmt not in ("jsonl", "csv"):
        raise ValueError(f"unknown format {fmt!r}; expected jsonl or csv")
    rows = [r for r in read_metrics(metrics_path)
            if r.get("kind") in KIND_FIELDS[what]]
    if out_path is None:
        out_path = f"{what}.{fmt}"
    if fmt == "jsonl":
        with open(out_path, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        return out_path
    columns: list[str] = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    columns.sort()
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            flat = {k: (json.dumps(v) if isinstance(v, (list, dict)) else v)
                    for k, v in row.items()}
            writer.writerow(flat)
    return out_path
