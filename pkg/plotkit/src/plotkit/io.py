"""Metrics JSONL ingestion and figure-spec validation (schema v1 only)."""

from __future__ import annotations

import json
import os


class PlotError(ValueError):
    pass


REQUIRED_SPEC_KEYS = {"figure", "metrics", "out"}
KNOWN_SPEC_KEYS = REQUIRED_SPEC_KEYS | {
    "group_by", "smoothing_window", "formats", "value", "x", "attackers",
    "methods", "temperatures", "episode", "title",
}


def load_spec(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            spec = json.load(fh)
        except json.JSONDecodeError as exc:
            raise PlotError(f"invalid figure spec JSON: {exc}") from exc
    return validate_spec(spec)


def validate_spec(spec: dict) -> dict:
    if not isinstance(spec, dict):
        raise PlotError("figure spec must be a JSON object")
    missing = REQUIRED_SPEC_KEYS - set(spec)
    if missing:
        raise PlotError(f"figure spec is missing keys: {sorted(missing)}")
    unknown = set(spec) - KNOWN_SPEC_KEYS
    if unknown:
        raise PlotError(f"unknown figure spec keys: {sorted(unknown)}")
    if spec["figure"] not in ("curves", "attack_bars", "step_probs"):
        raise PlotError(f"unknown figure kind {spec['figure']!r}")
    window = spec.get("smoothing_window", 1)
    if not isinstance(window, int) or window < 1:
        raise PlotError("smoothing_window must be a positive integer")
    formats = spec.get("formats", ["png", "svg"])
    for fmt in formats:
        if fmt not in ("png", "svg"):
            raise PlotError(f"unsupported image format {fmt!r}")
    files = spec["metrics"]
    if isinstance(files, str):
        files = [files]
    for f in files:
        if not os.path.exists(f):
            raise PlotError(f"metrics input does not exist: {f}")
    spec = dict(spec)
    spec["metrics"] = files
    spec["formats"] = formats
    spec["smoothing_window"] = window
    return spec


def read_rows(paths) -> list[dict]:
    """Rows from JSONL files or directories of *.jsonl, schema v1 only."""
    files: list[str] = []
    for p in paths:
        if os.path.isdir(p):
            files.extend(os.path.join(p, name) for name in sorted(os.listdir(p))
                         if name.endswith(".jsonl"))
        else:
            files.append(p)
    rows = []
    for f in files:
        with open(f, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                if row.get("v") != 1:
                    raise PlotError(
                        f"unsupported metrics schema v={row.get('v')!r} in {f}")
                rows.append(row)
    return rows


def require_column(rows: list[dict], column: str, context: str) -> None:
    if any(column not in row for row in rows):
        raise PlotError(f"{context}: rows are missing the {column!r} column")
