"""Loaders for the JSON files the plotting layer consumes.

Two document types are understood:

* analysis documents (schema tag ``renyiqmc-analysis/1``): ratio curves per
  lattice size plus optional crossing / collapse fits, and
* per-run summaries (schema tag ``renyiqmc-summary/1``): one estimate table
  per simulated parameter point, found as ``*/summary.json`` under a sweep
  directory.

Every loader validates the fields it needs and reports missing or malformed
ones by name through :class:`PlotsError` so CLI users get an actionable
message instead of a traceback.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any

ANALYSIS_SCHEMA = "renyiqmc-analysis/1"
SUMMARY_SCHEMA = "renyiqmc-summary/1"


class PlotsError(Exception):
    """A problem with plot inputs or options, phrased for end users."""


def _read_json(path: Path) -> Any:
    if not path.exists():
        raise PlotsError(f"input file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        raise PlotsError(f"could not parse {path}: {exc}") from exc


def _require_keys(doc: dict, keys: tuple[str, ...], where: str) -> None:
    missing = [key for key in keys if key not in doc]
    if missing:
        raise PlotsError(f"{where} is missing key(s): {', '.join(missing)}")


def _check_schema(doc: Any, expected: str, path: Path) -> None:
    if not isinstance(doc, dict):
        raise PlotsError(f"{path} does not contain a JSON object")
    tag = doc.get("schema")
    if tag != expected:
        raise PlotsError(
            f"{path} has schema {tag!r}, expected {expected!r}"
        )


def load_analysis(path: str | Path) -> dict:
    """Load and validate an analysis document.

    Returns the parsed dict.  Curve points are checked to be
    ``[x, value, stderr]`` triples with finite x and value.
    """
    path = Path(path)
    doc = _read_json(path)
    _check_schema(doc, ANALYSIS_SCHEMA, path)
    _require_keys(doc, ("curves",), f"{path}")
    curves = doc["curves"]
    if not isinstance(curves, list):
        raise PlotsError(f"{path}: 'curves' must be a list")
    for idx, curve in enumerate(curves):
        if not isinstance(curve, dict):
            raise PlotsError(f"{path}: curve #{idx} is not an object")
        _require_keys(curve, ("L", "points"), f"{path} curve #{idx}")
        points = curve["points"]
        if not isinstance(points, list) or not points:
            raise PlotsError(
                f"{path}: curve #{idx} (L={curve.get('L')}) has no points"
            )
        for pidx, point in enumerate(points):
            if not isinstance(point, (list, tuple)) or len(point) < 3:
                raise PlotsError(
                    f"{path}: curve #{idx} point #{pidx} must be "
                    "[x, value, stderr]"
                )
            x, value = point[0], point[1]
            if not (math.isfinite(float(x)) and math.isfinite(float(value))):
                raise PlotsError(
                    f"{path}: curve #{idx} point #{pidx} has non-finite "
                    "x or value"
                )
    return doc


def curve_arrays(doc: dict) -> list[tuple[int, list[float], list[float], list[float]]]:
    """Extract ``(L, xs, values, stderrs)`` per curve, sorted by L."""
    out = []
    for curve in doc["curves"]:
        points = sorted((tuple(map(float, p[:3])) for p in curve["points"]))
        xs = [p[0] for p in points]
        vals = [p[1] for p in points]
        errs = [p[2] for p in points]
        out.append((int(curve["L"]), xs, vals, errs))
    out.sort(key=lambda item: item[0])
    return out


def load_summary(path: str | Path) -> dict:
    """Load and validate one per-run summary document."""
    path = Path(path)
    doc = _read_json(path)
    _check_schema(doc, SUMMARY_SCHEMA, path)
    _require_keys(doc, ("params", "estimates"), f"{path}")
    _require_keys(doc["params"], ("J", "p", "beta"), f"{path} params")
    return doc


def load_sweep_summaries(sweep_dir: str | Path) -> list[dict]:
    """Collect every ``*/summary.json`` under a sweep directory."""
    sweep_dir = Path(sweep_dir)
    if not sweep_dir.is_dir():
        raise PlotsError(f"sweep directory not found: {sweep_dir}")
    paths = sorted(sweep_dir.glob("*/summary.json"))
    if not paths:
        raise PlotsError(f"no */summary.json files under {sweep_dir}")
    return [load_summary(p) for p in paths]


def summary_quantity(doc: dict, quantity: str, where: str = "summary") -> tuple[float, float]:
    """Pull ``(value, stderr)`` of one named estimate out of a summary."""
    estimates = doc["estimates"]
    if quantity not in estimates:
        have = ", ".join(sorted(estimates)) or "none"
        raise PlotsError(
            f"{where} has no estimate named {quantity!r} (available: {have})"
        )
    entry = estimates[quantity]
    _require_keys(entry, ("value", "stderr"), f"{where} estimate {quantity!r}")
    return float(entry["value"]), float(entry["stderr"])
