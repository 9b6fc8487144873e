"""CSV time series and JSONL check records with a config-hash header."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

THRESHOLD_PASS = "pass"
THRESHOLD_FAIL = "fail"


def fmt(x) -> str:
    """Float with 17 significant digits; integers and strings unchanged."""
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return format(x, ".17g")
    try:
        return format(float(x), ".17g")
    except (TypeError, ValueError):
        return str(x)


def _jsonable(x):
    if isinstance(x, (bool, int, str)) or x is None:
        return x
    try:
        v = float(x)
    except (TypeError, ValueError):
        return str(x)
    return None if math.isnan(v) else float(format(v, ".17g"))


@dataclass
class Check:
    name: str
    residual: float
    threshold: float
    relation: str = "<"  # residual < threshold passes; ">" for must-exceed checks

    @property
    def passed(self) -> bool:
        if self.residual is None or math.isnan(self.residual):
            return False
        return self.residual < self.threshold if self.relation == "<" else self.residual > self.threshold

    def record(self) -> dict:
        return {
            "name": self.name,
            "residual": _jsonable(self.residual),
            "threshold": _jsonable(self.threshold),
            "relation": self.relation,
            "status": THRESHOLD_PASS if self.passed else THRESHOLD_FAIL,
        }


@dataclass
class RunSummary:
    config_hash: str
    checks: list[Check] = field(default_factory=list)
    files: list[str] = field(default_factory=list)
    wall_time: float = 0.0

    def add(self, name: str, residual: float, threshold: float, relation: str = "<") -> Check:
        if any(c.name == name for c in self.checks):
            raise ValueError(f"check {name!r} declared twice")
        c = Check(name, float(residual), float(threshold), relation)
        self.checks.append(c)
        return c

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _open(path: str):
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    try:
        return open(path, "w", encoding="utf-8", newline="")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_csv(path: str, header, rows, config_hash: str) -> str:
    with _open(path) as fh:
        fh.write(f"# config_hash: {config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for row in rows:
            w.writerow([fmt(x) for x in row])
    return path


def write_jsonl(path: str, records, config_hash: str) -> str:
    with _open(path) as fh:
        fh.write(json.dumps({"config_hash": config_hash}, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps({k: _jsonable(v) if not isinstance(v, (list, dict)) else v
                                 for k, v in rec.items()}, sort_keys=True) + "\n")
    return path


def read_csv(path: str):
    """``(config_hash, header, rows)`` of a file written by ``write_csv``."""
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline().strip()
        h = first.split(":", 1)[1].strip() if first.startswith("# config_hash:") else None
        rows = list(csv.reader(fh))
    return h, rows[0] if rows else [], [[float(x) for x in r] for r in rows[1:]]


def write_summary(path: str, summary: RunSummary) -> str:
    """One record per check, then a manifest record.  Wall time is not written."""
    records = [c.record() for c in summary.checks]
    records.append({"manifest": sorted(os.path.basename(f) for f in summary.files)})
    return write_jsonl(path, records, summary.config_hash)
