"""Study records: JSON persistence, CSV tables and plot data."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

SCHEMA_TAG = "stoch-unfold/study-result/v1"

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "kind", "config", "tables", "flags", "timings"],
    "additionalProperties": False,
    "properties": {
        "schema": {"const": SCHEMA_TAG},
        "kind": {"type": "string"},
        "config": {"type": "object"},
        "tables": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "additionalProperties": {
                    "type": "array",
                    "items": {"type": ["number", "string", "integer", "null", "boolean"]},
                },
            },
        },
        "flags": {"type": "object", "additionalProperties": {"type": "boolean"}},
        "timings": {"type": "object", "additionalProperties": {"type": "number"}},
    },
}


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_clean(v) for v in (x.tolist() if isinstance(x, np.ndarray) else x)]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return None if math.isnan(x) or math.isinf(x) else x
    return x


@dataclass
class StudyResult:
    """Record of one study.

    ``tables`` maps a table name to named, equally long columns. ``flags``
    holds one boolean per checked invariant. ``timings`` is wall-clock
    seconds per stage and is the only nondeterministic part.
    """

    kind: str
    config: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.flags.values())

    def to_dict(self, timings: bool = True) -> dict:
        out = {
            "schema": SCHEMA_TAG,
            "kind": self.kind,
            "config": _clean(self.config),
            "tables": _clean(self.tables),
            "flags": _clean(self.flags),
            "timings": _clean(self.timings) if timings else {},
        }
        return out

    def to_json(self, timings: bool = True) -> str:
        return json.dumps(self.to_dict(timings), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "StudyResult":
        validate(data)
        return cls(data["kind"], data["config"], data["tables"], data["flags"], data["timings"])

    @classmethod
    def load(cls, path) -> "StudyResult":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, out_dir, name: str = "result") -> list:
        """Write ``<name>.json``, one CSV per table and ``timings.csv``; return the paths."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / f"{name}.json"]
        paths[0].write_text(self.to_json())
        for tname, cols in self.tables.items():
            p = out / f"{tname}.csv"
            write_table(p, cols)
            paths.append(p)
        p = out / "timings.csv"
        write_table(p, {"stage": list(self.timings), "seconds": list(self.timings.values())})
        paths.append(p)
        return paths


def validate(data: dict) -> None:
    """Check a result dictionary against the versioned schema."""
    jsonschema.validate(data, SCHEMA)
    for tname, cols in data["tables"].items():
        lengths = {len(v) for v in cols.values()}
        if len(lengths) > 1:
            raise jsonschema.ValidationError(f"table {tname!r} has columns of different lengths")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_table(path, columns: dict) -> None:
    names = list(columns)
    n = len(columns[names[0]]) if names else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(n):
            w.writerow([_fmt(columns[c][i]) for c in names])


def read_table(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], rows[1:]
    return {h: [r[i] for r in body] for i, h in enumerate(head)}


def emit_plotdata(result: StudyResult, out_dir) -> list:
    """Write the figure-style CSVs a study supports.

    * convergence studies: ``gap_vs_eps.csv`` (eps, gap)
    * quenched studies: ``scatter.csv`` (eps, seed, l2_distance)
    * flow runs: ``energy_vs_time.csv`` (time, energy)
    """
    if not result.tables:
        raise ValueError("empty result: nothing to plot")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    conv = result.tables.get("convergence")
    if conv:
        p = out / "gap_vs_eps.csv"
        write_table(p, {"eps": conv["eps"], "gap": conv["gap"]})
        written.append(p)
    scat = result.tables.get("scatter")
    if scat:
        p = out / "scatter.csv"
        write_table(p, {"eps": scat["eps"], "seed": scat["seed"], "l2_distance": scat["l2_distance"]})
        written.append(p)
    steps = result.tables.get("steps")
    if steps:
        p = out / "energy_vs_time.csv"
        cols = {"time": steps["time"], "energy": steps["energy"]}
        if "run" in steps:
            cols = {"run": steps["run"], **cols}
        write_table(p, cols)
        written.append(p)
    if not written:
        raise ValueError(f"no plot data defined for a {result.kind!r} result")
    return written


def parallel_map(fn, items, workers: int | None = None) -> list:
    """Ordered map over ``items``; threads when ``workers > 1``. Output order never depends on scheduling."""
    items = list(items)
    workers = default_workers() if workers is None else int(workers)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def default_workers() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1))
