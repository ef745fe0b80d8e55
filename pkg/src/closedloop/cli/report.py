"""Verdicts, run reports and file emission (CSV and JSON)."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..core.types import ScalarField, Trajectory

TRAJECTORY_COLUMNS = ("t", "x", "p_or_lambda", "u")


def fmt(v) -> str:
    """17 significant digits; empty cell for missing values."""
    if v is None:
        return ""
    v = float(v)
    if math.isnan(v):
        return ""
    return "%.17g" % v


@dataclass
class Verdict:
    name: str
    measured: float
    tolerance: float
    anchor: str
    expected: Optional[float] = None
    mode: str = "abs_error"

    @property
    def error(self) -> float:
        if self.mode == "abs_error":
            return abs(self.measured - self.expected)
        if self.mode == "rel_error":
            return abs(self.measured - self.expected) / abs(self.expected)
        return self.measured

    @property
    def passed(self) -> bool:
        e = self.error
        if not math.isfinite(e):
            return False
        if self.mode == "at_least":
            return e >= self.tolerance
        return e <= self.tolerance

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "status": "PASS" if self.passed else "FAIL",
            "measured": _clean(self.measured),
            "tolerance": self.tolerance,
            "anchor": self.anchor,
            "mode": self.mode,
        }
        if self.expected is not None:
            d["expected"] = self.expected
            d["error"] = _clean(self.error)
        return d


@dataclass
class RunReport:
    scenario: str
    config: dict
    version: str
    verdicts: list = field(default_factory=list)
    residuals: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)

    def add(self, verdict: Verdict) -> Verdict:
        self.verdicts.append(verdict)
        return verdict

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def stable(self) -> dict:
        return {
            "scenario": self.scenario,
            "version": self.version,
            "config": self.config,
            "verdicts": [v.to_dict() for v in self.verdicts],
            "residuals": _clean(self.residuals),
            "tables": _clean(self.tables),
            "diagnostics": _clean(self.diagnostics),
            "files": sorted(self.files),
            "all_pass": self.passed,
        }

    def to_json(self) -> str:
        doc = {"stable": self.stable(), "timings": _clean(self.timings)}
        return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def residual_summary(rep) -> dict:
    return {
        "sup": rep.sup_norm,
        "rms": rep.l2_norm,
        "coverage": rep.coverage,
    }


def trajectory_csv(traj: Trajectory) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAJECTORY_COLUMNS)
    u = traj.u if traj.u is not None else [None] * len(traj.times)
    for row in zip(traj.times, traj.x, traj.p, u):
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def field_csv(f: ScalarField, time_stride: int = 1, x_stride: int = 1) -> str:
    """Long format ``x, t, value_re, value_im`` over unmasked nodes."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("x", "t", "value_re", "value_im"))
    g = f.grid
    vals = f.values if f.has_time else f.values[:, None]
    ok = f.valid if f.has_time else f.valid[:, None]
    times = g.t if f.has_time else [g.t0]
    for k in range(0, vals.shape[1], time_stride):
        for i in range(0, g.nx, x_stride):
            if ok[i, k]:
                v = complex(vals[i, k])
                w.writerow((fmt(g.x[i]), fmt(times[k]), fmt(v.real), fmt(v.imag)))
    return buf.getvalue()


def table_csv(axis: str, rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    keys = [axis] + [k for k in rows[0] if k != axis]
    w.writerow(keys)
    for r in rows:
        w.writerow([_cell(r[k]) for k in keys])
    return buf.getvalue()


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, float, np.integer, np.floating)) or v is None:
        return fmt(v)
    return str(v)


def read_trajectory_csv(path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != TRAJECTORY_COLUMNS:
        raise ValueError(f"{path} is not a trajectory CSV")
    cols = {c: [] for c in TRAJECTORY_COLUMNS}
    for r in rows[1:]:
        for c, v in zip(TRAJECTORY_COLUMNS, r):
            cols[c].append(float(v) if v != "" else math.nan)
    return {c: np.asarray(v) for c, v in cols.items()}


def write_outputs(outdir: Path, files: dict, report: RunReport) -> None:
    """Write every emitted file, then the report.  Nothing is written before this."""
    report.files = dict.fromkeys(files)
    outdir.mkdir(parents=True, exist_ok=True)
    for name, text in sorted(files.items()):
        (outdir / name).write_text(text, encoding="utf-8")
    (outdir / "report.json").write_text(report.to_json(), encoding="utf-8")
