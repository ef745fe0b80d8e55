"""Command-line front end: ``closedloop list | run | sweep | compare``.

Exit codes: 0 all verdicts pass, 1 some verdict fails, 2 configuration
error (nothing written), 3 solver error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import traceback
from importlib import metadata
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import ConfigurationError, ToolkitError
from .config import ConfigError, load_config, parse_config
from .report import RunReport, fmt, read_trajectory_csv, write_outputs
from .scenarios import CATALOG, lookup

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
OUT_ENV = "CLOSEDLOOP_OUT"


def version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def list_catalog(stream=None) -> int:
    stream = stream or sys.stdout
    width = max(len(k) for k in CATALOG)
    for key in sorted(CATALOG):
        s = CATALOG[key]
        stream.write(f"{key:<{width}}  [{s.tags}]  {s.description}\n")
    return EXIT_OK


def _load(arg: str):
    """A config path, or a bare catalog id for the default configuration."""
    if not Path(arg).exists() and arg in CATALOG:
        return parse_config(f"scenario: {arg}\n", f"<default {arg}>")
    return load_config(arg)


def _outdir(args, cfg, suffix: str = "") -> Path:
    if args.out:
        return Path(args.out)
    if cfg.raw.get("output"):
        return Path(str(cfg.raw["output"]))
    root = Path(os.environ.get(OUT_ENV, "closedloop-out"))
    return root / f"{cfg.scenario}{suffix}"


def _execute(args, action) -> int:
    try:
        cfg = _load(args.config)
        report = RunReport(cfg.scenario, cfg.echo(), version())
        files = action(cfg, report)
    except ConfigurationError as exc:
        print(f"config error: {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ToolkitError as exc:
        print(f"solver error ({type(exc).__name__}): {exc}", file=sys.stderr)
        traceback.print_exc(file=sys.stderr)
        return EXIT_SOLVER
    out = _outdir(args, cfg, "" if args.command == "run" else f"-sweep-{args.axis}")
    try:
        write_outputs(out, files, report)
    except OSError as exc:
        print(f"config error: output directory {out} is not writable: {exc.strerror}", file=sys.stderr)
        return EXIT_CONFIG
    for v in report.verdicts:
        d = v.to_dict()
        print(f"{d['status']}  {v.name}: measured {v.measured!r} (tolerance {v.tolerance:g}, {v.mode})")
    print(f"wrote {out}")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_run(args) -> int:
    def action(cfg, report):
        return lookup(cfg).run(cfg, report)

    return _execute(args, action)


def cmd_sweep(args) -> int:
    def action(cfg, report):
        scen = lookup(cfg)
        if args.axis not in scen.sweeps:
            raise cfg.error(f"scenario '{cfg.scenario}' has no {args.axis} sweep "
                            f"(available: {', '.join(sorted(scen.sweeps)) or 'none'})", "scenario")
        report.diagnostics["axis"] = args.axis
        return scen.sweeps[args.axis](cfg, report, args.parallel)

    return _execute(args, action)


def _read_run(path: Path):
    rep = json.loads((path / "report.json").read_text(encoding="utf-8"))["stable"]
    return rep, read_trajectory_csv(path / "trajectory.csv")


def compare_runs(dir_a: Path, dir_b: Path, tol: Optional[float] = None) -> dict:
    """Sup and L2 differences per trajectory column over the shared horizon.

    Run B is resampled onto run A's times inside the overlap.  Raises
    ConfigurationError for incompatible or disjoint runs.
    """
    try:
        rep_a, tr_a = _read_run(dir_a)
        rep_b, tr_b = _read_run(dir_b)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigurationError(f"cannot read run outputs: {exc}") from exc
    if rep_a["scenario"] != rep_b["scenario"]:
        raise ConfigurationError(f"incompatible scenarios '{rep_a['scenario']}' and '{rep_b['scenario']}'")
    lo = max(tr_a["t"][0], tr_b["t"][0])
    hi = min(tr_a["t"][-1], tr_b["t"][-1])
    if not hi > lo:
        raise ConfigurationError("runs have disjoint horizons")
    if tol is None:
        tol = rep_a["config"].get("tolerances", {}).get("compare", 5e-3)
    sel = (tr_a["t"] >= lo) & (tr_a["t"] <= hi)
    t = tr_a["t"][sel]
    cols = {}
    for c in ("x", "p_or_lambda", "u"):
        a = tr_a[c][sel]
        b = np.interp(t, tr_b["t"], tr_b[c])
        d = a - b
        if not np.isfinite(d).any():
            continue
        d = d[np.isfinite(d)]
        l2 = math.sqrt(np.trapezoid(d ** 2, t[: d.size]) / (hi - lo)) if d.size > 1 else abs(float(d[0]))
        cols[c] = {"sup": float(np.max(np.abs(d))), "l2": l2}
    passed = all(v["sup"] <= tol for v in cols.values())
    return {"scenario": rep_a["scenario"], "run_a": str(dir_a), "run_b": str(dir_b), "overlap": [lo, hi],
            "tolerance": tol, "columns": cols, "status": "PASS" if passed else "FAIL"}


def cmd_compare(args) -> int:
    try:
        diff = compare_runs(Path(args.run_a), Path(args.run_b))
    except ConfigurationError as exc:
        print(f"compare error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = json.dumps(diff, sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "compare.json").write_text(text, encoding="utf-8")
    for c, v in diff["columns"].items():
        print(f"{c}: sup {fmt(v['sup'])}  l2 {fmt(v['l2'])}")
    print(f"{diff['status']}  tolerance {diff['tolerance']:g}")
    return EXIT_OK if diff["status"] == "PASS" else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="closedloop", description="Closed-loop strategy experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {version()}")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<scenario> or ./closedloop-out/<scenario>)")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("list", help="list catalog scenarios")
    r = sub.add_parser("run", help="run a scenario config (or a bare catalog id)")
    r.add_argument("config")
    s = sub.add_parser("sweep", help="refinement or hbar sweep")
    s.add_argument("config")
    s.add_argument("--axis", choices=("hbar", "grid"), required=True)
    s.add_argument("--parallel", action="store_true", help="run sweep rows in worker processes")
    c = sub.add_parser("compare", help="compare trajectory.csv of two runs")
    c.add_argument("run_a")
    c.add_argument("run_b")
    for sp in (r, s, c):
        sp.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if not hasattr(args, "out"):
        args.out = None
    if args.command == "list":
        return list_catalog()
    if args.command == "run":
        return cmd_run(args)
    if args.command == "sweep":
        return cmd_sweep(args)
    return cmd_compare(args)


__all__ = ["main", "build_parser", "compare_runs", "list_catalog", "ConfigError"]
