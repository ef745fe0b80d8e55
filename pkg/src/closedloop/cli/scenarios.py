"""Catalog scenarios: each runner fills a RunReport and returns the files to emit."""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .. import bellman, catalog, mechanics, pontryagin, quantum
from ..core.consistency import consistency_residual
from ..core.numerics import fd_partial, interpolate
from ..core.types import ControlProblem, GridSpec, ScalarField, Trajectory, separable_system
from ..errors import ConfigurationError
from .config import ScenarioConfig, number_list, take
from .polynomial import Polynomial
from .report import RunReport, Verdict, field_csv, residual_summary, table_csv, trajectory_csv

Files = dict


@contextmanager
def timed(report: RunReport, name: str):
    start = time.perf_counter()
    yield
    report.timings[name] = time.perf_counter() - start


def _grid(cfg: ScenarioConfig, g: dict, t0: float = 0.0, t1: Optional[float] = None) -> GridSpec:
    try:
        return GridSpec(g["x_min"], g["x_max"], g["nx"], t0, g.get("t1", 1.0) if t1 is None else t1, g.get("nt", 2))
    except (ConfigurationError, ValueError) as exc:
        raise cfg.error(str(exc), "grid") from None


def _stride(nt: int, slices: int) -> int:
    return max(1, (nt - 1) // max(1, slices - 1))


def _check_cfl(cfg, problem: ControlProblem, grid: GridSpec, key: str = "grid.nt"):
    speed = bellman._max_speed(problem, grid)
    if grid.dt * speed / grid.dx > bellman.CFL_MAX:
        need = int(math.ceil((grid.t1 - grid.t0) * speed / (bellman.CFL_MAX * grid.dx))) + 1
        raise cfg.error(f"CFL ratio exceeds {bellman.CFL_MAX}; use nt >= {need}", key)


def _strictly_decreasing(values) -> int:
    """Number of consecutive pairs that fail to decrease."""
    return int(sum(1 for a, b in zip(values[:-1], values[1:]) if not b < a))


def _sweep_points(cfg: ScenarioConfig, axis: str, default: list) -> list:
    sweep = cfg.section("sweep")
    extra = sorted(set(sweep) - {"grid", "hbar"})
    if extra:
        raise cfg.error("unknown sweep axis (allowed: grid, hbar)", f"sweep.{extra[0]}")
    pts = sweep.get(axis, cfg.raw.get("hbar") if axis == "hbar" and cfg.raw.get("hbar") is not None else default)
    key = f"sweep.{axis}" if axis in sweep else axis
    if not isinstance(pts, (list, tuple)) or len(pts) < 3:
        raise cfg.error("a sweep needs at least 3 axis points", key)
    return pts


def _grid_points(cfg, default):
    pts = _sweep_points(cfg, "grid", default)
    out = []
    for i, p in enumerate(pts):
        if not (isinstance(p, (list, tuple)) and len(p) == 2 and all(isinstance(v, int) and v >= 3 for v in p)):
            raise cfg.error("grid sweep points are [nx, nt] integer pairs", f"sweep.grid[{i}]")
        out.append(tuple(p))
    return out


def _map(fn, items, parallel: bool):
    if parallel and len(items) > 1:
        with ProcessPoolExecutor() as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def _orders(errors) -> list:
    return [None] + [math.log2(a / b) if a > 0 and b > 0 else None for a, b in zip(errors[:-1], errors[1:])]


# LQ ------------------------------------------------------------------------------

LQ_PARAMS = {"u_bound": 5.0, "route": "open", "field_slices": 11}
LQ_GRID = {"x_min": -2.0, "x_max": 2.0, "nx": 201, "nt": 1001}
LQ_SOLVER = {"dt": 1e-3, "tol": 1e-10}
LQ_TOL = {"lambda0": 1e-4, "state": 1e-4, "value": 5e-3, "costate": 5e-3, "consistency": 5e-2,
          "inhomogeneity": 5e-2, "rollout": 5e-3, "equivalence": 5e-3, "compare": 5e-3, "order": 0.9}


def run_lq(cfg: ScenarioConfig, report: RunReport) -> Files:
    prm = take(cfg, "params", LQ_PARAMS)
    g = take(cfg, "grid", LQ_GRID)
    sv = take(cfg, "solver", LQ_SOLVER)
    tol = take(cfg, "tolerances", LQ_TOL)
    if prm["route"] not in ("open", "closed"):
        raise cfg.error("route must be 'open' or 'closed'", "params.route")
    problem = catalog.lq_problem(prm["u_bound"])
    grid = _grid(cfg, g, problem.t0, problem.t1)
    _check_cfl(cfg, problem, grid)
    shoot = pontryagin.ShootingConfig(dt=sv["dt"], tol=sv["tol"])

    with timed(report, "pontryagin"):
        open_tr = pontryagin.solve_open_loop(problem, shoot)
    report.add(Verdict("pontryagin_lambda0", open_tr.info["lambda0"], tol["lambda0"],
                       "initial costate of the LQ problem equals -tanh(1)", expected=-catalog.TANH1))
    report.add(Verdict("pontryagin_state_t1", float(open_tr.x[-1]), tol["state"],
                       "LQ terminal state x(1) = 1/cosh(1)", expected=1.0 / catalog.COSH1))
    report.add(Verdict("pontryagin_transversality", abs(open_tr.info["lambda_t1"]), 10 * sv["tol"],
                       "terminal costate vanishes: lambda(t1) = 0", mode="value"))
    report.diagnostics["shooting_iterations"] = open_tr.info["iterations"]

    with timed(report, "hjb"):
        sol = bellman.solve_hjb(problem, grid)
    report.add(Verdict("hjb_value_J10", interpolate(sol.J, 1.0, 0.0), tol["value"],
                       "LQ value function J(x,t) = -x^2 tanh(1-t)/2 at (1,0)", expected=-catalog.TANH1 / 2))
    report.add(Verdict("hjb_costate_lambda10", interpolate(sol.lam, 1.0, 0.0), tol["costate"],
                       "closed-loop costate lambda(x,0) = -x tanh(1) at x=1", expected=-catalog.TANH1))
    cons = bellman.hjb_consistency(problem, sol)
    inh = bellman.inhomogeneity_report(problem, sol)
    report.residuals["hjb_consistency"] = residual_summary(cons)
    report.residuals["inhomogeneity"] = residual_summary(inh)
    report.add(Verdict("hjb_consistency_sup", cons.sup_norm, tol["consistency"],
                       "consistency condition dH*/dx + dlambda/dt = 0", mode="value"))
    report.add(Verdict("inhomogeneity_std", float(np.max(inh.per_time_std)), tol["inhomogeneity"],
                       "g(t) of the Bellman equation is independent of x", mode="value"))
    report.diagnostics["cfl"] = sol.cfl

    with timed(report, "rollout"):
        closed_tr = bellman.closed_loop_trajectory(problem, sol, problem.x0, sv["dt"])
    report.add(Verdict("closed_loop_state_t1", float(closed_tr.x[-1]), tol["rollout"],
                       "closed-loop rollout reaches x(1) = 1/cosh(1)", expected=1.0 / catalog.COSH1))
    diff = bellman.compare_open_closed(open_tr, closed_tr)
    report.residuals["open_vs_closed"] = diff
    report.add(Verdict("open_closed_equivalence", diff["sup_dx"], tol["equivalence"],
                       "inert closed-loop strategy is equivalent to the open-loop optimum", mode="value"))

    chosen = open_tr if prm["route"] == "open" else closed_tr
    stride = _stride(grid.nt, prm["field_slices"])
    return {
        "trajectory.csv": trajectory_csv(chosen),
        "trajectory_open.csv": trajectory_csv(open_tr),
        "trajectory_closed.csv": trajectory_csv(closed_tr),
        "value_field.csv": field_csv(sol.J, stride),
        "costate_field.csv": field_csv(sol.lam, stride),
    }


def _lq_grid_row(args):
    nx, nt, g, u_bound, dt = args
    problem = catalog.lq_problem(u_bound)
    grid = GridSpec(g["x_min"], g["x_max"], nx, 0.0, 1.0, nt)
    sol = bellman.solve_hjb(problem, grid)
    closed = bellman.closed_loop_trajectory(problem, sol, problem.x0, dt)
    return {
        "nx": nx, "nt": nt,
        "J_error": abs(interpolate(sol.J, 1.0, 0.0) + catalog.TANH1 / 2),
        "rollout_error": abs(closed.x[-1] - 1.0 / catalog.COSH1),
        "consistency_sup": bellman.hjb_consistency(problem, sol).sup_norm,
    }


def sweep_lq_grid(cfg: ScenarioConfig, report: RunReport, parallel: bool) -> Files:
    prm = take(cfg, "params", LQ_PARAMS)
    g = take(cfg, "grid", LQ_GRID)
    sv = take(cfg, "solver", LQ_SOLVER)
    tol = take(cfg, "tolerances", LQ_TOL)
    pts = _grid_points(cfg, [[101, 501], [201, 1001], [401, 2001]])
    problem = catalog.lq_problem(prm["u_bound"])
    for i, (nx, nt) in enumerate(pts):
        _check_cfl(cfg, problem, _grid(cfg, {**g, "nx": nx, "nt": nt}, 0.0, 1.0), f"sweep.grid[{i}]")
    with timed(report, "sweep"):
        rows = _map(_lq_grid_row, [(nx, nt, g, prm["u_bound"], sv["dt"]) for nx, nt in pts], parallel)
    for r, o in zip(rows, _orders([r["J_error"] for r in rows])):
        r["order"] = o
    report.tables["grid"] = rows
    orders = [r["order"] for r in rows[1:]]
    report.add(Verdict("refinement_order_min", min(o if o is not None else -math.inf for o in orders), tol["order"],
                       "first-order convergence of the Bellman grid solver to the LQ value", mode="at_least"))
    report.add(Verdict("consistency_decreasing", _strictly_decreasing([r["consistency_sup"] for r in rows]), 0,
                       "consistency residual vanishes under refinement", mode="value"))
    return {"sweep_grid.csv": table_csv("nx", rows)}


# free particle ---------------------------------------------------------------------

FREE_PARAMS = {"P0": 1.0, "Q0": 2.0, "m": 1.0, "t_max": 0.9, "dt": 1e-2, "samples": 91, "field_slices": 11,
               "hj_nx": 201, "hj_nt": 4001}
FREE_GRID = {"x_min": -1.0, "x_max": 1.0, "nx": 401, "nt": 401, "t1": 0.5}
FREE_TOL = {"reconstruction": 1e-8, "equivalence": 1e-8, "momentum": 1e-8, "constraint": 1e-10,
            "hj": 1e-6, "consistency": 5e-4, "order": 1.9}


def _free_consistency(P0, m, g, nx, nt):
    gen = mechanics.free_particle_generator(m)
    grid = GridSpec(g["x_min"], g["x_max"], nx, 0.0, g["t1"], nt)
    p = ScalarField.from_function(grid, lambda x, t: gen.S_x(x, P0, t))
    hstar = ScalarField(grid, p.values ** 2 / (2 * m))
    return consistency_residual(hstar, p)


def run_free_particle(cfg: ScenarioConfig, report: RunReport) -> Files:
    prm = take(cfg, "params", FREE_PARAMS)
    g = take(cfg, "grid", FREE_GRID)
    tol = take(cfg, "tolerances", FREE_TOL)
    P0, Q0, m = prm["P0"], prm["Q0"], prm["m"]
    if m <= 0 or Q0 < 0:
        raise cfg.error("need m > 0 and Q0 >= 0", "params")
    if prm["t_max"] > 0.9 * m * P0:
        raise cfg.error("horizon must stay below 0.9 m P0 (generator singularity)", "params.t_max")
    if g["t1"] > 0.9 * m * P0:
        raise cfg.error("grid horizon must stay below 0.9 m P0", "grid.t1")
    grid = _grid(cfg, g, 0.0, g["t1"])
    gen = mechanics.free_particle_generator(m)
    times = np.linspace(0.0, prm["t_max"], prm["samples"])
    root = math.sqrt(2 * Q0)

    with timed(report, "reconstruction"):
        rec = mechanics.reconstruct_from_constant_line(gen, P0, Q0, times, x_seed=root * P0)
    report.add(Verdict("reconstruction_x", float(np.max(np.abs(rec.x - root * (P0 - times / m)))),
                       tol["reconstruction"], "x(t) = sqrt(2 Q0) (P0 - t/m) from the Q-line", mode="value"))
    report.add(Verdict("reconstruction_p", float(np.max(np.abs(rec.p + root))), tol["reconstruction"],
                       "p(t) = -sqrt(2 Q0) = p0 along the P-line", mode="value"))

    steps = int(round(prm["t_max"] / prm["dt"]))
    flow = mechanics.hamilton_flow(catalog.free_particle(m), rec.x[0], rec.p[0], prm["t_max"] / steps, steps)
    flow_x = np.interp(times, flow.times, flow.x)
    report.add(Verdict("two_observer_equivalence", float(np.max(np.abs(flow_x - rec.x))), tol["equivalence"],
                       "Hamilton flow and constant-line reconstruction give the same motion", mode="value"))

    table = mechanics.closed_to_open_momentum(lambda x, t: gen.S_x(x, P0, t), rec)
    report.add(Verdict("closed_equals_open_momentum", float(np.max(np.abs(table.u + root))), tol["momentum"],
                       "p(x(t), t) of the closed-loop field equals the open-loop p0", mode="value"))

    cgrid = GridSpec(g["x_min"], g["x_max"], 41, 0.0, g["t1"], 11)
    with timed(report, "phase_constraint"):
        pc = mechanics.solve_phase_constraint(lambda x, p, t: p + x / (P0 - t / m), cgrid, lambda x: -x / P0)
    X, T = cgrid.mesh()
    report.add(Verdict("phase_constraint", float(np.max(np.abs(pc.values + X / (P0 - T / m)))), tol["constraint"],
                       "closed-loop strategy p = -x/(P0 - t/m) solves the phase-space constraint", mode="value"))

    S = ScalarField.from_function(grid, lambda x, t: gen.S(x, P0, t))
    p_field = mechanics.momentum_from_action(S)
    X, T = grid.mesh()
    report.add(Verdict("momentum_from_action", float(np.max(np.abs(p_field.values - gen.S_x(X, P0, T)))),
                       tol["momentum"], "p = dS/dx of the free-particle generator", mode="value"))

    hgrid = GridSpec(g["x_min"], g["x_max"], prm["hj_nx"], 0.0, g["t1"], prm["hj_nt"])
    with timed(report, "hj_residual"):
        hj = mechanics.hj_residual(ScalarField.from_function(hgrid, lambda x, t: gen.S(x, P0, t)),
                                   catalog.free_particle(m))
    report.residuals["hj"] = residual_summary(hj)
    report.add(Verdict("hj_g_estimate", float(np.max(np.abs(hj.per_time_mean))), tol["hj"],
                       "free-particle generator solves the homogeneous Hamilton-Jacobi equation", mode="value"))
    report.add(Verdict("hj_x_dependence", float(np.max(hj.per_time_std)), tol["hj"],
                       "Hamilton-Jacobi residual carries no x-dependence", mode="value"))

    with timed(report, "consistency"):
        fine = _free_consistency(P0, m, g, grid.nx, grid.nt)
        coarse = _free_consistency(P0, m, g, (grid.nx + 1) // 2, (grid.nt + 1) // 2)
    report.residuals["consistency"] = residual_summary(fine)
    report.add(Verdict("consistency_sup", fine.sup_norm, tol["consistency"],
                       "consistency condition of the free-particle strategy field", mode="value"))
    report.add(Verdict("consistency_order", math.log2(coarse.sup_norm / fine.sup_norm), tol["order"],
                       "second-order decay of the discrete consistency residual", mode="at_least"))

    stride = _stride(grid.nt, prm["field_slices"])
    return {
        "trajectory.csv": trajectory_csv(rec),
        "trajectory_flow.csv": trajectory_csv(flow),
        "momentum_field.csv": field_csv(p_field, stride, 4),
    }


def sweep_free_grid(cfg: ScenarioConfig, report: RunReport, parallel: bool) -> Files:
    prm = take(cfg, "params", FREE_PARAMS)
    g = take(cfg, "grid", FREE_GRID)
    tol = take(cfg, "tolerances", FREE_TOL)
    pts = _grid_points(cfg, [[101, 101], [201, 201], [401, 401]])
    rows = []
    with timed(report, "sweep"):
        for nx, nt in pts:
            r = _free_consistency(prm["P0"], prm["m"], g, nx, nt)
            rows.append({"nx": nx, "nt": nt, "consistency_sup": r.sup_norm, "consistency_rms": r.l2_norm})
    for r, o in zip(rows, _orders([r["consistency_sup"] for r in rows])):
        r["order"] = o
    report.tables["grid"] = rows
    report.add(Verdict("refinement_order_min", min(r["order"] for r in rows[1:]), tol["order"],
                       "second-order decay of the discrete consistency residual", mode="at_least"))
    return {"sweep_grid.csv": table_csv("nx", rows)}


# harmonic --------------------------------------------------------------------------

HARM_PARAMS = {"m": 1.0, "omega": 1.0, "hbar": 1.0, "count": 5, "x0": 1.0, "p0": 0.0, "flow_steps": 6283,
               "cn_dt": 1e-3}
HARM_GRID = {"x_min": -10.0, "x_max": 10.0, "nx": 2001}
HARM_TOL = {"spectrum": 1e-3, "eigen_residual": 1e-8, "overlap": 1e-6, "phase_slope": 1e-6,
            "stationary_energy": 2e-3, "period": 1e-4, "generator": 1e-6}


def run_harmonic(cfg: ScenarioConfig, report: RunReport) -> Files:
    prm = take(cfg, "params", HARM_PARAMS)
    g = take(cfg, "grid", HARM_GRID)
    tol = take(cfg, "tolerances", HARM_TOL)
    m, w, hbar = prm["m"], prm["omega"], prm["hbar"]
    if m <= 0 or w <= 0 or hbar <= 0:
        raise cfg.error("m, omega and hbar must be positive", "params")
    if not 1 <= prm["count"] <= 10:
        raise cfg.error("count must be between 1 and 10", "params.count")
    grid = _grid(cfg, g)
    qs = quantum.QuantumSystem(m, lambda x: 0.5 * m * w * w * x * x, hbar)

    with timed(report, "stationary_states"):
        pairs = quantum.stationary_states(qs, grid, prm["count"])
    spec_rows = []
    for n, pair in enumerate(pairs):
        exact = hbar * w * (n + 0.5)
        report.add(Verdict(f"spectrum_E{n}", pair.E, tol["spectrum"], f"oscillator level E_{n} = (n + 1/2) hbar omega",
                           expected=exact, mode="rel_error"))
        spec_rows.append({"n": n, "E": pair.E, "exact": exact, "rel_error": abs(pair.E - exact) / exact,
                          "sign_changes": quantum.sign_changes(pair.phi), "residual": pair.residual})
    report.tables["spectrum"] = spec_rows
    report.add(Verdict("eigen_residual", max(p.residual / max(1.0, abs(p.E)) for p in pairs), tol["eigen_residual"],
                       "H Phi = E Phi on the discrete operator", mode="value"))
    report.add(Verdict("node_count", sum(abs(r["sign_changes"] - r["n"]) for r in spec_rows), 0,
                       "n-th stationary state has n sign changes", mode="value"))

    ground = pairs[0]
    period = 2 * math.pi / w
    nt = int(round(period / prm["cn_dt"])) + 1
    tgrid = GridSpec(grid.x_min, grid.x_max, grid.nx, 0.0, period, nt)
    with timed(report, "ground_state_period"):
        wave = quantum.crank_nicolson_evolve(ground.phi.astype(complex), qs, tgrid)
    overlap = abs(np.sum(ground.phi * wave.values[:, -1]) * grid.dx)
    report.add(Verdict("ground_period_overlap", 1.0 - overlap, tol["overlap"],
                       "stationary state returns to itself after one period", mode="value"))
    S = quantum.phase_action(wave, hbar)
    centre = grid.nx // 2
    slope = np.polyfit(tgrid.t, S.values[centre].real, 1)[0]
    report.add(Verdict("stationary_phase_slope", slope, tol["phase_slope"],
                       "S(x,t) = W(x) - E t for a stationary state", expected=-ground.E, mode="rel_error"))
    action = quantum.stationary_action(ground, hbar, 0.0, 1.0, 11)
    stat = quantum.quantum_hj_residual(action.W, qs)
    report.add(Verdict("stationary_energy", float(np.real(stat.per_time_mean).ravel()[0]), tol["stationary_energy"],
                       "stationary quantum Hamilton-Jacobi equation returns E", expected=ground.E))

    hs = catalog.harmonic_oscillator(m, w)
    steps = prm["flow_steps"]
    flow = mechanics.hamilton_flow(hs, prm["x0"], prm["p0"], period / steps, steps)
    report.add(Verdict("flow_period_return", math.hypot(flow.x[-1] - prm["x0"], flow.p[-1] - prm["p0"]),
                       tol["period"], "classical orbit closes after one period", mode="value"))
    gen = mechanics.harmonic_generator(m, w)
    times = flow.times[flow.times < 0.95 * (math.pi / 2) / w]
    rec = mechanics.reconstruct_from_constant_line(gen, prm["p0"], prm["x0"], times, x_seed=prm["x0"])
    report.add(Verdict("generator_vs_flow", float(np.max(np.abs(rec.x - flow.x[:times.size]))), tol["generator"],
                       "constant-line reconstruction matches the Hamilton flow", mode="value"))

    return {
        "trajectory.csv": trajectory_csv(flow),
        "spectrum.csv": table_csv("n", spec_rows),
        "ground_action_field.csv": field_csv(action.W),
    }


# gaussian packets and the classical limit -------------------------------------------

GAUSS_PARAMS = {"m": 1.0, "hbar": 1.0, "sigma": 2.0, "p0": 1.0, "x_c": 0.0, "field_slices": 11,
                "width_sigma": 0.5, "width_nx": 2001, "width_L": 10.0,
                "limit_sigma": 0.25, "limit_x_c": 1.0, "limit_P0": 1.0, "limit_window": 1.0,
                "limit_x_min": -8.0, "limit_x_max": 10.0, "limit_nx": 1801, "limit_t1": 0.5, "limit_nt": 501}
GAUSS_GRID = {"x_min": -24.2, "x_max": 25.2, "nx": 1024, "nt": 1001, "t1": 1.0}
GAUSS_TOL = {"norm": 1e-10, "qhj": 5e-3, "reconstruction": 1e-10, "momentum": 1e-6, "mean_momentum": 1e-8,
             "width": 1e-3, "monotone": 0}
DEFAULT_HBARS = [1.0, 0.5, 0.25, 0.125]


def _gaussian_setup(cfg):
    prm = take(cfg, "params", GAUSS_PARAMS)
    g = take(cfg, "grid", GAUSS_GRID)
    tol = take(cfg, "tolerances", GAUSS_TOL)
    if prm["m"] <= 0 or prm["hbar"] <= 0 or prm["sigma"] <= 0:
        raise cfg.error("m, hbar and sigma must be positive", "params")
    return prm, g, tol


def _build_limit(prm) -> quantum.SemiclassicalScenario:
    grid = GridSpec(prm["limit_x_min"], prm["limit_x_max"], prm["limit_nx"], 0.0, prm["limit_t1"], prm["limit_nt"])
    return quantum.SemiclassicalScenario(grid, mechanics.free_particle_generator(prm["m"]), prm["limit_P0"],
                                         prm["m"], prm["limit_x_c"], prm["limit_sigma"], prm["limit_window"])


def _limit_scenario(cfg, prm) -> quantum.SemiclassicalScenario:
    if prm["limit_t1"] > 0.9 * prm["m"] * prm["limit_P0"]:
        raise cfg.error("classical reference is singular inside the horizon", "params.limit_t1")
    try:
        return _build_limit(prm)
    except (ConfigurationError, ValueError) as exc:
        raise cfg.error(str(exc), "params") from None


def _hbar_list(cfg) -> list:
    raw = cfg.raw.get("hbar", DEFAULT_HBARS)
    vals = number_list(cfg, "hbar", raw, 1)
    if any(v <= 0 for v in vals) or any(b >= a for a, b in zip(vals[:-1], vals[1:])):
        raise cfg.error("hbar values must be positive and strictly decreasing", "hbar")
    return vals


def _limit_verdicts(report, tab, tol):
    rows = tab.rows()
    for r, o in zip(rows, [None] + tab.order("discrepancy")):
        r["order"] = o
    report.tables["hbar"] = rows
    report.add(Verdict("classical_limit_monotone", _strictly_decreasing(tab.columns["discrepancy"]), tol["monotone"],
                       "quantum momentum field tends to the classical one as hbar -> 0", mode="value"))
    report.add(Verdict("quantum_correction_monotone", _strictly_decreasing(tab.columns["quantum_correction"]),
                       tol["monotone"], "the -(i hbar/2m) S_xx term vanishes as hbar -> 0", mode="value"))
    return rows


def run_gaussian(cfg: ScenarioConfig, report: RunReport) -> Files:
    prm, g, tol = _gaussian_setup(cfg)
    hbars = _hbar_list(cfg)
    grid = _grid(cfg, g, 0.0, g["t1"])
    qs = quantum.QuantumSystem(prm["m"], lambda x: 0.0 * x, prm["hbar"])
    try:
        psi0 = quantum.gaussian_packet(grid, prm["x_c"], prm["sigma"], prm["p0"], qs)
    except ConfigurationError as exc:
        raise cfg.error(str(exc), "params") from None
    limit = _limit_scenario(cfg, prm)

    report.add(Verdict("mean_momentum_initial", quantum.expected_momentum(psi0, grid, prm["hbar"]),
                       tol["mean_momentum"], "Gaussian packet carries mean momentum p0", expected=prm["p0"]))
    with timed(report, "crank_nicolson"):
        wave = quantum.crank_nicolson_evolve(psi0, qs, grid)
    norms = wave.norms()
    report.add(Verdict("norm_drift", float(np.max(np.abs(norms - 1.0))), tol["norm"],
                       "Crank-Nicolson evolution is unitary", mode="value"))
    report.diagnostics["boundary_ok"] = wave.boundary_ok
    with timed(report, "extraction"):
        S = quantum.phase_action(wave, prm["hbar"])
        p = quantum.momentum_field(wave, prm["hbar"])
        qhj = quantum.quantum_hj_residual(S, qs)
    ok = S.valid
    recon = np.max(np.abs(np.exp(1j * S.values[ok] / prm["hbar"]) - wave.values[ok]) / np.abs(wave.values[ok]))
    report.add(Verdict("action_reconstruction", float(recon), tol["reconstruction"],
                       "Psi = exp(iS/hbar) at unmasked nodes", mode="value"))
    dS = fd_partial(S, "space")
    both = dS.valid & p.valid
    report.add(Verdict("momentum_equals_dS", float(np.max(np.abs(p.values[both] - dS.values[both]))),
                       tol["momentum"], "momentum operator is diagonal: -i hbar Psi_x / Psi = S_x", mode="value"))
    report.residuals["quantum_hj"] = residual_summary(qhj)
    report.add(Verdict("quantum_hj_residual", qhj.sup_norm, tol["qhj"],
                       "S satisfies the quantum Hamilton-Jacobi equation", mode="value"))

    ws = prm["width_sigma"]
    wgrid = GridSpec(-prm["width_L"], prm["width_L"], prm["width_nx"], 0.0, 1.0, 1001)
    wave_w = quantum.crank_nicolson_evolve(quantum.gaussian_packet(wgrid, 0.0, ws, prm["p0"], qs), qs, wgrid)
    tw = wgrid.t1
    exact_w = ws * math.sqrt(1 + (prm["hbar"] * tw / (2 * prm["m"] * ws * ws)) ** 2)
    report.add(Verdict("gaussian_width", quantum.packet_width(wave_w.values[:, -1], wgrid), tol["width"],
                       "free Gaussian width sigma sqrt(1 + (hbar t / 2 m sigma^2)^2)", expected=exact_w))

    with timed(report, "classical_limit"):
        tab = quantum.classical_limit_sweep(limit, hbars)
    rows = _limit_verdicts(report, tab, tol)

    mean_x = [quantum.expected_position(wave.values[:, k], grid) for k in range(grid.nt)]
    mean_p = [quantum.expected_momentum(wave.values[:, k], grid, prm["hbar"]) for k in range(grid.nt)]
    ehrenfest = Trajectory(grid.t, np.asarray(mean_x), np.asarray(mean_p))
    stride = _stride(grid.nt, prm["field_slices"])
    return {
        "trajectory.csv": trajectory_csv(ehrenfest),
        "action_field.csv": field_csv(S, stride, 2),
        "momentum_field.csv": field_csv(p, stride, 2),
        "classical_limit.csv": table_csv("hbar", rows),
    }


def _limit_row(args):
    prm, hbar = args
    tab = quantum.classical_limit_sweep(_build_limit(prm), [hbar])
    return {k: v[0] for k, v in tab.columns.items()}


def sweep_gaussian_hbar(cfg: ScenarioConfig, report: RunReport, parallel: bool) -> Files:
    prm, g, tol = _gaussian_setup(cfg)
    pts = number_list(cfg, "hbar", _sweep_points(cfg, "hbar", DEFAULT_HBARS), 3)
    if any(v <= 0 for v in pts) or any(b >= a for a, b in zip(pts[:-1], pts[1:])):
        raise cfg.error("hbar values must be positive and strictly decreasing", "hbar")
    _limit_scenario(cfg, prm)
    with timed(report, "sweep"):
        cols = _map(_limit_row, [(prm, h) for h in pts], parallel)
    tab = quantum.ConvergenceTable("hbar", pts, {k: [c[k] for c in cols] for k in cols[0]})
    rows = _limit_verdicts(report, tab, tol)
    return {"sweep_hbar.csv": table_csv("hbar", rows)}


def _qhj_row(args):
    prm, g, nx, nt = args
    grid = GridSpec(g["x_min"], g["x_max"], nx, 0.0, g["t1"], nt)
    qs = quantum.QuantumSystem(prm["m"], lambda x: 0.0 * x, prm["hbar"])
    wave = quantum.crank_nicolson_evolve(quantum.gaussian_packet(grid, prm["x_c"], prm["sigma"], prm["p0"], qs),
                                         qs, grid)
    rep = quantum.quantum_hj_residual(quantum.phase_action(wave, prm["hbar"]), qs)
    return {"nx": nx, "nt": nt, "qhj_sup": rep.sup_norm, "qhj_rms": rep.l2_norm}


def sweep_gaussian_grid(cfg: ScenarioConfig, report: RunReport, parallel: bool) -> Files:
    prm, g, tol = _gaussian_setup(cfg)
    pts = _grid_points(cfg, [[512, 1001], [1024, 1001], [2048, 2001]])
    with timed(report, "sweep"):
        rows = _map(_qhj_row, [(prm, g, nx, nt) for nx, nt in pts], parallel)
    for r, o in zip(rows, _orders([r["qhj_sup"] for r in rows])):
        r["order"] = o
    report.tables["grid"] = rows
    report.add(Verdict("qhj_decreasing", _strictly_decreasing([r["qhj_sup"] for r in rows]), 0,
                       "quantum Hamilton-Jacobi residual vanishes under refinement", mode="value"))
    return {"sweep_grid.csv": table_csv("nx", rows)}


# phase tower -----------------------------------------------------------------------------

TOWER_PARAMS = {"hbar": 1.0, "T0": [0.3, 0.1, 0.4, 0.05], "nx": 401, "evolved_t1": 0.1, "evolved_nt": 101}
TOWER_TOL = {"identity": 1e-12, "recovery": 1e-8, "roundtrip": 1e-8, "coverage": 0.5, "reconstruction": 1e-10}


def run_tower(cfg: ScenarioConfig, report: RunReport) -> Files:
    prm = take(cfg, "params", TOWER_PARAMS)
    tol = take(cfg, "tolerances", TOWER_TOL)
    hbar = prm["hbar"]
    if hbar <= 0:
        raise cfg.error("hbar must be positive", "params.hbar")
    c = number_list(cfg, "params.T0", prm["T0"], 4)
    if len(c) != 4:
        raise cfg.error("T0 is [re(a), im(a), b, c] for T0 = a + b x + c x^2", "params.T0")
    grid = _grid(cfg, {"x_min": -1.0, "x_max": 1.0, "nx": prm["nx"]})
    T0 = complex(c[0], c[1]) + c[2] * grid.x + c[3] * grid.x ** 2
    if np.max(np.abs(T0)) >= math.pi * hbar or np.max(np.abs(np.exp(1j * T0 / hbar))) >= math.pi * hbar:
        raise cfg.error("synthetic T0 must keep every level on the principal branch (|level| < pi hbar)",
                        "params.T0")
    psi = np.exp(1j * np.exp(1j * T0 / hbar) / hbar)
    with timed(report, "synthetic"):
        tower = quantum.phase_tower(ScalarField(grid, psi), hbar, 3)
        rep = quantum.multistage_identity_check(tower)
    T = tower.levels[1]
    report.add(Verdict("tower_T_recovery", float(np.max(np.abs(T.values[T.valid] - T0[T.valid]))), tol["recovery"],
                       "second level recovers the generating phase T0", mode="value"))
    rt = quantum.reconstruct_wave(tower)
    ok = tower.levels[-1].valid
    report.add(Verdict("tower_roundtrip", float(np.max(np.abs(rt[ok] - psi[ok]) / np.abs(psi[ok]))), tol["roundtrip"],
                       "Psi = exp((i/hbar) exp((i/hbar) exp((i/hbar) V)))", mode="value"))
    report.add(Verdict("tower_identity_synthetic", rep.first.sup_norm, tol["identity"],
                       "p_S = (i/hbar) S p_T", mode="value"))
    report.add(Verdict("tower_coverage_synthetic", rep.coverage, tol["coverage"],
                       "identity checked on at least half of the nodes", mode="at_least"))
    report.residuals["p_T_vs_dT"] = residual_summary(rep.p_T_agreement)
    report.residuals["second_identity_printed"] = residual_summary(rep.printed)
    report.residuals["second_identity_chain_rule"] = residual_summary(rep.chain_rule)

    egrid = GridSpec(GAUSS_GRID["x_min"], GAUSS_GRID["x_max"], GAUSS_GRID["nx"], 0.0, prm["evolved_t1"],
                     prm["evolved_nt"])
    qs = quantum.QuantumSystem(1.0, lambda x: 0.0 * x, hbar)
    with timed(report, "evolved"):
        wave = quantum.crank_nicolson_evolve(quantum.gaussian_packet(egrid, 0.0, 2.0, 1.0, qs), qs, egrid)
        etower = quantum.phase_tower(wave, hbar, 2)
        erep = quantum.multistage_identity_check(etower)
    report.add(Verdict("tower_identity_evolved", erep.first.sup_norm, tol["identity"],
                       "p_S = (i/hbar) S p_T on an evolved state", mode="value"))
    report.add(Verdict("tower_reconstruction_evolved", etower.reconstruction_error, tol["reconstruction"],
                       "each level reproduces the one above it", mode="value"))
    report.diagnostics["coverage_evolved"] = erep.coverage

    return {
        "tower_S.csv": field_csv(tower.levels[0]),
        "tower_T.csv": field_csv(tower.levels[1]),
        "tower_V.csv": field_csv(tower.levels[2]),
    }


# inline problems -------------------------------------------------------------------------

INLINE_CONTROL = {"kind": "control", "F": None, "f": None, "horizon": [0.0, 1.0], "x0": 1.0, "u_bounds": [-5.0, 5.0]}
INLINE_HAM = {"kind": "hamiltonian", "m": 1.0, "U": None, "horizon": [0.0, 1.0], "x0": 1.0, "p0": 0.0}
INLINE_TOL = {"transversality": 1e-8, "equivalence": 5e-2, "energy": 1e-4, "compare": 5e-3}


def _poly(cfg, pdef, key, variables=3):
    try:
        return Polynomial.from_terms(pdef.get(key), variables)
    except ValueError as exc:
        raise cfg.error(str(exc), f"problem.{key}") from None


def _inline_problem(cfg):
    pdef = cfg.section("problem")
    kind = pdef.get("kind", "control")
    if kind not in ("control", "hamiltonian"):
        raise cfg.error("kind must be 'control' or 'hamiltonian'", "problem.kind")
    base = INLINE_CONTROL if kind == "control" else INLINE_HAM
    extra = sorted(set(pdef) - set(base))
    if extra:
        raise cfg.error(f"unknown key (allowed: {', '.join(sorted(base))})", f"problem.{extra[0]}")
    horizon = number_list(cfg, "problem.horizon", pdef.get("horizon", base["horizon"]), 2)
    if len(horizon) != 2 or not horizon[1] > horizon[0]:
        raise cfg.error("horizon is [t0, t1] with t1 > t0", "problem.horizon")
    return kind, pdef, horizon


def run_inline(cfg: ScenarioConfig, report: RunReport) -> Files:
    kind, pdef, (t0, t1) = _inline_problem(cfg)
    tol = take(cfg, "tolerances", INLINE_TOL)
    if kind == "control":
        return _run_inline_control(cfg, report, pdef, t0, t1, tol)
    return _run_inline_hamiltonian(cfg, report, pdef, t0, t1, tol)


def _run_inline_control(cfg, report, pdef, t0, t1, tol):
    if pdef.get("F") is None or pdef.get("f") is None:
        raise cfg.error("control problems need polynomial F and f", "problem")
    F, f = _poly(cfg, pdef, "F"), _poly(cfg, pdef, "f")
    bounds = number_list(cfg, "problem.u_bounds", pdef.get("u_bounds", INLINE_CONTROL["u_bounds"]), 2)
    if len(bounds) != 2 or not bounds[1] > bounds[0]:
        raise cfg.error("u_bounds is [lo, hi] with hi > lo", "problem.u_bounds")
    Fx, Fu, fx, fu = F.partial("x"), F.partial("u"), f.partial("x"), f.partial("u")
    problem = ControlProblem(F=F, f=f, F_x=Fx, F_u=Fu, f_x=fx, f_u=fu, t0=t0, t1=t1,
                             x0=float(pdef.get("x0", 1.0)), u_bounds=tuple(bounds), name="inline")
    sv = take(cfg, "solver", LQ_SOLVER)
    g = take(cfg, "grid", {"x_min": -2.0, "x_max": 2.0, "nx": 201, "nt": 1001, "field_slices": 11})
    grid = _grid(cfg, g, t0, t1)
    _check_cfl(cfg, problem, grid)
    with timed(report, "pontryagin"):
        open_tr = pontryagin.solve_open_loop(problem, pontryagin.ShootingConfig(dt=sv["dt"], tol=sv["tol"]))
    report.add(Verdict("pontryagin_transversality", abs(open_tr.info["lambda_t1"]), tol["transversality"],
                       "terminal costate vanishes: lambda(t1) = 0", mode="value"))
    report.diagnostics["lambda0"] = open_tr.info["lambda0"]
    with timed(report, "hjb"):
        sol = bellman.solve_hjb(problem, grid)
        closed_tr = bellman.closed_loop_trajectory(problem, sol, problem.x0, sv["dt"])
    diff = bellman.compare_open_closed(open_tr, closed_tr)
    report.residuals["open_vs_closed"] = diff
    report.residuals["hjb_consistency"] = residual_summary(bellman.hjb_consistency(problem, sol))
    report.add(Verdict("open_closed_equivalence", diff["sup_dx"], tol["equivalence"],
                       "inert closed-loop strategy is equivalent to the open-loop optimum", mode="value"))
    stride = _stride(grid.nt, g["field_slices"])
    return {
        "trajectory.csv": trajectory_csv(open_tr),
        "trajectory_open.csv": trajectory_csv(open_tr),
        "trajectory_closed.csv": trajectory_csv(closed_tr),
        "value_field.csv": field_csv(sol.J, stride),
    }


def _run_inline_hamiltonian(cfg, report, pdef, t0, t1, tol):
    U = _poly(cfg, pdef, "U", 1)
    m = float(pdef.get("m", 1.0))
    if m <= 0:
        raise cfg.error("m must be positive", "problem.m")
    Ux = U.partial("x")
    system = separable_system(m, lambda x: U(x), lambda x: Ux(x), name="inline")
    sv = take(cfg, "solver", {"dt": 1e-3})
    steps = max(1, int(round((t1 - t0) / sv["dt"])))
    with timed(report, "flow"):
        flow = mechanics.hamilton_flow(system, float(pdef.get("x0", 1.0)), float(pdef.get("p0", 0.0)),
                                       (t1 - t0) / steps, steps, t0)
    energy = system.H(flow.x, flow.p, flow.times)
    report.add(Verdict("energy_drift", float(np.max(np.abs(energy - energy[0]))), tol["energy"],
                       "Hamiltonian is conserved along a time-independent flow", mode="value"))
    return {"trajectory.csv": trajectory_csv(flow)}


# registry --------------------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    id: str
    description: str
    tags: str
    run: Callable
    sweeps: dict


CATALOG = {
    s.id: s
    for s in [
        Scenario("lq", "linear-quadratic control: Pontryagin shooting vs Bellman grid and closed-loop rollout",
                 "open/closed-loop equivalence, consistency condition", run_lq, {"grid": sweep_lq_grid}),
        Scenario("free-particle", "free particle: constraint strategy, generator reconstruction, HJ residual",
                 "phase-space constraints, canonical transformations", run_free_particle, {"grid": sweep_free_grid}),
        Scenario("harmonic", "harmonic oscillator: stationary spectrum, stationary action, orbit closure",
                 "stationary states", run_harmonic, {}),
        Scenario("gaussian-limit", "free Gaussian packet: quantum HJ residual, momentum field, hbar -> 0 sweep",
                 "quantum Hamilton-Jacobi, classical limit", run_gaussian,
                 {"hbar": sweep_gaussian_hbar, "grid": sweep_gaussian_grid}),
        Scenario("tower", "iterated phase tower: multistage strategy identities",
                 "multistage closed-loop strategies", run_tower, {}),
    ]
}

INLINE = Scenario("inline", "user-supplied polynomial problem", "inline", run_inline, {})


def lookup(cfg: ScenarioConfig) -> Scenario:
    if cfg.scenario == "inline":
        return INLINE
    try:
        return CATALOG[cfg.scenario]
    except KeyError:
        raise cfg.error(f"unknown scenario '{cfg.scenario}' (catalog: {', '.join(sorted(CATALOG))}, inline)",
                        "scenario") from None
