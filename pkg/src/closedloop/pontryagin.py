"""Open-loop (Pontryagin) solutions and flows under arbitrary closed-loop rules.

The control Hamiltonian is ``H = F + lam * f`` and the toolkit maximizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .core.numerics import maximize_scalar, rk4_step, root_find_1d
from .core.types import ControlProblem, OpenLoop, Trajectory
from .errors import ConfigurationError, NoConvergenceError

Rule = Callable[[float, float, float], float]


@dataclass(frozen=True)
class ShootingConfig:
    """Secant shooting on the initial costate.

    ``seeds=None`` picks ``{0, -0.5 * sign(dF/dx)}`` at the initial state.
    """

    seeds: Optional[tuple] = None
    dt: float = 1e-3
    tol: float = 1e-10
    max_iter: int = 50

    def __post_init__(self):
        if self.dt <= 0 or self.tol <= 0:
            raise ConfigurationError("shooting needs dt > 0 and tol > 0")
        if self.seeds is not None and self.seeds[0] == self.seeds[1]:
            raise ConfigurationError("shooting seeds must differ")


class ControlChoice(NamedTuple):
    u: float
    on_boundary: bool


def control_hamiltonian(problem: ControlProblem, x, u, lam, t):
    return problem.F(x, u, t) + lam * problem.f(x, u, t)


def hamiltonian_du(problem: ControlProblem, x, u, lam, t):
    return problem.F_u(x, u, t) + lam * problem.f_u(x, u, t)


def eliminate_control(problem: ControlProblem, x: float, lam: float, t: float) -> ControlChoice:
    """Maximize ``H(x, ., lam, t)`` over the control bounds.

    The bounded search locates the maximizer; interior maximizers are then
    polished on ``dH/du = 0`` with the supplied partials.  Maximizers on a
    bound are returned as they are and flagged.
    """
    lo, hi = problem.u_bounds
    F, f = problem.F, problem.f

    def h(u):
        return F(x, u, t) + lam * f(x, u, t)

    u, hv = maximize_scalar(h, (lo, hi), tol=1e-6 * (hi - lo))
    if u == lo or u == hi:
        return ControlChoice(u, True)
    F_u, f_u = problem.F_u, problem.f_u

    def hu(v):
        return F_u(x, v, t) + lam * f_u(x, v, t)

    scale = 1e-15 * (1.0 + abs(hu(lo)) + abs(hu(hi)))
    try:
        step = 1e-7 * (hi - lo)
        v = root_find_1d(hu, seeds=(u, u + step), tol=scale, max_iter=20)
    except NoConvergenceError as exc:
        v = exc.best
    if v is not None and lo < v < hi and abs(v - u) <= 1e-3 * (hi - lo) and h(v) >= hv - 1e-14 * (1 + abs(hv)):
        u = v
    return ControlChoice(u, False)


def optimal_rule(problem: ControlProblem) -> Rule:
    """The inert closed-loop rule ``u*(x, lam, t)``."""
    return lambda x, lam, t: eliminate_control(problem, x, lam, t).u


def pontryagin_rhs(problem: ControlProblem, x: float, lam: float, t: float):
    """Reduced Pontryagin flow ``(x', lam')`` at the maximizing control."""
    u = eliminate_control(problem, x, lam, t).u
    xdot = problem.f(x, u, t)
    lamdot = -(problem.F_x(x, u, t) + lam * problem.f_x(x, u, t))
    return xdot, lamdot


def _steps(t0, t1, dt):
    n = max(1, int(round((t1 - t0) / dt)))
    return n, (t1 - t0) / n


def _integrate(rhs, y0, t0, t1, dt):
    n, h = _steps(t0, t1, dt)
    times = t0 + h * np.arange(n + 1)
    ys = np.empty((n + 1, len(y0)))
    ys[0] = y0
    y = np.asarray(y0, dtype=float)
    for k in range(n):
        y = rk4_step(rhs, y, times[k], h)
        ys[k + 1] = y
    return times, ys


def default_seeds(problem: ControlProblem) -> tuple:
    lo, hi = problem.u_bounds
    u_ref = min(max(0.0, lo), hi)
    slope = problem.F_x(problem.x0, u_ref, problem.t0)
    # a payoff flat in x gives no sign; any nonzero second seed will do
    sign = math.copysign(1.0, slope) if slope != 0 else -1.0
    return (0.0, -0.5 * sign)


def solve_open_loop(problem: ControlProblem, cfg: ShootingConfig = ShootingConfig()) -> Trajectory:
    """Integrate the Pontryagin flow and shoot on ``lam(t0)`` until ``lam(t1) = 0``."""

    def rhs(y, t):
        return np.array(pontryagin_rhs(problem, y[0], y[1], t))

    cache = {}

    def terminal_costate(s):
        times, ys = _integrate(rhs, [problem.x0, s], problem.t0, problem.t1, cfg.dt)
        cache[s] = (times, ys)
        return ys[-1, 1]

    seeds = cfg.seeds if cfg.seeds is not None else default_seeds(problem)
    try:
        s = root_find_1d(terminal_costate, seeds=seeds, tol=cfg.tol, max_iter=cfg.max_iter)
    except NoConvergenceError as exc:
        raise NoConvergenceError(
            f"costate shooting failed; best |lam(t1)| = {exc.residual:.3e}", best=exc.best, residual=exc.residual
        ) from exc
    times, ys = cache[s]
    choices = [eliminate_control(problem, x, lam, t) for x, lam, t in zip(ys[:, 0], ys[:, 1], times)]
    info = {
        "iterations": len(cache),
        "lambda0": float(s),
        "lambda_t1": float(ys[-1, 1]),
        "boundary_samples": int(sum(c.on_boundary for c in choices)),
    }
    return Trajectory(times, ys[:, 0], ys[:, 1], np.array([c.u for c in choices]), info=info)


def _rule_partials(rule: Rule, x, lam, t):
    hx = 1e-6 * (1.0 + abs(x))
    hl = 1e-6 * (1.0 + abs(lam))
    u_x = (rule(x + hx, lam, t) - rule(x - hx, lam, t)) / (2.0 * hx)
    u_l = (rule(x, lam + hl, t) - rule(x, lam - hl, t)) / (2.0 * hl)
    return u_x, u_l


def arbitrary_closed_loop_flow(problem: ControlProblem, rule: Rule, x0: float, lam0: float,
                               dt: float, t0: Optional[float] = None, t1: Optional[float] = None) -> Trajectory:
    """Initial-value flow for a general rule ``u(x, lam, t)``.

    ``x' = dH/dlam + dH/du * du/dlam`` and ``lam' = -dH/dx - dH/du * du/dx``;
    rule derivatives come from central differences.  No transversality is
    imposed.
    """
    t0 = problem.t0 if t0 is None else t0
    t1 = problem.t1 if t1 is None else t1

    def rhs(y, t):
        x, lam = y
        u = rule(x, lam, t)
        u_x, u_l = _rule_partials(rule, x, lam, t)
        hu = hamiltonian_du(problem, x, u, lam, t)
        xdot = problem.f(x, u, t) + hu * u_l
        lamdot = -(problem.F_x(x, u, t) + lam * problem.f_x(x, u, t)) - hu * u_x
        return np.array([xdot, lamdot])

    times, ys = _integrate(rhs, [x0, lam0], t0, t1, dt)
    u = np.array([rule(x, lam, t) for x, lam, t in zip(ys[:, 0], ys[:, 1], times)])
    return Trajectory(times, ys[:, 0], ys[:, 1], u)


def extract_open_loop(traj: Trajectory, rule: Rule) -> OpenLoop:
    """Tabulate ``u(x(t_k), lam(t_k), t_k)`` along a trajectory."""
    u = [rule(x, lam, t) for x, lam, t in zip(traj.x, traj.p, traj.times)]
    return OpenLoop(traj.times, np.array(u, dtype=float))


def control_table_trajectory(problem: ControlProblem, control: Callable[[float], float], dt: float) -> Trajectory:
    """State trajectory driven by an open-loop control ``u(t)``; costate set to zero."""

    def rhs(y, t):
        return np.array([problem.f(y[0], control(t), t)])

    times, ys = _integrate(rhs, [problem.x0], problem.t0, problem.t1, dt)
    u = np.array([control(t) for t in times])
    return Trajectory(times, ys[:, 0], np.zeros_like(times), u)
