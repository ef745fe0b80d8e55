"""Backward Hamilton-Jacobi-Bellman grid solver and closed-loop diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core.consistency import consistency_residual
from .core.numerics import fd_partial, interpolate, maximize_vectorized, rk4_step
from .core.types import ControlProblem, GridSpec, ResidualReport, ScalarField, Trajectory
from .errors import ConfigurationError, DomainError, EvaluationError

CFL_MAX = 0.5


@dataclass(frozen=True, eq=False)
class HjbSolution:
    """Value function, feedback control and costate on one grid.

    ``u_star`` is the pointwise maximizer of ``F + lam * f`` with ``lam`` the
    central-difference ``dJ/dx``; the backward sweep itself uses upwinded
    one-sided slopes.  Boundary rows are flagged low-confidence via
    ``interior``.
    """

    J: ScalarField
    u_star: ScalarField
    lam: ScalarField
    grid: GridSpec
    cfl: float

    @property
    def interior(self) -> np.ndarray:
        m = np.ones((self.grid.nx, self.grid.nt), dtype=bool)
        m[0, :] = False
        m[-1, :] = False
        return m


def _max_speed(problem: ControlProblem, grid: GridSpec) -> float:
    lo, hi = problem.u_bounds
    x = grid.x
    t_samples = np.linspace(grid.t0, grid.t1, min(grid.nt, 65))
    best = 0.0
    for u in np.linspace(lo, hi, 17):
        for t in t_samples:
            v = np.abs(problem.f(x, u, t) * np.ones_like(x))
            best = max(best, float(np.max(v)))
    return best


def _one_sided(Jn: np.ndarray, dx: float):
    d = np.diff(Jn) / dx
    fwd = np.empty_like(Jn)
    bwd = np.empty_like(Jn)
    fwd[:-1] = d
    fwd[-1] = d[-1]
    bwd[1:] = d
    bwd[0] = d[0]
    return fwd, bwd


def _pointwise_feedback(problem, x, lam, t, tol):
    lo, hi = problem.u_bounds

    def g(u):
        return problem.F(x, u, t) + lam * problem.f(x, u, t)

    u, _ = maximize_vectorized(g, lo, hi, x.size, tol)
    return u


def solve_hjb(problem: ControlProblem, grid: GridSpec,
              terminal: Optional[Callable[[np.ndarray], np.ndarray]] = None,
              tol: float = 1e-8) -> HjbSolution:
    """March ``max_u(F + J_x f) = -J_t`` backward from ``J(., t1) = terminal``.

    Explicit Euler in time.  Inside the max the slope is upwinded on the sign
    of ``f``: forward difference where ``f > 0``, backward where ``f < 0``.
    """
    dx, dt = grid.dx, grid.dt
    speed = _max_speed(problem, grid)
    cfl = dt * speed / dx
    if cfl > CFL_MAX:
        need = int(math.ceil((grid.t1 - grid.t0) * speed / (CFL_MAX * dx))) + 1
        raise ConfigurationError(f"CFL ratio {cfl:.3f} exceeds {CFL_MAX}; use nt >= {need}")
    x = grid.x
    t = grid.t
    J = np.empty((grid.nx, grid.nt))
    J[:, -1] = np.zeros_like(x) if terminal is None else np.asarray(terminal(x), dtype=float) * np.ones_like(x)
    lo, hi = problem.u_bounds
    for n in range(grid.nt - 1, 0, -1):
        fwd, bwd = _one_sided(J[:, n], dx)
        tn = t[n]

        def g(u, fwd=fwd, bwd=bwd, tn=tn):
            fv = problem.f(x, u, tn)
            return problem.F(x, u, tn) + np.maximum(fv, 0.0) * fwd + np.minimum(fv, 0.0) * bwd

        try:
            _, ham = maximize_vectorized(g, lo, hi, grid.nx, tol)
        except EvaluationError as exc:
            raise EvaluationError(f"maximization failed at t={tn}: {exc}", point=exc.point) from exc
        J[:, n - 1] = J[:, n] + dt * ham
    Jf = ScalarField(grid, J)
    lam = fd_partial(Jf, "space")
    U = np.empty_like(J)
    for n in range(grid.nt):
        U[:, n] = _pointwise_feedback(problem, x, lam.values[:, n], t[n], tol)
    return HjbSolution(J=Jf, u_star=ScalarField(grid, U), lam=lam, grid=grid, cfl=cfl)


def costate_field(sol: HjbSolution) -> ScalarField:
    """Closed-loop costate ``lam(x, t) = dJ/dx``."""
    return fd_partial(sol.J, "space")


def reduced_hamiltonian_field(problem: ControlProblem, sol: HjbSolution) -> ScalarField:
    X, T = sol.grid.mesh()
    u = sol.u_star.values
    lam = sol.lam.values
    return ScalarField(sol.grid, problem.F(X, u, T) + lam * problem.f(X, u, T))


def hjb_consistency(problem: ControlProblem, sol: HjbSolution) -> ResidualReport:
    """``dH*/dx + dlam/dt`` on the solver output, boundary rows excluded."""
    return consistency_residual(reduced_hamiltonian_field(problem, sol), sol.lam, interior_only=True)


def inhomogeneity_report(problem: ControlProblem, sol: HjbSolution) -> ResidualReport:
    """Nodewise ``F + J_x f + J_t``; its per-time mean estimates ``g(t)``."""
    X, T = sol.grid.mesh()
    Jx = fd_partial(sol.J, "space").values
    Jt = fd_partial(sol.J, "time").values
    u = sol.u_star.values
    e = problem.F(X, u, T) + Jx * problem.f(X, u, T) + Jt
    return ResidualReport.from_residual(np.where(sol.interior, e, 0.0), sol.interior)


def closed_loop_trajectory(problem: ControlProblem, sol: HjbSolution, x0: float, dt: float) -> Trajectory:
    """Roll out ``x' = f(x, u*(x, t), t)`` with the interpolated feedback."""
    g = sol.grid
    n = max(1, int(round((g.t1 - g.t0) / dt)))
    h = (g.t1 - g.t0) / n
    times = g.t0 + h * np.arange(n + 1)
    times[-1] = g.t1

    def rhs(y, t):
        try:
            u = interpolate(sol.u_star, y[0], min(t, g.t1))
        except DomainError as exc:
            raise DomainError(f"closed-loop trajectory left the grid at t={t:.6g}") from exc
        return np.array([problem.f(y[0], u, t)])

    if not g.x_min < x0 < g.x_max:
        raise DomainError(f"x0={x0} is not inside the grid")
    xs = np.empty(n + 1)
    xs[0] = x0
    y = np.array([x0], dtype=float)
    for k in range(n):
        y = rk4_step(rhs, y, times[k], h)
        xs[k + 1] = y[0]
    try:
        lam = np.array([interpolate(sol.lam, xv, tv) for xv, tv in zip(xs, times)])
        u = np.array([interpolate(sol.u_star, xv, tv) for xv, tv in zip(xs, times)])
    except DomainError as exc:
        raise DomainError("closed-loop trajectory left the grid") from exc
    return Trajectory(times, xs, lam, u)


def compare_open_closed(open_traj: Trajectory, closed_traj: Trajectory) -> dict:
    """Sup-norm differences after resampling onto the coarser time grid."""
    lo = max(open_traj.times[0], closed_traj.times[0])
    hi = min(open_traj.times[-1], closed_traj.times[-1])
    if not hi > lo:
        raise DomainError("trajectories have disjoint time ranges")

    def window(tr):
        sel = (tr.times >= lo - 1e-12) & (tr.times <= hi + 1e-12)
        return tr.times[sel]

    ta, tb = window(open_traj), window(closed_traj)
    base = ta if ta.size <= tb.size else tb

    def sample(tr, name):
        return np.interp(base, tr.times, getattr(tr, name))

    out = {
        "sup_dx": float(np.max(np.abs(sample(open_traj, "x") - sample(closed_traj, "x")))),
        "sup_dlam": float(np.max(np.abs(sample(open_traj, "p") - sample(closed_traj, "p")))),
    }
    if open_traj.u is not None and closed_traj.u is not None:
        out["sup_du"] = float(np.max(np.abs(sample(open_traj, "u") - sample(closed_traj, "u"))))
    return out
