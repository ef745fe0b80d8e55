"""Action quadrature and the shared costate consistency residual."""

from __future__ import annotations

import numpy as np

from ..errors import InconsistentTrajectoryError, ShapeError
from .numerics import fd_partial
from .types import ControlProblem, ResidualReport, ScalarField, Trajectory


def payoff_integral(problem: ControlProblem, traj: Trajectory) -> float:
    """Trapezoidal integral of ``F(x(t), u(t), t)``; no dynamics check."""
    if traj.u is None:
        raise InconsistentTrajectoryError("trajectory carries no controls")
    integrand = problem.F(traj.x, traj.u, traj.times) * np.ones_like(traj.times)
    return float(np.trapezoid(integrand, traj.times))


def dynamics_defect(problem: ControlProblem, traj: Trajectory) -> float:
    """Sup-norm of ``x' - f(x, u, t)`` with ``x'`` from second-order differences."""
    if traj.u is None:
        raise InconsistentTrajectoryError("trajectory carries no controls")
    if traj.times.size < 3:
        raise InconsistentTrajectoryError("need at least 3 samples to difference the state")
    xdot = np.gradient(traj.x, traj.times, edge_order=2)
    f = problem.f(traj.x, traj.u, traj.times) * np.ones_like(traj.times)
    return float(np.max(np.abs(xdot - f)))


def action_value(problem: ControlProblem, traj: Trajectory, tol: float = 1e-3) -> float:
    """Payoff of a trajectory that obeys the dynamics.

    Along such a trajectory the compact action ``int -lam x' + H dt`` reduces
    to ``int F dt``, which is what gets integrated.
    """
    defect = dynamics_defect(problem, traj)
    if defect > tol:
        raise InconsistentTrajectoryError(f"trajectory violates x' = f by {defect:.3e} (> {tol})")
    return payoff_integral(problem, traj)


def consistency_residual(hstar: ScalarField, lam: ScalarField, interior_only: bool = False) -> ResidualReport:
    """Residual of ``dH*/dx + dlam/dt = 0`` on a shared (x, t) grid.

    The mechanics writing ``-dp/dt - dH*/dx = 0`` differs only by sign, so
    the same report serves both.  ``interior_only`` drops the two x-boundary
    rows.
    """
    if hstar.grid != lam.grid or hstar.values.shape != lam.values.shape:
        raise ShapeError("H* and costate fields must share one grid")
    if not hstar.has_time:
        raise ShapeError("consistency residual needs space-time fields")
    dh = fd_partial(hstar, "space")
    dl = fd_partial(lam, "time")
    valid = dh.valid & dl.valid
    r = dh.values + dl.values
    if interior_only:
        valid = valid.copy()
        valid[0, :] = False
        valid[-1, :] = False
    return ResidualReport.from_residual(np.where(valid, r, 0.0), valid)
