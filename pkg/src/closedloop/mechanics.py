"""Classical side: Hamiltonian flows, phase-space constraints, Hamilton-Jacobi
residuals and reconstruction of motion from S-type generating functions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .core.numerics import fd_partial, interpolate, leapfrog_step, rk4_step, root_find_1d
from .core.types import GridSpec, HamiltonianSystem, OpenLoop, ResidualReport, ScalarField, Trajectory
from .errors import NoConvergenceError, ReconstructionError, SeedError, ShapeError, SingularityError


@dataclass(frozen=True)
class GeneratorFamily:
    """S-type generator ``S(x, P, t)`` with ``p = dS/dx`` and ``Q = dS/dP``.

    ``singular_times(P)`` lists the times at which ``S`` is undefined for
    that ``P``.
    """

    S: Callable
    S_x: Callable
    S_P: Callable
    singular_times: Callable[[float], Sequence[float]]
    name: str = "generator"


@dataclass(frozen=True)
class ConstantLine:
    kind: str
    level: float
    generator: GeneratorFamily

    def __post_init__(self):
        if self.kind not in ("P", "Q"):
            raise ValueError("constant line kind must be 'P' or 'Q'")
        if not math.isfinite(self.level):
            raise ValueError("constant line level must be finite")


def hamilton_flow(system: HamiltonianSystem, x0: float, p0: float, dt: float, steps: int,
                  t0: float = 0.0) -> Trajectory:
    """``x' = dH/dp``, ``p' = -dH/dx``; leapfrog when separable, RK4 otherwise."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    times = t0 + dt * np.arange(steps + 1)
    xs = np.empty(steps + 1)
    ps = np.empty(steps + 1)
    xs[0], ps[0] = x0, p0
    x, p = float(x0), float(p0)
    if system.separable is not None:
        for k in range(steps):
            x, p = leapfrog_step(system, x, p, times[k], dt)
            xs[k + 1], ps[k + 1] = x, p
    else:
        def rhs(y, t):
            return np.array([system.H_p(y[0], y[1], t), -system.H_x(y[0], y[1], t)])

        y = np.array([x, p])
        for k in range(steps):
            y = rk4_step(rhs, y, times[k], dt)
            xs[k + 1], ps[k + 1] = y
    return Trajectory(times, xs, ps)


def solve_phase_constraint(Phi: Callable, grid: GridSpec, p_seed: Callable[[float], float],
                           tol: float = 1e-12) -> ScalarField:
    """Solve ``Phi(x, p, t) = 0`` for ``p(x, t)`` by continuation.

    Along each time slice the previous node's root seeds the next; the first
    node of a slice is seeded from the previous slice (or ``p_seed`` at
    ``t0``).  Nodes where the solve fails are masked.
    """
    x, t = grid.x, grid.t
    P = np.full((grid.nx, grid.nt), np.nan)
    ok = np.zeros((grid.nx, grid.nt), dtype=bool)

    def solve(xi, tj, guess):
        step = 1e-3 * (1.0 + abs(guess))
        return root_find_1d(lambda p: Phi(xi, p, tj), seeds=(guess, guess + step), tol=tol)

    slice_seed = None
    for j in range(grid.nt):
        guess = float(p_seed(x[0])) if slice_seed is None else slice_seed
        for i in range(grid.nx):
            try:
                P[i, j] = solve(x[i], t[j], guess)
                ok[i, j] = True
                guess = P[i, j]
            except NoConvergenceError:
                if i == 0 and j == 0:
                    raise SeedError(f"constraint solve failed at the first node x={x[0]}, t={t[0]}")
                continue
            if i == 0:
                slice_seed = P[i, j]
    return ScalarField(grid, P, ok)


def momentum_from_action(S: ScalarField) -> ScalarField:
    """Closed-loop momentum ``p(x, t) = dS/dx`` of a real action field."""
    if S.is_complex:
        raise ShapeError("momentum_from_action expects a real action")
    return fd_partial(S, "space")


def hj_residual(S: ScalarField, system: HamiltonianSystem) -> ResidualReport:
    """Nodewise ``-S_t - H(x, S_x, t)``; the per-time mean estimates ``g(t)``."""
    if S.is_complex:
        raise ShapeError("hj_residual expects a real action")
    X, T = S.grid.mesh()
    Sx = fd_partial(S, "space")
    St = fd_partial(S, "time")
    valid = Sx.valid & St.valid
    e = -St.values - system.H(X, Sx.values, T)
    return ResidualReport.from_residual(np.where(valid, e, 0.0), valid)


def _guard(denom, t, P):
    if np.any(np.abs(denom) < 1e-12 * max(1.0, abs(P))):
        raise SingularityError(f"generator is singular at t={t} for P={P}")


def free_particle_generator(m: float = 1.0) -> GeneratorFamily:
    """``S(x, P, t) = -x^2 / (2 (P - t/m))``; singular at ``t = m P``."""

    def denom(P, t):
        d = P - np.asarray(t) / m
        _guard(d, t, P)
        return d

    return GeneratorFamily(
        S=lambda x, P, t: -0.5 * x * x / denom(P, t),
        S_x=lambda x, P, t: -x / denom(P, t),
        S_P=lambda x, P, t: 0.5 * x * x / denom(P, t) ** 2,
        singular_times=lambda P: [m * P],
        name="free-particle",
    )


def harmonic_generator(m: float = 1.0, omega: float = 1.0) -> GeneratorFamily:
    """Generator whose P-lines are initial momenta and Q-lines initial positions.

    ``S = [2 x P - (m w x^2 + P^2/(m w)) sin(w t)] / (2 cos(w t))``; it solves
    ``S_t + S_x^2/(2m) + m w^2 x^2/2 = 0`` and is singular where
    ``cos(w t) = 0``.
    """
    mw = m * omega

    def cos_wt(P, t):
        c = np.cos(omega * np.asarray(t))
        _guard(c, t, 1.0)
        return c

    def singular(P, horizon=100.0):
        k_max = int(horizon * omega / math.pi) + 1
        return [(math.pi / 2 + k * math.pi) / omega for k in range(k_max)]

    return GeneratorFamily(
        S=lambda x, P, t: (2 * x * P - (mw * x * x + P * P / mw) * np.sin(omega * t)) / (2 * cos_wt(P, t)),
        S_x=lambda x, P, t: (P - mw * x * np.sin(omega * t)) / cos_wt(P, t),
        S_P=lambda x, P, t: (x - P * np.sin(omega * t) / mw) / cos_wt(P, t),
        singular_times=singular,
        name="harmonic",
    )


def reconstruct_from_constant_line(gen: GeneratorFamily, P0: float, Q0: float, times,
                                   x_seed: float = 1.0, tol: float = 1e-14) -> Trajectory:
    """Motion seen by the first observer when the second sees ``(Q0, P0)`` fixed.

    At each time ``Q0 = dS/dP(x, P0, t)`` is solved for ``x`` (continuing from
    the previous root), then ``p = dS/dx(x, P0, t)``.  Both levels are
    required: the Q-line alone fixes ``x(t)`` but not a momentum field.
    """
    times = np.asarray(times, dtype=float)
    for ts in gen.singular_times(P0):
        if np.any(np.abs(times - ts) < 1e-12 * max(1.0, abs(ts))):
            raise SingularityError(f"requested times hit the singular time {ts}")
    xs = np.empty_like(times)
    guess = float(x_seed)
    for k, t in enumerate(times):
        def g(x, t=t):
            return float(gen.S_P(x, P0, t)) - Q0

        try:
            xs[k] = root_find_1d(g, seeds=(guess, guess * (1 + 1e-3) + 1e-6),
                                 tol=tol * max(1.0, abs(Q0)))
        except NoConvergenceError as exc:
            raise ReconstructionError(f"could not solve the Q-line equation at t={t}", time=t) from exc
        guess = xs[k]
    ps = np.array([float(gen.S_x(x, P0, t)) for x, t in zip(xs, times)])
    return Trajectory(times, xs, ps)


def closed_to_open_momentum(p_field: Union[ScalarField, Callable], traj: Trajectory) -> OpenLoop:
    """Sample a closed-loop momentum field along a trajectory.

    ``p_field`` is either a grid field (bilinear interpolation, raises on
    leaving the grid) or an analytic ``p(x, t)``.
    """
    if isinstance(p_field, ScalarField):
        vals = [interpolate(p_field, x, t) for x, t in zip(traj.x, traj.times)]
    else:
        vals = [float(p_field(x, t)) for x, t in zip(traj.x, traj.times)]
    return OpenLoop(traj.times, np.asarray(vals, dtype=float))
