"""Deterministic numeric kernels: differences, interpolation, steppers, solvers."""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import (
    DegenerateGridError,
    DomainError,
    EvaluationError,
    NoConvergenceError,
    NodeError,
    PropagationError,
    SingularSystemError,
    UnsupportedSystemError,
)
from .types import HamiltonianSystem, ScalarField

_AXES = {"space": 0, "x": 0, "time": 1, "t": 1}
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
N_SEEDS = 8


def fd_partial(field: ScalarField, axis: str = "space") -> ScalarField:
    """Second-order finite difference of ``field`` along ``axis``.

    Central differences in the interior, second-order one-sided stencils at
    the two ends.  Nodes whose stencil touches a masked node are masked.
    """
    ax = _AXES[axis]
    v = field.values
    if ax >= v.ndim:
        raise DegenerateGridError("field has no time axis")
    if v.shape[ax] < 3:
        raise DegenerateGridError(f"need at least 3 nodes along {axis}, got {v.shape[ax]}")
    h = field.grid.dx if ax == 0 else field.grid.dt
    if field.mask is None:
        return ScalarField(field.grid, np.gradient(v, h, axis=ax, edge_order=2))
    filled = np.where(field.mask, v, np.nan)
    with np.errstate(invalid="ignore"):
        d = np.gradient(filled, h, axis=ax, edge_order=2)
    ok = np.isfinite(d) & field.mask
    return ScalarField(field.grid, np.where(ok, d, np.nan), ok)


def _cell(coord, lo, h, n):
    f = (coord - lo) / h
    r = np.round(f)
    f = np.where(np.abs(f - r) < 1e-9, r, f)
    i = np.clip(np.floor(f).astype(int), 0, n - 2)
    return i, f - i


def interpolate(field: ScalarField, x, t=None):
    """Bilinear interpolation of ``field`` at ``(x, t)``; no extrapolation."""
    g = field.grid
    x = np.asarray(x, dtype=float)
    tol_x = 1e-12 * max(1.0, abs(g.x_min), abs(g.x_max))
    if np.any(x < g.x_min - tol_x) or np.any(x > g.x_max + tol_x) or not np.all(np.isfinite(x)):
        raise DomainError(f"x={x} outside [{g.x_min}, {g.x_max}]")
    i, a = _cell(x, g.x_min, g.dx, g.nx)
    v = field.values
    valid = field.valid
    if not field.has_time:
        if not np.all(valid[i] & valid[i + 1]):
            raise DomainError("interpolation touches masked nodes")
        out = (1 - a) * v[i] + a * v[i + 1]
        return out if out.ndim else out.item()
    if t is None:
        raise DomainError("time coordinate required for a space-time field")
    t = np.asarray(t, dtype=float)
    tol_t = 1e-12 * max(1.0, abs(g.t0), abs(g.t1))
    if np.any(t < g.t0 - tol_t) or np.any(t > g.t1 + tol_t) or not np.all(np.isfinite(t)):
        raise DomainError(f"t={t} outside [{g.t0}, {g.t1}]")
    j, b = _cell(t, g.t0, g.dt, g.nt)
    corners = valid[i, j] & valid[i + 1, j] & valid[i, j + 1] & valid[i + 1, j + 1]
    if not np.all(corners):
        raise DomainError("interpolation touches masked nodes")
    out = ((1 - a) * (1 - b) * v[i, j] + a * (1 - b) * v[i + 1, j]
           + (1 - a) * b * v[i, j + 1] + a * b * v[i + 1, j + 1])
    return out if np.ndim(out) else np.asarray(out).item()


def rk4_step(rhs: Callable, y, t: float, dt: float):
    """One classical Runge-Kutta step; ``dt`` may be negative."""
    if dt == 0:
        raise ValueError("dt must be nonzero")
    y = np.asarray(y, dtype=float)
    k1 = np.asarray(rhs(y, t), dtype=float)
    k2 = np.asarray(rhs(y + 0.5 * dt * k1, t + 0.5 * dt), dtype=float)
    k3 = np.asarray(rhs(y + 0.5 * dt * k2, t + 0.5 * dt), dtype=float)
    k4 = np.asarray(rhs(y + dt * k3, t + dt), dtype=float)
    out = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise PropagationError(f"non-finite state while stepping from t={t}", time=t)
    return out


def leapfrog_step(system: HamiltonianSystem, x: float, p: float, t: float, dt: float):
    """Kick-drift-kick Stormer-Verlet step for ``p^2/(2m) + U(x)``."""
    sep = system.separable
    if sep is None:
        raise UnsupportedSystemError(f"{system.name} has no separable form")
    p_half = p - 0.5 * dt * sep.U_x(x)
    x_new = x + dt * p_half / sep.m
    p_new = p_half - 0.5 * dt * sep.U_x(x_new)
    if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(p_new))):
        raise PropagationError(f"non-finite state in leapfrog at t={t}", time=t)
    return x_new, p_new


def solve_tridiagonal(lower, diag, upper, rhs):
    """Thomas algorithm for a tridiagonal system.

    All four arrays have length ``n``; ``lower[0]`` and ``upper[-1]`` are
    ignored.  ``rhs`` may carry extra trailing columns.
    """
    a = np.asarray(lower)
    b = np.asarray(diag)
    c = np.asarray(upper)
    d = np.asarray(rhs)
    n = b.shape[0]
    if not (a.shape[0] == c.shape[0] == d.shape[0] == n):
        raise ValueError("tridiagonal bands and rhs must have equal lengths")
    dtype = np.result_type(a, b, c, d, float)
    cp = np.zeros(n, dtype=dtype)
    dp = np.zeros(d.shape, dtype=dtype)
    denom = b[0]
    if denom == 0:
        raise SingularSystemError("zero pivot at row 0")
    cp[0] = c[0] / denom if n > 1 else 0.0
    dp[0] = d[0] / denom
    for i in range(1, n):
        denom = b[i] - a[i] * cp[i - 1]
        if denom == 0:
            raise SingularSystemError(f"zero pivot at row {i}")
        if i < n - 1:
            cp[i] = c[i] / denom
        dp[i] = (d[i] - a[i] * dp[i - 1]) / denom
    out = np.empty_like(dp)
    out[-1] = dp[-1]
    for i in range(n - 2, -1, -1):
        out[i] = dp[i] - cp[i] * out[i + 1]
    return out


def _checked(g, u):
    val = g(u)
    if not math.isfinite(val):
        raise EvaluationError(f"objective is not finite at {u}", point=u)
    return val


def _golden(g, a, b, tol):
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    gc, gd = _checked(g, c), _checked(g, d)
    while b - a > tol:
        if gc >= gd:
            b, d, gd = d, c, gc
            c = b - GOLDEN * (b - a)
            gc = _checked(g, c)
        else:
            a, c, gc = c, d, gd
            d = a + GOLDEN * (b - a)
            gd = _checked(g, d)
    return (c, gc) if gc >= gd else (d, gd)


def maximize_scalar(g: Callable[[float], float], interval: Sequence[float], tol: float = 1e-8):
    """Maximize ``g`` on a closed interval.

    Scans 8 equally spaced seeds, refines around the best one by golden
    section and finishes with a three-point parabolic step, which resolves the
    argmax below the square-root-of-epsilon limit of pure value comparisons.
    Returns ``(argmax, value)``.  Ties between the refinement and the best
    seed go to the seed.
    """
    lo, hi = float(interval[0]), float(interval[1])
    if not lo < hi:
        raise ValueError("interval must satisfy lo < hi")
    if tol <= 0:
        raise ValueError("tol must be positive")
    seeds = [lo + (hi - lo) * k / (N_SEEDS - 1) for k in range(N_SEEDS)]
    vals = [_checked(g, s) for s in seeds]
    k = max(range(N_SEEDS), key=lambda i: (vals[i], -i))
    a = seeds[max(k - 1, 0)]
    b = seeds[min(k + 1, N_SEEDS - 1)]
    xg, vg = _golden(g, a, b, tol)
    h = 1e-5 * (hi - lo)
    if lo <= xg - h and xg + h <= hi:
        gm, gp = _checked(g, xg - h), _checked(g, xg + h)
        curv = gp - 2.0 * vg + gm
        if curv < 0:
            xv = xg - 0.5 * h * (gp - gm) / curv
            if abs(xv - xg) <= h and lo <= xv <= hi:
                vv = _checked(g, xv)
                if vv >= vg:
                    xg, vg = xv, vv
    if vg > vals[k]:
        return xg, vg
    return seeds[k], vals[k]


def maximize_vectorized(g: Callable[[np.ndarray], np.ndarray], lo: float, hi: float, n: int,
                        tol: float = 1e-8):
    """Nodewise version of :func:`maximize_scalar` for ``n`` independent problems.

    ``g`` maps a length-``n`` control array to a length-``n`` objective array.
    Same seed scan and golden-section refinement, run in lock step.
    """
    seeds = np.linspace(lo, hi, N_SEEDS)
    vals = np.empty((N_SEEDS, n))
    for k, s in enumerate(seeds):
        vals[k] = g(np.full(n, s))
    if not np.all(np.isfinite(vals)):
        bad = np.argwhere(~np.isfinite(vals))[0]
        raise EvaluationError(f"objective not finite at seed u={seeds[bad[0]]}, node {bad[1]}",
                              point=(float(seeds[bad[0]]), int(bad[1])))
    k = np.argmax(vals, axis=0)
    best_u = seeds[k]
    best_v = vals[k, np.arange(n)]
    a = seeds[np.maximum(k - 1, 0)]
    b = seeds[np.minimum(k + 1, N_SEEDS - 1)]
    iters = int(math.ceil(math.log(tol / ((hi - lo) * 2.0 / (N_SEEDS - 1))) / math.log(GOLDEN))) + 1
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    gc, gd = g(c), g(d)
    for _ in range(max(iters, 1)):
        left = gc >= gd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = np.where(left, b - GOLDEN * (b - a), d)
        new_d = np.where(left, c, a + GOLDEN * (b - a))
        probe = np.where(left, new_c, new_d)
        gp = g(probe)
        gc, gd = np.where(left, gp, gd), np.where(left, gc, gp)
        c, d = new_c, new_d
    if not (np.all(np.isfinite(gc)) and np.all(np.isfinite(gd))):
        raise EvaluationError("objective not finite during refinement")
    xr = np.where(gc >= gd, c, d)
    vr = np.maximum(gc, gd)
    better = vr > best_v
    return np.where(better, xr, best_u), np.where(better, vr, best_v)


def root_find_1d(g: Callable[[float], float], bracket: Optional[Sequence[float]] = None, *,
                 seeds: Optional[Sequence[float]] = None, tol: float = 1e-12, max_iter: int = 200):
    """Find ``z`` with ``|g(z)| <= tol``.

    Bisection when ``bracket`` has a sign change, otherwise secant iteration
    from ``seeds`` (or from the bracket ends).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if bracket is not None:
        a, b = float(bracket[0]), float(bracket[1])
        ga, gb = g(a), g(b)
        if abs(ga) <= tol:
            return a
        if abs(gb) <= tol:
            return b
        if math.isfinite(ga) and math.isfinite(gb) and ga * gb < 0:
            best, best_r = (a, ga) if abs(ga) < abs(gb) else (b, gb)
            while True:
                m = 0.5 * (a + b)
                gm = g(m)
                if abs(gm) < abs(best_r):
                    best, best_r = m, gm
                if abs(gm) <= tol:
                    return m
                if m == a or m == b:
                    raise NoConvergenceError("bisection exhausted floating-point resolution",
                                             best=best, residual=abs(best_r))
                if ga * gm < 0:
                    b, gb = m, gm
                else:
                    a, ga = m, gm
        if seeds is None:
            seeds = (a, b)
    if seeds is None:
        seeds = (0.0, 1.0)
    z0, z1 = float(seeds[0]), float(seeds[1])
    g0, g1 = g(z0), g(z1)
    best, best_r = (z0, g0) if abs(g0) <= abs(g1) else (z1, g1)
    for _ in range(max_iter):
        if not (math.isfinite(g0) and math.isfinite(g1)):
            break
        if abs(g1) <= tol:
            return z1
        if g1 == g0:
            break
        z0, z1 = z1, z1 - g1 * (z1 - z0) / (g1 - g0)
        g0, g1 = g1, g(z1)
        if math.isfinite(g1) and abs(g1) < abs(best_r):
            best, best_r = z1, g1
    if math.isfinite(g1) and abs(g1) <= tol:
        return z1
    raise NoConvergenceError("secant iteration did not converge", best=best, residual=abs(best_r))


def unwrap_phase(samples) -> np.ndarray:
    """Continuous argument of nonzero complex samples along their only axis."""
    z = np.asarray(samples, dtype=complex)
    zero = np.flatnonzero(np.abs(z) == 0)
    if zero.size:
        raise NodeError(f"zero-magnitude sample at index {zero[0]}", index=int(zero[0]))
    return np.unwrap(np.angle(z))
