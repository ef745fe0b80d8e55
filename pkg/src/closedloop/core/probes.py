"""Finite-difference audit of analytically supplied partial derivatives."""

from __future__ import annotations

import numpy as np

from .types import ControlProblem, HamiltonianSystem

PROBE_SEED = 20240601


def _fd(fn, args, k, h):
    up = list(args)
    dn = list(args)
    up[k] += h
    dn[k] -= h
    return (fn(*up) - fn(*dn)) / (2.0 * h)


def check_partials(obj, n_probes: int = 32, x_range=(-2.0, 2.0), p_range=(-2.0, 2.0),
                   rel_tol: float = 1e-5, seed: int = PROBE_SEED) -> float:
    """Return the worst relative mismatch between supplied and numerical partials.

    Raises ``AssertionError`` if it exceeds ``rel_tol``.  Probe points are drawn
    from a fixed seed so the audit is reproducible.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_probes):
        x = float(rng.uniform(*x_range))
        if isinstance(obj, ControlProblem):
            lo, hi = obj.u_bounds
            u = float(rng.uniform(lo, hi))
            t = float(rng.uniform(obj.t0, obj.t1))
            pairs = [(obj.F, obj.F_x, 0), (obj.F, obj.F_u, 1), (obj.f, obj.f_x, 0), (obj.f, obj.f_u, 1)]
            args = (x, u, t)
        elif isinstance(obj, HamiltonianSystem):
            p = float(rng.uniform(*p_range))
            t = float(rng.uniform(0.0, 1.0))
            pairs = [(obj.H, obj.H_x, 0), (obj.H, obj.H_p, 1)]
            args = (x, p, t)
            if obj.separable is not None:
                sep = obj.separable
                sep_h = p * p / (2 * sep.m) + sep.U(x)
                if abs(sep_h - obj.H(x, p, t)) > 1e-12 * max(1.0, abs(sep_h)):
                    raise AssertionError("separable form disagrees with H")
        else:
            raise TypeError(f"cannot audit {type(obj).__name__}")
        for fn, dfn, k in pairs:
            h = 1e-6 * max(1.0, abs(args[k]))
            num = _fd(fn, args, k, h)
            ana = float(dfn(*args))
            err = abs(num - ana) / max(1.0, abs(ana))
            worst = max(worst, err)
    if worst > rel_tol:
        raise AssertionError(f"supplied partials disagree with finite differences (rel err {worst:.2e})")
    return worst
