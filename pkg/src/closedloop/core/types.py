"""Value types shared across the toolkit.

Fields store space along axis 0 and time along axis 1.  A field without a
time axis is one-dimensional.  Every array is kept as given; the dataclasses
are frozen so instances can be passed between threads freely.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from ..errors import ConfigurationError, ShapeError

Scalar3 = Callable[[float, float, float], float]


@dataclass(frozen=True)
class ControlProblem:
    """Maximize the integral of ``F(x, u, t)`` subject to ``x' = f(x, u, t)``.

    Minimization problems are entered with a negated payoff.  Supplied
    functions must accept floats and numpy arrays alike.
    """

    F: Scalar3
    f: Scalar3
    F_x: Scalar3
    F_u: Scalar3
    f_x: Scalar3
    f_u: Scalar3
    t0: float
    t1: float
    x0: float
    u_bounds: tuple[float, float]
    name: str = "problem"

    def __post_init__(self):
        if not self.t1 > self.t0:
            raise ConfigurationError(f"horizon must satisfy t1 > t0, got [{self.t0}, {self.t1}]")
        lo, hi = self.u_bounds
        if not lo < hi:
            raise ConfigurationError(f"control bounds must satisfy u_lo < u_hi, got {self.u_bounds}")


@dataclass(frozen=True)
class SeparableForm:
    m: float
    U: Callable
    U_x: Callable


@dataclass(frozen=True)
class HamiltonianSystem:
    H: Scalar3
    H_x: Scalar3
    H_p: Scalar3
    separable: Optional[SeparableForm] = None
    name: str = "system"


def separable_system(m: float, U: Callable, U_x: Callable, name: str = "system") -> HamiltonianSystem:
    """Build ``H = p^2/(2m) + U(x)`` together with its partials."""
    if m <= 0:
        raise ConfigurationError("mass must be positive")
    return HamiltonianSystem(
        H=lambda x, p, t: p * p / (2.0 * m) + U(x),
        H_x=lambda x, p, t: U_x(x),
        H_p=lambda x, p, t: p / m,
        separable=SeparableForm(m, U, U_x),
        name=name,
    )


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    nx: int
    t0: float = 0.0
    t1: float = 1.0
    nt: int = 2

    def __post_init__(self):
        if self.nx < 3 or self.nt < 2:
            raise ConfigurationError(f"grid needs nx >= 3 and nt >= 2, got nx={self.nx}, nt={self.nt}")
        if not self.x_max > self.x_min:
            raise ConfigurationError("grid needs x_max > x_min")
        if not self.t1 > self.t0:
            raise ConfigurationError("grid needs t1 > t0")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / (self.nt - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(self.t0, self.t1, self.nt)

    def mesh(self):
        """Return ``(X, T)`` arrays of shape ``(nx, nt)``."""
        return np.meshgrid(self.x, self.t, indexing="ij")


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real or complex grid function over ``(x, t)`` or ``x`` alone.

    ``mask`` marks valid nodes (True).  Non-finite entries are only allowed
    where the mask is False.
    """

    grid: GridSpec
    values: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.asarray(self.values)
        object.__setattr__(self, "values", v)
        expected = [(self.grid.nx, self.grid.nt), (self.grid.nx,)]
        if v.shape not in expected:
            raise ShapeError(f"field shape {v.shape} does not match grid {expected[0]} or {expected[1]}")
        if self.mask is not None:
            m = np.asarray(self.mask, dtype=bool)
            if m.shape != v.shape:
                raise ShapeError("mask shape differs from values shape")
            object.__setattr__(self, "mask", m)
            bad = ~np.isfinite(v) & m
        else:
            bad = ~np.isfinite(v)
        if bad.any():
            raise ShapeError("field has non-finite entries outside its validity mask")

    @property
    def has_time(self) -> bool:
        return self.values.ndim == 2

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    @property
    def valid(self) -> np.ndarray:
        if self.mask is None:
            return np.ones(self.values.shape, dtype=bool)
        return self.mask

    def with_values(self, values, mask=None) -> "ScalarField":
        return ScalarField(self.grid, values, self.mask if mask is None else mask)

    @classmethod
    def from_function(cls, grid: GridSpec, fn: Callable, time: bool = True) -> "ScalarField":
        """Sample ``fn(x, t)`` (or ``fn(x)`` when ``time`` is False) on the grid."""
        if time:
            X, T = grid.mesh()
            return cls(grid, np.asarray(fn(X, T)) * np.ones_like(X))
        x = grid.x
        return cls(grid, np.asarray(fn(x)) * np.ones_like(x))


@dataclass(frozen=True, eq=False)
class WaveField:
    """Complex wave function samples over ``(x, t)``; L2 norm uses weight ``dx``."""

    grid: GridSpec
    values: np.ndarray
    boundary_ok: bool = True

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        object.__setattr__(self, "values", v)
        if v.shape != (self.grid.nx, self.grid.nt):
            raise ShapeError(f"wave field shape {v.shape} does not match grid ({self.grid.nx}, {self.grid.nt})")
        if not np.isfinite(v).all():
            raise ShapeError("wave field has non-finite entries")

    def norms(self) -> np.ndarray:
        return np.sqrt(np.sum(np.abs(self.values) ** 2, axis=0) * self.grid.dx)

    def slice(self, k: int) -> np.ndarray:
        return self.values[:, k]


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    x: np.ndarray
    p: np.ndarray
    u: Optional[np.ndarray] = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        x = np.asarray(self.x, dtype=float)
        p = np.asarray(self.p, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)
        arrays = [x, p]
        if self.u is not None:
            u = np.asarray(self.u, dtype=float)
            object.__setattr__(self, "u", u)
            arrays.append(u)
        if t.ndim != 1 or any(a.shape != t.shape for a in arrays):
            raise ShapeError("trajectory arrays must be one-dimensional and of equal length")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ShapeError("trajectory times must be strictly increasing")
        if not all(np.isfinite(a).all() for a in [t, *arrays]):
            raise ShapeError("trajectory has non-finite entries")

    @property
    def lam(self) -> np.ndarray:
        """Costate alias of ``p``."""
        return self.p


@dataclass(frozen=True, eq=False)
class OpenLoop:
    times: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ShapeError("open-loop times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))

    def __call__(self, t):
        return np.interp(t, self.times, self.u)


@dataclass(frozen=True)
class ControlClosedLoop:
    rule: Callable[[float, float, float], float]


@dataclass(frozen=True, eq=False)
class CostateClosedLoop:
    field: ScalarField

    def __post_init__(self):
        if not np.isfinite(self.field.values).all():
            raise ShapeError("costate closed-loop field must be finite")


Strategy = Union[OpenLoop, ControlClosedLoop, CostateClosedLoop]


@dataclass(frozen=True, eq=False)
class ResidualReport:
    """Summary of a nodewise residual.

    ``per_time_mean`` estimates the time-only inhomogeneity ``g(t)``;
    ``per_time_std`` measures how much the residual still depends on x.
    ``l2_norm`` is the root-mean-square over valid nodes.
    """

    sup_norm: float
    l2_norm: float
    per_time_mean: np.ndarray
    per_time_std: np.ndarray
    coverage: float
    residual: Optional[np.ndarray] = None

    @classmethod
    def from_residual(cls, r: np.ndarray, valid: np.ndarray) -> "ResidualReport":
        r = np.asarray(r)
        valid = np.asarray(valid, dtype=bool)
        if r.shape != valid.shape:
            raise ShapeError("residual and mask shapes differ")
        r2 = r if r.ndim == 2 else r[:, None]
        v2 = valid if valid.ndim == 2 else valid[:, None]
        coverage = float(v2.mean())
        if not v2.any():
            return cls(0.0, 0.0, np.zeros(r2.shape[1]), np.zeros(r2.shape[1]), 0.0, r)
        vals = np.abs(r2[v2])
        counts = v2.sum(axis=0)
        safe = np.where(v2, r2, 0)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = np.where(counts > 0, safe.sum(axis=0) / np.maximum(counts, 1), np.nan)
            dev = np.where(v2, np.abs(r2 - mean[None, :]) ** 2, 0.0)
            std = np.where(counts > 0, np.sqrt(dev.sum(axis=0) / np.maximum(counts, 1)), np.nan)
        return cls(
            sup_norm=float(vals.max()),
            l2_norm=float(np.sqrt(np.mean(vals ** 2))),
            per_time_mean=mean,
            per_time_std=std,
            coverage=coverage,
            residual=r,
        )
