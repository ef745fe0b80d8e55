"""Schrodinger evolution, complex action extraction and quantum Hamilton-Jacobi
diagnostics, including the iterated phase tower ``Psi = exp(i/h exp(i/h ...))``.

Conventions: the discrete Hamiltonian is the 3-point stencil with Dirichlet
walls at the first and last grid node; norms use weight ``dx``; ``hbar`` is a
parameter of the system, not a physical constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.linalg import LinAlgError, solve_banded

from .core.numerics import fd_partial, rk4_step, solve_tridiagonal
from .core.types import GridSpec, ResidualReport, ScalarField, WaveField
from .errors import (
    ConfigurationError,
    DegenerateStateError,
    GridResolutionError,
    PreconditionError,
    SingularSystemError,
    TowerTruncationError,
)
from .mechanics import GeneratorFamily

MASK_THRESHOLD = 1e-8
BOUNDARY_DENSITY = 1e-8


@dataclass(frozen=True)
class QuantumSystem:
    m: float
    U: Callable
    hbar: float = 1.0
    name: str = "system"

    def __post_init__(self):
        if self.m <= 0 or self.hbar <= 0:
            raise ConfigurationError("mass and hbar must be positive")


@dataclass(frozen=True, eq=False)
class EigenPair:
    E: float
    phi: np.ndarray
    grid: GridSpec
    residual: float = 0.0


@dataclass(frozen=True, eq=False)
class PhaseTower:
    """Levels ``[S, T, V]`` with ``Psi = exp(iS/h)``, ``S = exp(iT/h)``, ``T = exp(iV/h)``."""

    levels: list
    hbar: float
    reconstruction_error: float = 0.0

    @property
    def depth(self) -> int:
        return len(self.levels)


@dataclass(frozen=True, eq=False)
class StationaryAction:
    W: ScalarField
    S: ScalarField
    momentum: ScalarField
    E: float


@dataclass(frozen=True, eq=False)
class ConvergenceTable:
    axis: str
    values: list
    columns: dict = field(default_factory=dict)

    def order(self, column: str) -> list:
        """``log2(e_k / e_{k+1})`` between consecutive rows."""
        e = self.columns[column]
        out = []
        for a, b in zip(e[:-1], e[1:]):
            out.append(math.log2(a / b) if a > 0 and b > 0 else float("nan"))
        return out

    def rows(self) -> list:
        keys = list(self.columns)
        return [dict(zip([self.axis, *keys], [v, *(self.columns[k][i] for k in keys)]))
                for i, v in enumerate(self.values)]


def _kinetic(system: QuantumSystem, grid: GridSpec) -> float:
    return system.hbar ** 2 / (2.0 * system.m * grid.dx ** 2)


def hamiltonian_bands(system: QuantumSystem, grid: GridSpec):
    """``(lower, diag, upper)`` of the interior Hamiltonian (walls excluded)."""
    kin = _kinetic(system, grid)
    xi = grid.x[1:-1]
    diag = 2.0 * kin + np.asarray(system.U(xi), dtype=float) * np.ones_like(xi)
    off = np.full(xi.size, -kin)
    return off, diag, off.copy()


def apply_hamiltonian(system: QuantumSystem, grid: GridSpec, psi: np.ndarray) -> np.ndarray:
    """``H_d psi`` on the full grid; the wall nodes are treated as zero."""
    psi = np.asarray(psi)
    kin = _kinetic(system, grid)
    out = np.zeros_like(psi, dtype=np.result_type(psi, float))
    inner = psi[1:-1]
    left = np.concatenate([[0.0], inner[:-1]])
    right = np.concatenate([inner[1:], [0.0]])
    out[1:-1] = kin * (2.0 * inner - left - right) + np.asarray(system.U(grid.x[1:-1])) * inner
    return out


def l2_norm(psi: np.ndarray, grid: GridSpec) -> float:
    return float(np.sqrt(np.sum(np.abs(psi) ** 2) * grid.dx))


def gaussian_packet(grid: GridSpec, x_c: float, sigma: float, p0: float, system: QuantumSystem) -> np.ndarray:
    """Normalized Gaussian ``exp(-(x-x_c)^2/(4 sigma^2) + i p0 x / hbar)``; wall nodes set to zero."""
    if sigma <= 0:
        raise ConfigurationError("sigma must be positive")
    if x_c - 5 * sigma < grid.x_min or x_c + 5 * sigma > grid.x_max:
        raise ConfigurationError(f"packet at {x_c} with sigma {sigma} is within 5 sigma of the grid boundary")
    x = grid.x
    psi = (2 * np.pi * sigma ** 2) ** -0.25 * np.exp(-((x - x_c) ** 2) / (4 * sigma ** 2) + 1j * p0 * x / system.hbar)
    psi[0] = psi[-1] = 0.0
    return psi / l2_norm(psi, grid)


def wkb_packet(grid: GridSpec, x_c: float, sigma: float, phase: Callable, system: QuantumSystem) -> np.ndarray:
    """Gaussian envelope times ``exp(i phase(x) / hbar)``, normalized, walls zeroed."""
    if x_c - 5 * sigma < grid.x_min or x_c + 5 * sigma > grid.x_max:
        raise ConfigurationError("packet support reaches the grid boundary")
    x = grid.x
    psi = np.exp(-((x - x_c) ** 2) / (4 * sigma ** 2) + 1j * np.asarray(phase(x)) / system.hbar)
    psi[0] = psi[-1] = 0.0
    return psi / l2_norm(psi, grid)


def momentum_eigenstate(grid: GridSpec, p0: float, system: QuantumSystem) -> np.ndarray:
    """Unnormalized plane wave ``exp(i p0 x / hbar)``."""
    return np.exp(1j * p0 * grid.x / system.hbar)


def crank_nicolson_evolve(psi0: np.ndarray, system: QuantumSystem, grid: GridSpec, store_every: int = 1) -> WaveField:
    """Evolve ``psi0`` over the grid's time axis with Crank-Nicolson.

    ``(1 + i dt H/(2 hbar)) psi_next = (1 - i dt H/(2 hbar)) psi`` with one
    banded solve per step.  Wall nodes stay zero.  The returned field keeps
    every ``store_every``-th slice; ``boundary_ok`` is False if the density
    next to a wall ever exceeded 1e-8.
    """
    steps = grid.nt - 1
    if store_every < 1 or steps % store_every:
        raise ConfigurationError("store_every must divide the number of time steps")
    lower, diag, upper = hamiltonian_bands(system, grid)
    a = 1j * grid.dt / (2.0 * system.hbar)
    ab = np.zeros((3, diag.size), dtype=complex)
    ab[0, 1:] = a * upper[:-1]
    ab[1] = 1.0 + a * diag
    ab[2, :-1] = a * lower[1:]
    b_diag = 1.0 - a * diag
    b_off = -a * lower[0]
    psi = np.asarray(psi0, dtype=complex)[1:-1].copy()
    stored = [np.concatenate([[0.0], psi, [0.0]])]
    edge = max(abs(psi[0]) ** 2, abs(psi[-1]) ** 2)
    for k in range(1, steps + 1):
        rhs = b_diag * psi
        rhs[1:] += b_off * psi[:-1]
        rhs[:-1] += b_off * psi[1:]
        try:
            psi = solve_banded((1, 1), ab, rhs, check_finite=False)
        except (LinAlgError, ValueError) as exc:
            raise SingularSystemError(f"Crank-Nicolson solve failed at step {k}: {exc}") from exc
        edge = max(edge, abs(psi[0]) ** 2, abs(psi[-1]) ** 2)
        if k % store_every == 0:
            stored.append(np.concatenate([[0.0], psi, [0.0]]))
    out_grid = GridSpec(grid.x_min, grid.x_max, grid.nx, grid.t0, grid.t1, steps // store_every + 1)
    return WaveField(out_grid, np.stack(stored, axis=1), boundary_ok=bool(edge <= BOUNDARY_DENSITY))


def crank_nicolson_step_reference(psi: np.ndarray, system: QuantumSystem, grid: GridSpec) -> np.ndarray:
    """One CN step through the core Thomas solver (slow; used to cross-check)."""
    lower, diag, upper = hamiltonian_bands(system, grid)
    a = 1j * grid.dt / (2.0 * system.hbar)
    inner = np.asarray(psi, dtype=complex)[1:-1]
    rhs = inner - a * apply_hamiltonian(system, grid, psi)[1:-1]
    new = solve_tridiagonal(a * lower, 1.0 + a * diag, a * upper, rhs)
    return np.concatenate([[0.0], new, [0.0]])


# complex logarithm of a field --------------------------------------------------

def _as_columns(values):
    v = np.asarray(values)
    return (v[:, None], True) if v.ndim == 1 else (v, False)


def _log_field(values, grid: GridSpec, hbar: float, valid_in=None, threshold: float = MASK_THRESHOLD) -> ScalarField:
    """``-i hbar log(values)`` with unwrapped argument.

    The argument is unwrapped along x per slice (over unmasked nodes) and
    each contiguous run of unmasked nodes is shifted by a multiple of 2 pi to
    stay continuous in time with the previous slice.
    """
    v, flat = _as_columns(values)
    vin = None if valid_in is None else _as_columns(valid_in)[0]
    nx, nt = v.shape
    out = np.full(v.shape, np.nan + 0j)
    mask = np.zeros(v.shape, dtype=bool)
    prev_theta = None
    prev_ok = None
    centre = nx // 2
    for k in range(nt):
        col = v[:, k]
        amp = np.abs(col)
        ok = np.isfinite(col)
        if vin is not None:
            ok &= vin[:, k]
        if not ok.any():
            raise DegenerateStateError(f"slice {k} is fully masked")
        top = amp[ok].max()
        ok &= amp >= threshold * top
        ok &= amp > 0
        if not ok.any():
            raise DegenerateStateError(f"slice {k} is fully masked")
        idx = np.flatnonzero(ok)
        theta = np.full(nx, np.nan)
        theta[idx] = np.unwrap(np.angle(col[idx]))
        if prev_theta is not None:
            # the branch across a masked gap is arbitrary, so each run is
            # matched to the previous slice on its own
            for run in np.split(idx, np.flatnonzero(np.diff(idx) > 1) + 1):
                common = run[prev_ok[run]]
                if common.size:
                    mid = centre if run[0] <= centre <= run[-1] else (run[0] + run[-1]) // 2
                    anchor = common[np.argmin(np.abs(common - mid))]
                    shift = 2 * np.pi * np.round((prev_theta[anchor] - theta[anchor]) / (2 * np.pi))
                    theta[run] += shift
        with np.errstate(divide="ignore", invalid="ignore"):
            s = hbar * (theta - 1j * np.log(amp))
        out[:, k] = np.where(ok, s, np.nan)
        mask[:, k] = ok
        prev_theta, prev_ok = theta, ok
    if flat:
        return ScalarField(grid, out[:, 0], mask[:, 0])
    return ScalarField(grid, out, mask)


def _wave_values(psi):
    if isinstance(psi, (WaveField, ScalarField)):
        return psi.grid, psi.values, getattr(psi, "mask", None)
    raise TypeError("expected a WaveField or ScalarField")


def phase_action(psi: Union[WaveField, ScalarField], hbar: float) -> ScalarField:
    """Complex action ``S`` with ``Psi = exp(iS/hbar)``.

    ``Re S = hbar * arg Psi`` (unwrapped), ``Im S = -hbar ln|Psi|``.  Nodes with
    ``|Psi| < 1e-8 max|Psi|`` (per slice) are masked.
    """
    grid, values, mask = _wave_values(psi)
    return _log_field(values, grid, hbar, mask)


def _log_derivative(values, valid, dx):
    """``d/dx log(values)`` from logs of neighbour ratios; exact on exponentials."""
    v, flat = _as_columns(values)
    ok, _ = _as_columns(valid)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.full(v.shape, np.nan + 0j)
        d[1:-1] = np.log(v[2:] / v[:-2]) / (2 * dx)
        l1 = np.log(v[1] / v[0])
        l2 = np.log(v[2] / v[0])
        d[0] = (4 * l1 - l2) / (2 * dx)
        r1 = np.log(v[-2] / v[-1])
        r2 = np.log(v[-3] / v[-1])
        d[-1] = -(4 * r1 - r2) / (2 * dx)
    good = np.zeros(v.shape, dtype=bool)
    good[1:-1] = ok[2:] & ok[1:-1] & ok[:-2]
    good[0] = ok[0] & ok[1] & ok[2]
    good[-1] = ok[-1] & ok[-2] & ok[-3]
    good &= np.isfinite(d)
    d = np.where(good, d, np.nan)
    return (d[:, 0], good[:, 0]) if flat else (d, good)


def _amplitude_mask(values, threshold=MASK_THRESHOLD):
    v, flat = _as_columns(values)
    amp = np.abs(v)
    ok = np.isfinite(v) & (amp >= threshold * np.nanmax(amp, axis=0, keepdims=True)) & (amp > 0)
    return ok[:, 0] if flat else ok


def momentum_field(psi: Union[WaveField, ScalarField], hbar: float, method: str = "log") -> ScalarField:
    """Local momentum eigenvalue ``-i hbar (dPsi/dx) / Psi``.

    ``method="log"`` evaluates it as ``-i hbar d(log Psi)/dx`` with a
    neighbour-ratio stencil, exact for plane waves and equal to the x-derivative
    of :func:`phase_action` up to round-off.  ``method="quotient"`` divides
    the central difference of ``Psi`` by ``Psi``.
    """
    grid, values, mask = _wave_values(psi)
    ok = _amplitude_mask(values)
    if mask is not None:
        ok &= mask
    if method == "log":
        d, good = _log_derivative(values, ok, grid.dx)
        return ScalarField(grid, np.where(good, -1j * hbar * d, np.nan), good)
    if method == "quotient":
        f = ScalarField(grid, np.where(ok, values, np.nan), ok)
        dpsi = fd_partial(f, "space")
        good = dpsi.valid
        with np.errstate(divide="ignore", invalid="ignore"):
            p = -1j * hbar * dpsi.values / values
        return ScalarField(grid, np.where(good, p, np.nan), good)
    raise ValueError(f"unknown method {method!r}")


def expected_momentum(psi: np.ndarray, grid: GridSpec, hbar: float) -> float:
    """``<p>`` of one slice as ``int |Psi|^2 d(Re S)/dx dx / int |Psi|^2 dx``.

    The imaginary part of ``-i hbar <Psi|d/dx|Psi>`` integrates to a boundary
    term, so only the phase gradient survives.
    """
    p = momentum_field(ScalarField(grid, np.asarray(psi, dtype=complex)), hbar)
    rho = np.abs(psi) ** 2
    ok = p.valid
    return float(np.sum(rho[ok] * p.values[ok].real) / np.sum(rho[ok]))


def expected_position(psi: np.ndarray, grid: GridSpec) -> float:
    rho = np.abs(psi) ** 2
    return float(np.sum(rho * grid.x) / np.sum(rho))


def packet_width(psi: np.ndarray, grid: GridSpec) -> float:
    rho = np.abs(psi) ** 2
    mu = np.sum(rho * grid.x) / np.sum(rho)
    return float(np.sqrt(np.sum(rho * (grid.x - mu) ** 2) / np.sum(rho)))


def quantum_hj_residual(S: ScalarField, system: QuantumSystem, interior_only: bool = True) -> ResidualReport:
    """``S_x^2/(2m) + U - (i hbar/2m) S_xx + S_t`` over unmasked nodes.

    For a field without a time axis the ``S_t`` term is absent, so the
    residual equals the energy of a stationary state.
    """
    grid = S.grid
    Sx = fd_partial(S, "space")
    Sxx = fd_partial(Sx, "space")
    X = grid.x if not S.has_time else grid.mesh()[0]
    r = Sx.values ** 2 / (2 * system.m) + system.U(X) - 1j * system.hbar / (2 * system.m) * Sxx.values
    valid = Sx.valid & Sxx.valid
    if S.has_time:
        St = fd_partial(S, "time")
        r = r + St.values
        valid = valid & St.valid
    if interior_only:
        valid = valid.copy()
        valid[0] = False
        valid[-1] = False
    return ResidualReport.from_residual(np.where(valid, r, 0.0), valid)


# stationary states ---------------------------------------------------------------

def _sturm_count(diag: list, off2: float, lam: float) -> int:
    """Number of eigenvalues below ``lam`` of a symmetric tridiagonal matrix."""
    count = 0
    q = diag[0] - lam
    if q < 0:
        count += 1
    tiny = 1e-300
    for d in diag[1:]:
        if q == 0:
            q = tiny
        q = d - lam - off2 / q
        if q < 0:
            count += 1
    return count


def _bisect_eigenvalue(diag: list, off: float, k: int, lo: float, hi: float) -> float:
    off2 = off * off
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi or hi - lo <= 2e-16 * max(abs(lo), abs(hi)):
            break
        if _sturm_count(diag, off2, mid) > k:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _inverse_iteration(lower, diag, upper, lam):
    n = diag.size
    v = np.ones(n) / math.sqrt(n)
    shift = lam + 1e-10 * max(1.0, abs(lam))
    for _ in range(4):
        try:
            w = solve_tridiagonal(lower, diag - shift, upper, v)
        except SingularSystemError:
            shift += 1e-9 * max(1.0, abs(lam))
            continue
        v = w / np.linalg.norm(w)
    return v


def stationary_states(system: QuantumSystem, grid: GridSpec, count: int) -> list:
    """Lowest ``count`` eigenpairs of the discrete Hamiltonian (Dirichlet walls).

    Eigenvalues by Sturm-sequence bisection, eigenvectors by inverse
    iteration.  ``phi`` is normalized with weight ``dx`` and signed positive
    on its leftmost lobe.  Each state must be resolved by at least 40 nodes
    per local de Broglie wavelength.
    """
    if not 1 <= count <= 10:
        raise ConfigurationError("count must be between 1 and 10")
    lower, diag, upper = hamiltonian_bands(system, grid)
    off = float(lower[0])
    dlist = diag.tolist()
    g_lo = float(diag.min() - 2 * abs(off))
    g_hi = float(diag.max() + 2 * abs(off))
    u_min = float(np.min(system.U(grid.x[1:-1]) * np.ones(grid.nx - 2)))
    pairs = []
    for k in range(count):
        E = _bisect_eigenvalue(dlist, off, k, g_lo, g_hi)
        vec = _inverse_iteration(lower, diag, upper, E)
        phi = np.concatenate([[0.0], vec, [0.0]])
        phi /= math.sqrt(np.sum(phi ** 2) * grid.dx)
        significant = np.flatnonzero(np.abs(phi) > 1e-6 * np.abs(phi).max())
        if phi[significant[0]] < 0:
            phi = -phi
        p_max = math.sqrt(max(2 * system.m * (E - u_min), 0.0))
        if p_max > 0 and 2 * math.pi * system.hbar / p_max / grid.dx < 40:
            raise GridResolutionError(f"state {k} (E={E:.6g}) has fewer than 40 nodes per wavelength")
        res = apply_hamiltonian(system, grid, phi) - E * phi
        pairs.append(EigenPair(E=E, phi=phi, grid=grid, residual=l2_norm(res, grid)))
    return pairs


def sign_changes(phi: np.ndarray, rel: float = 1e-8) -> int:
    big = phi[np.abs(phi) > rel * np.abs(phi).max()]
    return int(np.sum(np.sign(big[1:]) != np.sign(big[:-1])))


def stationary_action(pair: EigenPair, hbar: float, t0: float = 0.0, t1: float = 1.0, nt: int = 11) -> StationaryAction:
    """``W = -i hbar ln Phi`` and ``S(x, t) = W(x) - E t``; strategy field ``dW/dx``."""
    g = pair.grid
    W = _log_field(pair.phi.astype(complex), g, hbar)
    tg = GridSpec(g.x_min, g.x_max, g.nx, t0, t1, nt)
    S_vals = W.values[:, None] - pair.E * tg.t[None, :]
    S_mask = np.repeat(W.valid[:, None], nt, axis=1)
    S = ScalarField(tg, np.where(S_mask, S_vals, np.nan), S_mask)
    return StationaryAction(W=W, S=S, momentum=fd_partial(W, "space"), E=pair.E)


# classical limit -----------------------------------------------------------------

@dataclass(frozen=True)
class SemiclassicalScenario:
    """WKB-prepared packet ``A(x) exp(i S_cl(x, P0, t0) / hbar)`` with a fixed
    Gaussian envelope, compared against the classical field ``dS_cl/dx``
    inside a window carried along by the classical flow."""

    grid: GridSpec
    generator: GeneratorFamily
    P0: float
    m: float
    x_c: float
    sigma: float
    window: float = 1.0
    U: Optional[Callable] = None


def _zero_potential(x):
    return 0.0 * x


def _window_edges(sc: SemiclassicalScenario, times):
    def rhs(y, t):
        return np.asarray(sc.generator.S_x(y, sc.P0, t), dtype=float) / sc.m

    y = np.array([sc.x_c - sc.window * sc.sigma, sc.x_c + sc.window * sc.sigma])
    edges = [y.copy()]
    for a, b in zip(times[:-1], times[1:]):
        sub = 8
        h = (b - a) / sub
        for j in range(sub):
            y = rk4_step(rhs, y, a + j * h, h)
        edges.append(y.copy())
    return np.array(edges)


def classical_limit_sweep(sc: SemiclassicalScenario, hbar_list: Sequence[float]) -> ConvergenceTable:
    """Distance between ``Re dS/dx`` of the evolved state and the classical
    momentum field, for each hbar."""
    hbars = [float(h) for h in hbar_list]
    if any(h <= 0 for h in hbars) or any(b >= a for a, b in zip(hbars[:-1], hbars[1:])):
        raise ConfigurationError("hbar list must be positive and strictly decreasing")
    grid = sc.grid
    times = grid.t
    edges = _window_edges(sc, times)
    X, T = grid.mesh()
    inside = (X >= edges[:, 0][None, :]) & (X <= edges[:, 1][None, :])
    p_cl = np.asarray(sc.generator.S_x(X, sc.P0, T), dtype=float)
    cols = {"discrepancy": [], "quantum_correction": [], "reference_sup": [], "boundary_ok": []}
    for hbar in hbars:
        system = QuantumSystem(sc.m, sc.U if sc.U is not None else _zero_potential, hbar)
        psi0 = wkb_packet(grid, sc.x_c, sc.sigma, lambda x: sc.generator.S(x, sc.P0, grid.t0), system)
        wave = crank_nicolson_evolve(psi0, system, grid)
        S = phase_action(wave, hbar)
        Sx = fd_partial(S, "space")
        Sxx = fd_partial(Sx, "space")
        ok = inside & Sx.valid & Sxx.valid
        if not ok.any():
            raise DegenerateStateError("comparison window is fully masked")
        cols["discrepancy"].append(float(np.max(np.abs(Sx.values.real[ok] - p_cl[ok]))))
        cols["quantum_correction"].append(float(np.max(np.abs(hbar / (2 * sc.m) * Sxx.values[ok]))))
        cols["reference_sup"].append(float(np.max(np.abs(p_cl[inside]))))
        cols["boundary_ok"].append(bool(wave.boundary_ok))
    return ConvergenceTable("hbar", hbars, cols)


# phase tower ----------------------------------------------------------------------

def phase_tower(psi: Union[WaveField, ScalarField], hbar: float, depth: int = 3) -> PhaseTower:
    """Iterated complex logarithm of ``Psi`` down to ``depth`` levels (max 3)."""
    if not 1 <= depth <= 3:
        raise ConfigurationError("tower depth must be 1, 2 or 3")
    grid, values, mask = _wave_values(psi)
    levels = []
    current, current_mask = values, mask
    for level in range(depth):
        try:
            f = _log_field(current, grid, hbar, current_mask)
        except DegenerateStateError as exc:
            raise TowerTruncationError(f"level {level + 1} has no unmasked nodes", depth=level) from exc
        levels.append(f)
        current, current_mask = f.values, f.valid
    err = 0.0
    upper = values
    upper_ok = np.ones(np.shape(values), dtype=bool) if mask is None else mask
    for f in levels:
        ok = f.valid & upper_ok
        rebuilt = np.exp(1j * f.values[ok] / hbar)
        ref = np.asarray(upper)[ok]
        if ref.size:
            err = max(err, float(np.max(np.abs(rebuilt - ref) / np.abs(ref))))
        upper, upper_ok = f.values, f.valid
    if err > 1e-8:
        raise TowerTruncationError(f"tower reconstruction error {err:.2e}", depth=len(levels))
    return PhaseTower(levels=levels, hbar=hbar, reconstruction_error=err)


def reconstruct_wave(tower: PhaseTower) -> np.ndarray:
    """``exp(i/h exp(i/h ...))`` from the deepest level back to ``Psi``."""
    v = tower.levels[-1].values
    for _ in range(tower.depth):
        v = np.exp(1j * v / tower.hbar)
    return v


@dataclass(frozen=True, eq=False)
class MultistageReport:
    """Relative residuals of the tower strategy identities.

    ``first``: ``p_S - (i/h) S p_T``.  ``p_T_agreement``: the level-2 momentum
    against the x-derivative of the extracted ``T``.  ``printed`` and
    ``chain_rule``: ``p_S - (i/h) p_U S T`` and ``p_S - (i/h)^2 p_U S T``.
    """

    first: ResidualReport
    p_T_agreement: ResidualReport
    printed: Optional[ResidualReport]
    chain_rule: Optional[ResidualReport]
    coverage: float

    def passed(self, tol: float = 1e-12, min_coverage: float = 0.5) -> bool:
        return self.first.sup_norm <= tol and self.coverage >= min_coverage


def _relative(r, valid, scale_src):
    scale = np.max(np.abs(scale_src[valid])) if valid.any() else 1.0
    scale = scale if scale > 0 else 1.0
    return ResidualReport.from_residual(np.where(valid, r / scale, 0.0), valid)


def multistage_identity_check(tower: PhaseTower) -> MultistageReport:
    """Check ``p_S = (i/h) S p_T`` and both writings of the depth-3 identity.

    ``p_S`` is the x-derivative of ``S``.  The level-2 momentum ``p_T`` is the
    local momentum eigenvalue of ``S`` read as a wave with phase ``T``,
    ``-i h (dS/dx) / S``; likewise ``p_U = -i h (dT/dx) / T``.
    """
    if tower.depth < 2:
        raise PreconditionError("identity check needs a tower of depth >= 2")
    h = tower.hbar
    S, T = tower.levels[0], tower.levels[1]
    dS = fd_partial(S, "space")
    dT = fd_partial(T, "space")
    with np.errstate(divide="ignore", invalid="ignore"):
        p_S = dS.values
        p_T = -1j * h * dS.values / S.values
        valid = dS.valid & S.valid & T.valid & np.isfinite(p_T)
        first = _relative(p_S - 1j / h * S.values * p_T, valid, p_S)
        agree_ok = valid & dT.valid
        agreement = _relative(p_T - dT.values, agree_ok, p_T)
        printed = chain = None
        coverage = float(valid.mean())
        if tower.depth >= 3:
            p_U = -1j * h * dT.values / T.values
            ok3 = valid & dT.valid & np.isfinite(p_U)
            printed = _relative(p_S - 1j / h * p_U * S.values * T.values, ok3, p_S)
            chain = _relative(p_S - (1j / h) ** 2 * p_U * S.values * T.values, ok3, p_S)
    return MultistageReport(first=first, p_T_agreement=agreement, printed=printed, chain_rule=chain,
                            coverage=coverage)
