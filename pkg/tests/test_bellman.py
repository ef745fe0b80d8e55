import math

import numpy as np
import pytest
from scipy.integrate import quad

from closedloop import catalog
from closedloop.bellman import (
    HjbSolution,
    closed_loop_trajectory,
    compare_open_closed,
    costate_field,
    hjb_consistency,
    inhomogeneity_report,
    reduced_hamiltonian_field,
    solve_hjb,
)
from closedloop.core import ControlProblem, GridSpec, ScalarField, Trajectory, interpolate
from closedloop.errors import ConfigurationError, DomainError
from closedloop.pontryagin import solve_open_loop

from . import oracles

LQ = catalog.lq_problem()
LADDER = [(101, 501), (201, 1001), (401, 2001)]


def _problem(F, f, bounds=(-1.0, 1.0)):
    zero = lambda x, u, t: 0.0 * x
    return ControlProblem(F, f, zero, zero, zero, zero, 0.0, 1.0, 0.5, bounds)


ZERO = _problem(lambda x, u, t: 0.0 * x + 0.0 * u, lambda x, u, t: 0.0 * x + 0.0 * u)


@pytest.fixture(scope="module")
def ladder():
    return [solve_hjb(LQ, GridSpec(-2.0, 2.0, nx, 0.0, 1.0, nt)) for nx, nt in LADDER]


@pytest.fixture(scope="module")
def fine(ladder):
    return ladder[-1]


@pytest.fixture(scope="module")
def lq_open():
    return solve_open_loop(LQ)


def test_value_at_one(fine):
    assert abs(interpolate(fine.J, 1.0, 0.0) - oracles.LQ_J10) <= 2e-3


def test_terminal_condition_is_bitwise(fine):
    assert np.all(fine.J.values[:, -1] == 0.0)
    g = GridSpec(-1, 1, 21, 0, 1, 41)
    sol = solve_hjb(ZERO, g, terminal=lambda x: np.cos(x))
    assert np.array_equal(sol.J.values[:, -1], np.cos(g.x))


def test_value_refinement_order(ladder):
    errs = [abs(interpolate(s.J, 1.0, 0.0) - oracles.LQ_J10) for s in ladder]
    orders = [math.log2(a / b) for a, b in zip(errs[:-1], errs[1:])]
    assert min(orders) >= 0.9


def test_zero_payoff_keeps_terminal():
    g = GridSpec(-1, 1, 21, 0, 1, 41)
    sol = solve_hjb(ZERO, g)
    assert np.all(sol.J.values == 0.0)
    assert np.all(np.abs(sol.u_star.values) <= 1.0)
    assert hjb_consistency(ZERO, sol).sup_norm == 0.0
    assert inhomogeneity_report(ZERO, sol).sup_norm == 0.0
    assert np.all(reduced_hamiltonian_field(ZERO, sol).values == 0.0)


def test_frozen_state_value_by_quadrature():
    # f = 0: J(x,t) = int_t^1 max_u (x s u - u^2) ds = int_t^1 (x s)^2 / 4 ds
    prob = _problem(lambda x, u, t: x * t * u - u * u, lambda x, u, t: 0.0 * x + 0.0 * u)
    g = GridSpec(-1, 1, 11, 0, 1, 2001)
    sol = solve_hjb(prob, g)
    for i in (0, 3, 7):
        xi = g.x[i]
        for k in (0, 1000):
            ref, _ = quad(lambda s: (xi * s) ** 2 / 4, g.t[k], 1.0)
            assert abs(sol.J.values[i, k] - ref) <= 1e-3
    H = reduced_hamiltonian_field(prob, sol)
    X, T = g.mesh()
    assert np.max(np.abs(H.values - prob.F(X, sol.u_star.values, T))) == 0.0
    assert np.max(np.abs(sol.u_star.values - X * T / 2)) <= 1e-7


def test_cfl_violation_names_required_nt():
    with pytest.raises(ConfigurationError, match=r"nt >= \d+"):
        solve_hjb(LQ, GridSpec(-2, 2, 401, 0, 1, 20))


def test_costate_examples(fine):
    lam = costate_field(fine)
    assert abs(interpolate(lam, 1.0, 0.0) - oracles.LQ_LAMBDA0) <= 2e-3
    assert np.all(lam.values[1:-1, -1] == 0.0)
    g = GridSpec(-1, 1, 11, 0, 1, 5)
    flat = HjbSolution(ScalarField.from_function(g, lambda x, t: 3 * t + 0 * x), ScalarField(g, np.zeros((11, 5))),
                       ScalarField(g, np.zeros((11, 5))), g, 0.0)
    assert np.all(costate_field(flat).values == 0.0)


def test_reduced_hamiltonian_at_one(fine):
    H = reduced_hamiltonian_field(LQ, fine)
    assert abs(interpolate(H, 1.0, 0.0) - oracles.LQ_HSTAR10) <= 5e-3


def test_consistency_and_inhomogeneity(ladder, fine):
    cons = [hjb_consistency(LQ, s).sup_norm for s in ladder]
    assert cons[-1] <= 5e-2
    assert min(math.log2(a / b) for a, b in zip(cons[:-1], cons[1:])) >= 0.9
    inh = inhomogeneity_report(LQ, fine)
    assert inh.sup_norm <= 5e-2
    assert np.nanmax(inh.per_time_std) <= 5e-2
    inh_all = [inhomogeneity_report(LQ, s).sup_norm for s in ladder]
    assert inh_all[0] > inh_all[1] > inh_all[2]


def test_corrupted_costate_is_detected(fine):
    X, _ = fine.grid.mesh()
    lam = fine.lam.values + 0.1 * X
    u = np.clip(lam, *LQ.u_bounds)
    bad = HjbSolution(fine.J, ScalarField(fine.grid, u), ScalarField(fine.grid, lam), fine.grid, fine.cfl)
    assert hjb_consistency(LQ, bad).sup_norm >= 0.09


def test_time_shift_moves_g_estimate(fine):
    X, T = fine.grid.mesh()
    base = inhomogeneity_report(LQ, fine)
    shifted = HjbSolution(fine.J.with_values(fine.J.values + T ** 2), fine.u_star, fine.lam, fine.grid, fine.cfl)
    rep = inhomogeneity_report(LQ, shifted)
    assert np.max(np.abs(rep.per_time_mean - base.per_time_mean - 2 * fine.grid.t)) <= 1e-9
    assert np.max(np.abs(rep.per_time_std - base.per_time_std)) <= 1e-9


def test_closed_loop_rollout(fine):
    tr = closed_loop_trajectory(LQ, fine, 1.0, 1e-3)
    assert abs(tr.x[-1] - oracles.LQ_X1) <= 5e-3
    zero = closed_loop_trajectory(LQ, fine, 0.0, 1e-3)
    assert np.max(np.abs(zero.x)) <= 1e-8 and np.max(np.abs(zero.u)) <= 1e-7


def test_frozen_state_rollout():
    g = GridSpec(-1, 1, 21, 0, 1, 41)
    sol = solve_hjb(ZERO, g)
    tr = closed_loop_trajectory(ZERO, sol, 0.5, 1e-2)
    assert np.all(tr.x == 0.5)


def test_rollout_leaving_grid():
    push = _problem(lambda x, u, t: 0.0 * x + 0.0 * u, lambda x, u, t: 3.0 + 0.0 * x, bounds=(-1.0, 1.0))
    sol = solve_hjb(push, GridSpec(-1, 1, 21, 0, 1, 401))
    with pytest.raises(DomainError):
        closed_loop_trajectory(push, sol, 0.5, 1e-2)
    with pytest.raises(DomainError):
        closed_loop_trajectory(push, sol, 1.5, 1e-2)


def test_open_closed_equivalence_under_refinement(ladder, lq_open):
    d = [compare_open_closed(lq_open, closed_loop_trajectory(LQ, s, 1.0, 1e-3))["sup_dx"] for s in ladder]
    assert d[-1] <= 5e-3
    assert d[0] > d[1] > d[2]


def test_compare_identity_and_disjoint(lq_open):
    same = compare_open_closed(lq_open, lq_open)
    assert all(v == 0.0 for v in same.values())
    t = lq_open.times + 2.0
    later = Trajectory(t, lq_open.x, lq_open.p, lq_open.u)
    with pytest.raises(DomainError):
        compare_open_closed(lq_open, later)
