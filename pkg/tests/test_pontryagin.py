import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from closedloop import catalog
from closedloop.bellman import compare_open_closed
from closedloop.core import ControlProblem, action_value, dynamics_defect, payoff_integral
from closedloop.errors import ConfigurationError, NoConvergenceError
from closedloop.pontryagin import (
    ShootingConfig,
    arbitrary_closed_loop_flow,
    control_hamiltonian,
    control_table_trajectory,
    default_seeds,
    eliminate_control,
    extract_open_loop,
    hamiltonian_du,
    optimal_rule,
    pontryagin_rhs,
    solve_open_loop,
)

from . import oracles

LQ = catalog.lq_problem()


def _problem(F, f, F_x=None, F_u=None, f_x=None, f_u=None, bounds=(-1.0, 1.0)):
    zero = lambda x, u, t: 0.0 * x
    return ControlProblem(F, f, F_x or zero, F_u or zero, f_x or zero, f_u or zero, 0.0, 1.0, 1.0, bounds)


@pytest.fixture(scope="module")
def lq_open():
    return solve_open_loop(LQ, ShootingConfig(dt=1e-3, tol=1e-12))


def test_shooting_config_invariants():
    for kw in (dict(dt=0.0), dict(tol=-1.0), dict(seeds=(0.1, 0.1))):
        with pytest.raises(ConfigurationError):
            ShootingConfig(**kw)


def test_control_hamiltonian_examples():
    assert control_hamiltonian(LQ, 1.0, 0.0, 0.0, 0.0) == -0.5
    assert control_hamiltonian(LQ, 0.7, 0.2, 0.0, 0.3) == LQ.F(0.7, 0.2, 0.3)
    frozen = _problem(lambda x, u, t: -u * u, lambda x, u, t: 0.0 * x)
    assert control_hamiltonian(frozen, 1.0, 0.5, -3.0, 0.0) == control_hamiltonian(frozen, 1.0, 0.5, 7.0, 0.0)


def test_eliminate_control_examples():
    c = eliminate_control(LQ, 1.0, -0.5, 0.0)
    assert abs(c.u + 0.5) <= 1e-8 and not c.on_boundary
    lin = _problem(lambda x, u, t: 2.0 * u, lambda x, u, t: 0.0 * u, F_u=lambda x, u, t: 2.0 + 0 * u)
    c = eliminate_control(lin, 0.0, 0.0, 0.0)
    assert c.u == 1.0 and c.on_boundary
    quad = _problem(lambda x, u, t: -0.5 * u * u, lambda x, u, t: math.sin(x) + 0 * u,
                    F_u=lambda x, u, t: -u)
    assert abs(eliminate_control(quad, 0.3, 0.0, 0.0).u) <= 1e-8


@settings(max_examples=60, deadline=None)
@given(x=st.floats(-3, 3), lam=st.floats(-8, 8))
def test_lq_control_is_clipped_costate(x, lam):
    c = eliminate_control(LQ, x, lam, 0.0)
    lo, hi = LQ.u_bounds
    assert abs(c.u - min(max(lam, lo), hi)) <= 1e-8
    if abs(lam) < hi - 1e-6:
        assert not c.on_boundary
    if abs(lam) > hi + 1e-6:
        assert c.on_boundary


def test_pontryagin_rhs_examples():
    assert pontryagin_rhs(LQ, 1.0, 0.0, 0.0) == pytest.approx((0.0, 1.0), abs=1e-12)
    assert pontryagin_rhs(LQ, 0.0, 1.0, 0.37) == pytest.approx((1.0, 0.0), abs=1e-12)
    flat = _problem(lambda x, u, t: -u * u, lambda x, u, t: 2.0 + 0 * x, F_u=lambda x, u, t: -2 * u)
    assert pontryagin_rhs(flat, 0.4, 1.3, 0.2)[1] == 0.0


def test_open_loop_lq(lq_open):
    assert abs(lq_open.p[0] - oracles.LQ_LAMBDA0) <= 1e-6
    assert abs(lq_open.x[-1] - oracles.LQ_X1) <= 1e-6
    assert abs(lq_open.p[-1]) <= 1e-12
    assert lq_open.info["boundary_samples"] == 0


def test_open_loop_stationarity(lq_open):
    hu = hamiltonian_du(LQ, lq_open.x, lq_open.u, lq_open.p, lq_open.times)
    assert np.max(np.abs(hu)) <= 1e-6


def test_open_loop_payoff_free_problem():
    prob = _problem(lambda x, u, t: 0.0 * x, lambda x, u, t: u + 0 * x, f_u=lambda x, u, t: 1.0 + 0 * x)
    tr = solve_open_loop(prob)
    assert np.all(tr.p == 0.0)
    assert dynamics_defect(prob, tr) <= 1e-10


def test_open_loop_reports_best_residual():
    # lam(t1) is affine in lam(0) for LQ, so use a quartic payoff to keep secant busy
    quartic = _problem(lambda x, u, t: -0.25 * x ** 4 - 0.5 * u * u, lambda x, u, t: u + 0 * x,
                       F_x=lambda x, u, t: -x ** 3 + 0 * u, F_u=lambda x, u, t: -u + 0 * x,
                       f_u=lambda x, u, t: 1.0 + 0 * x, bounds=(-5.0, 5.0))
    with pytest.raises(NoConvergenceError) as info:
        solve_open_loop(quartic, ShootingConfig(dt=1e-2, tol=1e-15, max_iter=1))
    assert info.value.residual is not None and info.value.residual > 0


def test_default_seeds_break_symmetry():
    # dF/dx = -1 at x0 = 1, so the second seed is +0.5
    assert default_seeds(LQ) == (0.0, 0.5)


def test_reduction_identity(lq_open):
    dt = 1e-3
    flow = arbitrary_closed_loop_flow(LQ, optimal_rule(LQ), LQ.x0, lq_open.p[0], dt)
    assert np.max(np.abs(flow.x - lq_open.x)) <= 10 * dt * dt
    assert np.max(np.abs(flow.p - lq_open.p)) <= 10 * dt * dt


def test_constant_rule_is_plain_flow():
    c = 0.3
    flow = arbitrary_closed_loop_flow(LQ, lambda x, lam, t: c, 1.0, 0.2, 1e-3)
    t = flow.times
    assert np.max(np.abs(flow.x - (1.0 + c * t))) <= 1e-12
    # lam' = -dH/dx = x
    assert np.max(np.abs(flow.p - (0.2 + t + 0.5 * c * t * t))) <= 1e-12
    assert np.all(flow.u == c)


def test_suboptimal_rule_loses_payoff(lq_open):
    flow = arbitrary_closed_loop_flow(LQ, lambda x, lam, t: 2.0 * lam, 1.0, lq_open.p[0], 1e-3)
    assert payoff_integral(LQ, flow) < action_value(LQ, lq_open)
    assert compare_open_closed(lq_open, flow)["sup_dx"] >= 0.05


def test_extract_open_loop(lq_open):
    table = extract_open_loop(lq_open, optimal_rule(LQ))
    assert abs(table(0.0) - oracles.LQ_LAMBDA0) <= 1e-6
    assert np.max(np.abs(table.u - catalog.lq_costate(table.times))) <= 1e-6
    const = extract_open_loop(lq_open, lambda x, lam, t: -1.25)
    assert np.all(const.u == -1.25)


def test_maximum_principle_sampled(lq_open):
    best = action_value(LQ, lq_open)
    t = lq_open.times
    for k in range(1, 11):
        amp = 0.1 * (-1) ** k
        table = lambda s, k=k, amp=amp: float(np.interp(s, t, lq_open.u)) + amp * math.cos(k * s)
        tr = control_table_trajectory(LQ, table, 1e-3)
        assert action_value(LQ, tr) < best


def test_rk4_order_of_shooting():
    errs = [abs(solve_open_loop(LQ, ShootingConfig(dt=dt, tol=1e-14)).p[0] - oracles.LQ_LAMBDA0)
            for dt in (0.1, 0.05)]
    assert errs[0] / errs[1] >= 8
