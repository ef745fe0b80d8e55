import inspect
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from closedloop import catalog
from closedloop.core import GridSpec, HamiltonianSystem, ScalarField, Trajectory, consistency_residual
from closedloop.errors import DomainError, ReconstructionError, SeedError, ShapeError, SingularityError
from closedloop.mechanics import (
    ConstantLine,
    closed_to_open_momentum,
    free_particle_generator,
    hamilton_flow,
    harmonic_generator,
    hj_residual,
    momentum_from_action,
    reconstruct_from_constant_line,
    solve_phase_constraint,
)

FREE = catalog.free_particle()
HARM = catalog.harmonic_oscillator()
TIMES = np.linspace(0.0, 0.9, 91)


# flows -------------------------------------------------------------------------

def test_free_flow():
    tr = hamilton_flow(FREE, 2.0, -2.0, 0.01, 90)
    assert np.max(np.abs(tr.x - (2 - 2 * tr.times))) <= 1e-12
    assert np.all(tr.p == -2.0)
    rest = hamilton_flow(FREE, 0.7, 0.0, 0.1, 10)
    assert np.all(rest.x == 0.7) and np.all(rest.p == 0.0)


def test_harmonic_period_return():
    steps = 6283
    tr = hamilton_flow(HARM, 1.0, 0.0, 2 * math.pi / steps, steps)
    assert abs(tr.x[-1] - 1.0) <= 1e-4 and abs(tr.p[-1]) <= 1e-4


def test_flow_energy_bounded():
    tr = hamilton_flow(HARM, 1.0, 0.0, 0.01, 10_000)
    assert np.max(np.abs(0.5 * (tr.x ** 2 + tr.p ** 2) - 0.5)) <= 1e-4


def test_non_separable_flow_uses_rk4():
    # H = x p has x(t) = x0 e^t, p(t) = p0 e^-t
    sys = HamiltonianSystem(H=lambda x, p, t: x * p, H_x=lambda x, p, t: p, H_p=lambda x, p, t: x)
    tr = hamilton_flow(sys, 1.0, 2.0, 1e-3, 1000)
    assert abs(tr.x[-1] - math.e) <= 1e-10 and abs(tr.p[-1] - 2 / math.e) <= 1e-10


# phase-space constraints -------------------------------------------------------

def test_constraint_explicit():
    g = GridSpec(-1, 1, 21, 0, 1, 11)
    p = solve_phase_constraint(lambda x, p, t: p - x * t, g, lambda x: 0.0)
    X, T = g.mesh()
    assert p.valid.all()
    assert np.max(np.abs(p.values - X * T)) <= 1e-12


def test_constraint_branch_by_seed():
    g = GridSpec(0.1, 4.0, 79, 0, 1, 3)
    phi = lambda x, p, t: p * p - x
    p = solve_phase_constraint(phi, g, lambda x: 1.0)
    X, T = g.mesh()
    assert np.max(np.abs(p.values - np.sqrt(X))) <= 1e-10
    assert np.max(np.abs(phi(X, p.values, T))) <= 1e-10
    neg = solve_phase_constraint(phi, g, lambda x: -1.0)
    assert np.max(np.abs(neg.values + np.sqrt(X))) <= 1e-10


def test_constraint_free_particle_strategy():
    g = GridSpec(-1, 1, 41, 0, 0.5, 11)
    phi = lambda x, p, t: p + x / (1 - t)
    p = solve_phase_constraint(phi, g, lambda x: -x)
    X, T = g.mesh()
    assert np.max(np.abs(p.values - (-X / (1 - T)))) <= 1e-10
    assert np.max(np.abs(phi(X, p.values, T))) <= 1e-10


def test_constraint_seed_failure():
    g = GridSpec(-1, 1, 5, 0, 1, 3)
    with pytest.raises(SeedError):
        solve_phase_constraint(lambda x, p, t: p * p + 1.0, g, lambda x: 0.0)


# actions and residuals ---------------------------------------------------------

def _free_S(g):
    return ScalarField.from_function(g, lambda x, t: -x * x / (2 * (1 - t)))


def test_momentum_from_action_examples():
    g = GridSpec(-1, 1, 401, 0, 0.5, 11)
    X, T = g.mesh()
    assert np.max(np.abs(momentum_from_action(_free_S(g)).values + X / (1 - T))) <= 1e-8
    lin = ScalarField.from_function(g, lambda x, t: 1.5 * x - 0.3 * t)
    assert np.max(np.abs(momentum_from_action(lin).values - 1.5)) <= 1e-12
    flat = ScalarField(g, np.tile(np.sin(g.t), (g.nx, 1)))
    assert np.max(np.abs(momentum_from_action(flat).values)) <= 1e-12
    with pytest.raises(ShapeError):
        momentum_from_action(ScalarField(g, np.zeros((401, 11), complex)))


def test_free_action_solves_hj():
    g = GridSpec(-1, 1, 201, 0, 0.5, 4001)
    rep = hj_residual(_free_S(g), FREE)
    assert np.max(np.abs(rep.per_time_mean)) <= 1e-6
    assert np.max(rep.per_time_std) <= 1e-6


def test_zero_action_zero_residual():
    g = GridSpec(-1, 1, 21, 0, 1, 11)
    assert hj_residual(ScalarField(g, np.zeros((21, 11))), FREE).sup_norm == 0.0


def test_stationary_linear_potential_by_quadrature():
    # W(x) = int sqrt(2 m (E - U)) dx with U = x, E = 2; S = W - E t has g = 0
    m, E = 1.0, 2.0
    sys = catalog.linear_potential(m, 1.0)
    g = GridSpec(-1.0, 1.5, 501, 0.0, 1.0, 11)
    W = np.array([quad(lambda s: math.sqrt(2 * m * (E - s)), g.x_min, xi, epsabs=1e-13, epsrel=1e-13)[0]
                  for xi in g.x])
    X, T = g.mesh()
    S = ScalarField(g, W[:, None] - E * T)
    rep = hj_residual(S, sys)
    assert np.max(np.abs(rep.per_time_mean)) <= 1e-4
    assert np.max(rep.per_time_std) <= 1e-3
    interior = rep.residual[1:-1]
    assert np.max(np.abs(interior)) <= 1e-5


def test_consistency_follows_from_hj():
    # the consistency condition is the x-derivative of the HJ equation
    g = GridSpec(-1, 1, 201, 0, 0.5, 201)
    S = _free_S(g)
    p = momentum_from_action(S)
    hstar = p.with_values(0.5 * p.values ** 2)
    hj = hj_residual(S, FREE)
    cons = consistency_residual(hstar, p)
    assert cons.sup_norm <= 5e-3
    assert np.max(hj.per_time_std) <= 5e-3


# generators --------------------------------------------------------------------

def test_free_generator_values():
    gen = free_particle_generator(1.0)
    assert gen.S(2.0, 1.0, 0.0) == -2.0
    assert gen.S_x(2.0, 1.0, 0.0) == -2.0
    assert gen.singular_times(1.0) == [1.0]
    with pytest.raises(SingularityError):
        gen.S(2.0, 1.0, 1.0)


@settings(max_examples=50, deadline=None)
@given(x=st.floats(-2, 2), P=st.floats(0.5, 2), t=st.floats(0, 0.4),
       which=st.sampled_from(["free", "harmonic"]))
def test_generator_partials_match_differences(x, P, t, which):
    gen = free_particle_generator(1.0) if which == "free" else harmonic_generator(1.0, 1.3)
    h = 1e-6
    sx = (gen.S(x + h, P, t) - gen.S(x - h, P, t)) / (2 * h)
    sp = (gen.S(x, P + h, t) - gen.S(x, P - h, t)) / (2 * h)
    assert abs(sx - gen.S_x(x, P, t)) <= 1e-6 * max(1.0, abs(sx))
    assert abs(sp - gen.S_P(x, P, t)) <= 1e-6 * max(1.0, abs(sp))


def test_constant_line_validation():
    gen = free_particle_generator()
    assert ConstantLine("P", 1.0, gen).level == 1.0
    with pytest.raises(ValueError):
        ConstantLine("R", 1.0, gen)
    with pytest.raises(ValueError):
        ConstantLine("Q", math.nan, gen)


def test_reconstruction_worked_example():
    tr = reconstruct_from_constant_line(free_particle_generator(1.0), 1.0, 2.0, TIMES)
    assert np.max(np.abs(tr.x - 2 * (1 - TIMES))) <= 1e-8
    assert np.max(np.abs(tr.p + 2.0)) <= 1e-8
    assert abs(tr.x[0] - (-1.0 * tr.p[0])) <= 1e-8
    flow = hamilton_flow(FREE, 2.0, -2.0, 0.01, 90)
    assert np.max(np.abs(tr.x - flow.x)) <= 1e-8


def test_harmonic_reconstruction_matches_flow():
    tr = reconstruct_from_constant_line(harmonic_generator(), 0.5, 1.0, TIMES)
    assert np.max(np.abs(tr.x - (np.cos(TIMES) + 0.5 * np.sin(TIMES)))) <= 1e-8
    flow = hamilton_flow(HARM, 1.0, 0.5, 1e-4, 9000)
    assert np.max(np.abs(tr.x - flow.x[::100])) <= 1e-8
    assert np.max(np.abs(tr.p - flow.p[::100])) <= 1e-8


def test_reconstruction_errors():
    gen = free_particle_generator(1.0)
    with pytest.raises(SingularityError):
        reconstruct_from_constant_line(gen, 1.0, 2.0, [0.0, 0.5, 1.0])
    with pytest.raises(ReconstructionError) as info:
        reconstruct_from_constant_line(gen, 1.0, -1.0, TIMES)
    assert info.value.time == 0.0


def test_q_line_alone_is_not_a_strategy():
    params = inspect.signature(reconstruct_from_constant_line).parameters
    for name in ("P0", "Q0"):
        assert params[name].default is inspect.Parameter.empty


def test_closed_to_open_momentum():
    g = GridSpec(-0.5, 2.5, 601, 0.0, 0.9, 91)
    field = ScalarField.from_function(g, lambda x, t: -x / (1 - t))
    traj = Trajectory(TIMES, 2 * (1 - TIMES), np.zeros_like(TIMES))
    table = closed_to_open_momentum(field, traj)
    assert np.max(np.abs(table.u + 2.0)) <= 1e-10
    const = closed_to_open_momentum(ScalarField(g, np.full((601, 91), 0.25)), traj)
    assert np.all(const.u == 0.25)
    assert np.all(closed_to_open_momentum(lambda x, t: x * 0 + 3, traj).u == 3.0)
    with pytest.raises(DomainError):
        closed_to_open_momentum(field, Trajectory(TIMES, 3 + TIMES, np.zeros_like(TIMES)))
