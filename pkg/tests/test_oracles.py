"""Re-derive the frozen reference values without touching the package."""

import pytest

from . import oracles

sp = pytest.importorskip("sympy")
mp = pytest.importorskip("mpmath")

t, x, P, m, w, hb, s0 = sp.symbols("t x P m omega hbar sigma", positive=True)


def test_lq_closed_forms_solve_the_boundary_value_problem():
    X = sp.cosh(1 - t) / sp.cosh(1)
    L = -sp.sinh(1 - t) / sp.cosh(1)
    # u* = lam, x' = u, lam' = -dH/dx = x
    assert sp.simplify(sp.diff(X, t) - L) == 0
    assert sp.simplify(sp.diff(L, t) - X) == 0
    assert X.subs(t, 0) == 1 and L.subs(t, 1) == 0
    assert float(L.subs(t, 0)) == pytest.approx(oracles.LQ_LAMBDA0, abs=1e-15)
    assert float(X.subs(t, 1)) == pytest.approx(oracles.LQ_X1, abs=1e-15)


def test_lq_value_function_solves_hjb():
    J = -x ** 2 / 2 * sp.tanh(1 - t)
    assert sp.simplify(sp.diff(J, t) - x ** 2 / 2 + sp.diff(J, x) ** 2 / 2) == 0
    assert float(J.subs({x: 1, t: 0})) == pytest.approx(oracles.LQ_J10, abs=1e-15)
    lam = sp.diff(J, x)
    hstar = -(x ** 2 + lam ** 2) / 2 + lam * lam
    assert float(hstar.subs({x: 1, t: 0})) == pytest.approx(oracles.LQ_HSTAR10, abs=1e-15)


def test_lq_payoff_quadrature_matches_value():
    mp.mp.dps = 30
    val = mp.quad(lambda s: -(mp.cosh(1 - s) ** 2 + mp.sinh(1 - s) ** 2) / (2 * mp.cosh(1) ** 2), [0, 1])
    assert float(val) == pytest.approx(oracles.LQ_J10, abs=1e-15)


def test_generators_solve_their_hj_equations():
    S = (2 * x * P - (m * w * x ** 2 + P ** 2 / (m * w)) * sp.sin(w * t)) / (2 * sp.cos(w * t))
    assert sp.simplify(sp.diff(S, t) + sp.diff(S, x) ** 2 / (2 * m) + m * w ** 2 * x ** 2 / 2) == 0
    assert sp.diff(S, x).subs(t, 0) == P
    Sf = -x ** 2 / (2 * (P - t / m))
    assert sp.simplify(sp.diff(Sf, t) + sp.diff(Sf, x) ** 2 / (2 * m)) == 0


def test_gaussian_solves_free_schrodinger_and_width():
    st = s0 * (1 + sp.I * hb * t / (2 * m * s0 ** 2))
    psi = sp.exp(-x ** 2 / (4 * s0 * st)) / sp.sqrt(st)
    assert sp.simplify((sp.I * hb * sp.diff(psi, t) + hb ** 2 / (2 * m) * sp.diff(psi, x, 2)) / psi) == 0
    width = s0 * sp.sqrt(1 + (hb * t / (2 * m * s0 ** 2)) ** 2)
    val = width.subs({s0: sp.Rational(1, 2), hb: 1, m: 1, t: 1})
    assert sp.simplify(val - sp.sqrt(5) / 2) == 0
    assert float(val) == pytest.approx(oracles.GAUSS_WIDTH_T1, abs=1e-15)


def test_tower_chain_rule_and_printed_factor():
    V = sp.Function("V")(x)
    T = sp.exp(sp.I * V / hb)
    S = sp.exp(sp.I * T / hb)
    p_S = sp.diff(S, x)
    p_U = sp.diff(V, x)
    assert sp.simplify(p_S - (sp.I / hb) ** 2 * p_U * S * T) == 0
    ratio = sp.simplify((sp.I / hb) * p_U * S * T / p_S)
    assert sp.simplify(ratio + sp.I * hb) == 0
    rel = sp.Abs(1 - ratio).subs(hb, 1)
    assert float(rel) == pytest.approx(oracles.TOWER_PRINTED_REL_HBAR1, abs=1e-15)
