"""Analytic catalog problems and their closed-form oracles."""

from __future__ import annotations

import math

import numpy as np

from .core.types import ControlProblem, HamiltonianSystem, separable_system

TANH1 = math.tanh(1.0)
COSH1 = math.cosh(1.0)


def lq_problem(u_bound: float = 5.0) -> ControlProblem:
    """``F = -(x^2 + u^2)/2``, ``f = u``, ``x(0) = 1`` on ``[0, 1]``."""
    return ControlProblem(
        F=lambda x, u, t: -0.5 * (x * x + u * u),
        f=lambda x, u, t: u + 0.0 * x,
        F_x=lambda x, u, t: -x + 0.0 * u,
        F_u=lambda x, u, t: -u + 0.0 * x,
        f_x=lambda x, u, t: 0.0 * (x + u),
        f_u=lambda x, u, t: 1.0 + 0.0 * (x + u),
        t0=0.0,
        t1=1.0,
        x0=1.0,
        u_bounds=(-u_bound, u_bound),
        name="lq",
    )


# closed forms of the LQ problem
def lq_state(t):
    return np.cosh(1.0 - np.asarray(t)) / COSH1


def lq_costate(t):
    return -np.sinh(1.0 - np.asarray(t)) / COSH1


def lq_value(x, t):
    return -0.5 * np.asarray(x) ** 2 * np.tanh(1.0 - np.asarray(t))


def lq_feedback_costate(x, t):
    return -np.asarray(x) * np.tanh(1.0 - np.asarray(t))


def free_particle(m: float = 1.0) -> HamiltonianSystem:
    return separable_system(m, lambda x: 0.0 * x, lambda x: 0.0 * x, name="free-particle")


def harmonic_oscillator(m: float = 1.0, omega: float = 1.0) -> HamiltonianSystem:
    k = m * omega * omega
    return separable_system(m, lambda x: 0.5 * k * x * x, lambda x: k * x, name="harmonic")


def linear_potential(m: float = 1.0, slope: float = 1.0) -> HamiltonianSystem:
    return separable_system(m, lambda x: slope * x, lambda x: slope + 0.0 * x, name="linear-potential")
