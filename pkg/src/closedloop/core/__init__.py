from .consistency import action_value, consistency_residual, dynamics_defect, payoff_integral
from .numerics import (
    fd_partial,
    interpolate,
    leapfrog_step,
    maximize_scalar,
    maximize_vectorized,
    rk4_step,
    root_find_1d,
    solve_tridiagonal,
    unwrap_phase,
)
from .types import (
    ControlClosedLoop,
    ControlProblem,
    CostateClosedLoop,
    GridSpec,
    HamiltonianSystem,
    OpenLoop,
    ResidualReport,
    ScalarField,
    SeparableForm,
    Strategy,
    Trajectory,
    WaveField,
    separable_system,
)
from .probes import check_partials

__all__ = [
    "ControlClosedLoop", "ControlProblem", "CostateClosedLoop", "GridSpec", "HamiltonianSystem",
    "OpenLoop", "ResidualReport", "ScalarField", "SeparableForm", "Strategy", "Trajectory",
    "WaveField", "action_value", "check_partials", "consistency_residual", "dynamics_defect",
    "fd_partial", "interpolate", "leapfrog_step", "maximize_scalar", "maximize_vectorized",
    "payoff_integral", "rk4_step", "root_find_1d", "separable_system", "solve_tridiagonal",
    "unwrap_phase",
]
