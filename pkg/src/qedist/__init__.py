"""Quasi-equilibrium distributions of absorbing continuous-time chains.

The package computes equilibria of returned and accelerated-return
processes, evaluates the total-variation error bounds that justify them,
and validates everything against closed birth-death forms, exact
transient solvers and stochastic simulation.
"""

from .birthdeath import BirthDeathModel, make_density_model
from .bounds import (
    BoundInputs,
    BoundReport,
    crude_r_bound,
    epsilon_bound,
    eta_bound,
    optimize_zeta,
    tilde_bound,
    tv_bound_main,
)
from .generator import (
    ProbabilityVector,
    ReturnDistribution,
    SparseGenerator,
    accelerated_return_generator,
    build_returned_generator,
    censored_generator,
)
from .mpp import (
    GaussianSummary,
    PopulationModel,
    build_truncated_process,
    drift,
    find_equilibrium,
    mpp_quasi_equilibrium,
    solve_lyapunov,
)
from .solvers import (
    HittingStats,
    hitting_stats,
    stationary_distribution,
    total_variation,
    transient_distribution,
)
from .truncation import TruncationPlan, accelerated_stats, select_truncation

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "SparseGenerator",
    "ReturnDistribution",
    "ProbabilityVector",
    "build_returned_generator",
    "accelerated_return_generator",
    "censored_generator",
    "HittingStats",
    "stationary_distribution",
    "hitting_stats",
    "transient_distribution",
    "total_variation",
    "TruncationPlan",
    "select_truncation",
    "accelerated_stats",
    "BoundInputs",
    "BoundReport",
    "epsilon_bound",
    "tv_bound_main",
    "eta_bound",
    "tilde_bound",
    "crude_r_bound",
    "optimize_zeta",
    "BirthDeathModel",
    "make_density_model",
    "PopulationModel",
    "GaussianSummary",
    "drift",
    "find_equilibrium",
    "solve_lyapunov",
    "build_truncated_process",
    "mpp_quasi_equilibrium",
]
