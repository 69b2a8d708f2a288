"""Risk sharing on finite probability spaces.

Jackpot improvements, Pareto-optimal allocations, competitive equilibria and
rank-dependent comparisons for agents who may seek or avoid risk.
"""

from .allocation_engine import (
    counter_monotonic_improve,
    lambda_optimal,
    mixed_lambda_optimal,
    pareto_check_rs,
    ra_lambda_optimal,
    rs_lambda_optimal,
    shifted_improve,
    split_threshold,
    upf_trace,
)
from .equilibrium import (
    fixed_point_search,
    homogeneous_equilibrium,
    price_from_lambda,
    rdu_constant_equilibrium,
    two_agent_equilibrium,
    two_point_mixed_equilibrium,
    verify_equilibrium,
)
from .preferences import Agent, UtilityFunction, WeightingFunction, choquet, concave_envelope, rdu_utility
from .prob_core import (
    Allocation,
    DomainError,
    FiniteProbSpace,
    PriceMeasure,
    RandomVariable,
    ValidationError,
    check_dependence,
    convex_order_leq,
)

__version__ = "0.1.0"

__all__ = [
    "Agent",
    "Allocation",
    "DomainError",
    "FiniteProbSpace",
    "PriceMeasure",
    "RandomVariable",
    "UtilityFunction",
    "ValidationError",
    "WeightingFunction",
    "check_dependence",
    "choquet",
    "concave_envelope",
    "convex_order_leq",
    "counter_monotonic_improve",
    "fixed_point_search",
    "homogeneous_equilibrium",
    "lambda_optimal",
    "mixed_lambda_optimal",
    "pareto_check_rs",
    "price_from_lambda",
    "ra_lambda_optimal",
    "rdu_constant_equilibrium",
    "rdu_utility",
    "rs_lambda_optimal",
    "shifted_improve",
    "split_threshold",
    "two_agent_equilibrium",
    "two_point_mixed_equilibrium",
    "upf_trace",
    "verify_equilibrium",
]
