"""Convex unit-commitment dispatch with aggregate or per-device storage fleets."""

from fleetagg.ucsolver.costs import CostFunction, Generator
from fleetagg.ucsolver.model import (
    Aggregate,
    AreaModel,
    CompiledModel,
    InfeasibleProblemError,
    LineModel,
    PerDevice,
    RawSolution,
    Solution,
    UcProblem,
    kkt_residual,
    marginal_prices,
    solve,
    solve_aggregate,
    solve_areas,
    solve_per_device,
)

__all__ = [
    "Aggregate", "AreaModel", "CompiledModel", "CostFunction", "Generator", "InfeasibleProblemError",
    "LineModel", "PerDevice", "RawSolution", "Solution", "UcProblem", "kkt_residual", "marginal_prices",
    "solve", "solve_aggregate", "solve_areas", "solve_per_device",
]
