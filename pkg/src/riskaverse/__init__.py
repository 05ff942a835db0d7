"""Risk-averse multi-agent decisions driven by BSDE risk measures.

Forward simulation of controlled diffusions, g-expectation risk values by
regression Monte Carlo and exact lattices, convex-set viability checks,
finite-difference value PDEs, best-response equilibria and Pareto frontiers.
"""

from .bsde import BsdeSolution, TreeModel, TreeSolution, solve_bsde_lsmc, solve_bsde_tree
from .equilibrium import (AllocationPoint, allocation_frontier, best_response, gauss_seidel_equilibrium,
                          pareto_dominates, pareto_filter, pareto_mask, simplex_grid)
from .errors import NumericalError, ValidationError
from .generators import (CompositeGenerator, GeneratorFunctional, RiskCostSpec, check_assumption1, composite,
                         eval_generator)
from .hjb import (GridSpec, HjbDiagnostics, PolicyGrid, ValueGrid, crosscheck_value_mc, extract_policy,
                  solve_hjb_system)
from .risk import check_comparison, check_risk_axioms, risk_measure
from .sde import DiffusionModel, PathBundle, TimeGrid, check_model_assumptions, simulate_forward
from .viability import ConvexSet, check_bsvp_inequality, check_path_viability, check_value_viability

__version__ = "0.1.0"

__all__ = [
    "AllocationPoint", "BsdeSolution", "CompositeGenerator", "ConvexSet", "DiffusionModel",
    "GeneratorFunctional", "GridSpec", "HjbDiagnostics", "NumericalError", "PathBundle", "PolicyGrid",
    "RiskCostSpec", "TimeGrid", "TreeModel", "TreeSolution", "ValidationError", "ValueGrid",
    "allocation_frontier", "best_response", "check_assumption1", "check_bsvp_inequality", "check_comparison",
    "check_model_assumptions", "check_path_viability", "check_risk_axioms", "check_value_viability",
    "composite", "crosscheck_value_mc", "eval_generator", "extract_policy", "gauss_seidel_equilibrium",
    "pareto_dominates", "pareto_filter", "pareto_mask", "risk_measure", "simplex_grid", "simulate_forward",
    "solve_bsde_lsmc", "solve_bsde_tree", "solve_hjb_system",
]
