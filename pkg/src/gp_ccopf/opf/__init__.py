"""Optimization: GP chance-constrained OPF and the AC-OPF baselines."""

from gp_ccopf.opf.acopf import (
    AcOpfResult,
    RecourseResult,
    ScenarioCcOpfResult,
    ac_opf,
    full_recourse,
    scenario_cc_opf,
)
from gp_ccopf.opf.ccopf import CcOpfProblem, CcOpfSolution, evaluate_constraints, moment_jacobian, solve
from gp_ccopf.opf.nlp import SolverOptions, expected_cost, quantile

__all__ = [
    "AcOpfResult",
    "CcOpfProblem",
    "CcOpfSolution",
    "RecourseResult",
    "ScenarioCcOpfResult",
    "SolverOptions",
    "ac_opf",
    "evaluate_constraints",
    "expected_cost",
    "full_recourse",
    "moment_jacobian",
    "quantile",
    "scenario_cc_opf",
    "solve",
]
