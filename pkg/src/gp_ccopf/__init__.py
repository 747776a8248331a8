"""gp-ccopf: data-driven chance-constrained AC optimal power flow with Gaussian-process surrogates."""

from gp_ccopf.core import CcOpfVerifier, VerificationResult
from gp_ccopf.dataset import Dataset, SamplingConfig, build_dataset
from gp_ccopf.gp import GpModel, MultiGpModel, fit, fit_multi
from gp_ccopf.grid import GridCase, OutputSpec, load_builtin_case, load_case, solve_ac_pf
from gp_ccopf.guards import BalanceGuard, CaseGuard, ChanceGuard, FeasibilityGuard
from gp_ccopf.opf import CcOpfProblem, CcOpfSolution, ac_opf, full_recourse, scenario_cc_opf, solve
from gp_ccopf.propagation import InputDistribution, propagate
from gp_ccopf.validation import ScenarioSet, mc_validate

__all__ = [
    "CcOpfVerifier", "VerificationResult",
    "Dataset", "SamplingConfig", "build_dataset",
    "GpModel", "MultiGpModel", "fit", "fit_multi",
    "GridCase", "OutputSpec", "load_builtin_case", "load_case", "solve_ac_pf",
    "BalanceGuard", "CaseGuard", "ChanceGuard", "FeasibilityGuard",
    "CcOpfProblem", "CcOpfSolution", "ac_opf", "full_recourse", "scenario_cc_opf", "solve",
    "InputDistribution", "propagate",
    "ScenarioSet", "mc_validate",
]
__version__ = "0.1.0"
