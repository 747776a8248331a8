"""Feasibility Guard - Verifies a solved CC-OPF dispatch.

Re-evaluates the constraints at the returned point:
- Participation factors lie on the simplex
- The balance constraint holds
- Tightened output and set-point limits are met
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from gp_ccopf.opf.ccopf import evaluate_constraints

ALPHA_SUM_TOL = 1e-8
ALPHA_NEG_TOL = 1e-10
FEASIBILITY_TOL = 1e-6


@dataclass
class FeasibilityGuardResult:
    """Result from Feasibility Guard verification."""

    verified: bool
    error: Optional[str] = None
    details: dict = field(default_factory=dict)


class FeasibilityGuard:
    """
    Verify a CcOpfSolution against its CcOpfProblem.

    Checks:
    1. sum(alpha) == 1 within 1e-8 and alpha >= -1e-10
    2. |balance residual| <= tol
    3. Every margin slack >= -tol
    """

    def __init__(self, tol: float = FEASIBILITY_TOL):
        self.tol = tol

    def verify(self, problem, solution) -> FeasibilityGuardResult:
        alpha = np.asarray(solution.alpha, dtype=float)
        errors = []
        if abs(alpha.sum() - 1.0) > ALPHA_SUM_TOL:
            errors.append(f"alpha sums to {alpha.sum():.12g}")
        if np.any(alpha < -ALPHA_NEG_TOL):
            errors.append(f"alpha has negative entries (min {alpha.min():.3g})")

        evaluation = evaluate_constraints(problem, solution.u, alpha)
        residual = evaluation.balance_residual
        if np.isfinite(residual) and abs(residual) > self.tol:
            errors.append(f"balance residual {residual:.3g}")

        labels = list(problem.y_labels) or [f"y{a}" for a in range(problem.model.n_y)]
        violated = (
            [f"{labels[a]}_max" for a in np.flatnonzero(evaluation.y_upper_slack < -self.tol)]
            + [f"{labels[a]}_min" for a in np.flatnonzero(evaluation.y_lower_slack < -self.tol)]
            + [f"u{k}_max" for k in np.flatnonzero(evaluation.u_upper_slack < -self.tol)]
            + [f"u{k}_min" for k in np.flatnonzero(evaluation.u_lower_slack < -self.tol)]
        )
        if violated:
            errors.append(f"{len(violated)} margin constraint(s) violated")

        details = {
            "alpha_sum": float(alpha.sum()),
            "balance_residual": residual,
            "max_violation": evaluation.max_violation,
            "violated": violated,
        }
        if errors:
            return FeasibilityGuardResult(verified=False, error="; ".join(errors), details=details)
        return FeasibilityGuardResult(verified=True, details=details)
