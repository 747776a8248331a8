"""Balance Guard - Verifies generated operating points.

Validates every sampled input row:
- Row width matches the case (n_u + n_L + n_R)
- All values are finite
- Generation plus renewables equals loss factor times load
- Reactive injections follow the fixed power ratio (when supplied)
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from gp_ccopf.grid.case import GridCase

BALANCE_RTOL = 1e-10
REACTIVE_RTOL = 1e-9


@dataclass
class BalanceGuardResult:
    """Result from Balance Guard verification."""

    verified: bool
    error: Optional[str] = None
    details: dict = field(default_factory=dict)


class BalanceGuard:
    """
    Verify dataset rows against the balance identity.

    The identity is ``sum(u) + sum(p_rs) + fixed = rho * sum(p_l)``, where
    ``fixed`` is the output of non-controllable generators.
    """

    def __init__(self, rtol: float = BALANCE_RTOL):
        self.rtol = rtol

    def verify(
        self,
        case: GridCase,
        X: np.ndarray,
        loss_factor: float,
        q_injections: Optional[np.ndarray] = None,
    ) -> BalanceGuardResult:
        """
        Verify input rows.

        Args:
            case: Network the rows were sampled for
            X: Rows ``[u, p_l, p_rs]``
            loss_factor: The rho used for sampling
            q_injections: Optional reactive powers ``[q_l, q_rs]`` per row

        Returns:
            BalanceGuardResult with the worst residual and offending rows
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != case.n_x:
            return BalanceGuardResult(
                verified=False,
                error=f"Expected {case.n_x} input columns, got {X.shape[1]}",
                details={"expected": case.n_x, "actual": X.shape[1]},
            )
        if not np.all(np.isfinite(X)):
            bad = np.where(~np.all(np.isfinite(X), axis=1))[0]
            return BalanceGuardResult(
                verified=False,
                error=f"{len(bad)} row(s) contain non-finite values",
                details={"rows": bad.tolist()},
            )

        n_u, n_l = case.n_u, len(case.loads)
        demand = loss_factor * X[:, n_u:n_u + n_l].sum(axis=1)
        supply = X[:, :n_u].sum(axis=1) + X[:, n_u + n_l:].sum(axis=1) + case.fixed_generation
        residual = np.abs(supply - demand) / np.maximum(np.abs(demand), 1.0)
        bad_rows = np.where(residual > self.rtol)[0]

        errors = []
        if bad_rows.size:
            errors.append(
                f"{bad_rows.size} row(s) violate the balance identity "
                f"(worst relative residual {residual.max():.3e})"
            )

        reactive_rows = np.array([], dtype=int)
        if q_injections is not None:
            gamma = np.array([e.gamma for e in case.loads + case.renewables])
            p = X[:, n_u:]
            q = np.atleast_2d(np.asarray(q_injections, dtype=float))
            mismatch = np.abs(q - gamma * p) > REACTIVE_RTOL * np.maximum(np.abs(q), 1.0)
            reactive_rows = np.where(mismatch.any(axis=1))[0]
            if reactive_rows.size:
                errors.append(f"{reactive_rows.size} row(s) break q = gamma * p")

        details = {
            "rows": int(X.shape[0]),
            "max_relative_residual": float(residual.max()) if residual.size else 0.0,
            "unbalanced_rows": bad_rows.tolist(),
            "reactive_rows": reactive_rows.tolist(),
        }
        if errors:
            return BalanceGuardResult(verified=False, error="; ".join(errors), details=details)
        return BalanceGuardResult(verified=True, details=details)
