"""Chance Guard - Verifies empirical violation frequencies.

Compares a Monte-Carlo validation against the target violation probability:
- Joint violation must not exceed eps_y plus an absolute tolerance
- Power-flow failures are reported alongside
"""

from dataclasses import dataclass, field
from typing import Optional

CHANCE_TOL = 0.02


@dataclass
class ChanceGuardResult:
    """Result from Chance Guard verification."""

    verified: bool
    error: Optional[str] = None
    details: dict = field(default_factory=dict)


class ChanceGuard:
    """
    Verify a ValidationReport against a target violation probability.

    Checks:
    1. joint_violation <= eps_y + tol
    """

    def __init__(self, tol: float = CHANCE_TOL):
        self.tol = tol

    def verify(self, report, eps_y: float) -> ChanceGuardResult:
        joint = float(report.joint_violation)
        limit = eps_y + self.tol
        details = {
            "joint_violation": joint,
            "max_violation": float(report.max_violation),
            "limit": limit,
            "n_samples": report.n_samples,
            "n_failed": report.n_failed,
        }
        if joint > limit:
            return ChanceGuardResult(
                verified=False,
                error=f"Empirical joint violation {joint:.4f} exceeds {limit:.4f}",
                details=details,
            )
        return ChanceGuardResult(verified=True, details=details)
