"""Core CcOpfVerifier class for verifying solved chance-constrained dispatches."""

from dataclasses import dataclass, field
from typing import Optional

from gp_ccopf.guards.chance import ChanceGuard
from gp_ccopf.guards.feasibility import FeasibilityGuard


@dataclass
class GuardResult:
    """Result from a single guard verification."""

    guard_name: str
    verified: bool
    error: Optional[str] = None
    details: dict = field(default_factory=dict)


@dataclass
class VerificationResult:
    """Result from full dispatch verification."""

    verified: bool
    guards: list[GuardResult] = field(default_factory=list)
    error: Optional[str] = None

    def __str__(self) -> str:
        if self.verified:
            return "✅ All guards passed"
        failed = [g for g in self.guards if not g.verified]
        return f"❌ {len(failed)} guard(s) failed: {', '.join(g.guard_name for g in failed)}"


class CcOpfVerifier:
    """
    Verify a solved CC-OPF dispatch.

    Runs 2 guards:
    1. Feasibility Guard - re-evaluates the constraints at the solution
    2. Chance Guard - compares Monte-Carlo violation with eps_y (needs a report)

    Example:
        >>> verifier = CcOpfVerifier()
        >>> result = verifier.verify(problem, solution, report)
        >>> print(result)
        ✅ All guards passed
    """

    def __init__(self, strict_mode: bool = True, chance_tol: float = 0.02):
        """
        Initialize CcOpfVerifier.

        Args:
            strict_mode: If True, all guards must pass. If False, only Feasibility Guard is required.
            chance_tol: Absolute tolerance on top of eps_y for the Chance Guard
        """
        self.strict_mode = strict_mode
        self.feasibility_guard = FeasibilityGuard()
        self.chance_guard = ChanceGuard(chance_tol)

    def verify(self, problem, solution, report=None) -> VerificationResult:
        """
        Verify a solution, and its validation report when given.

        Returns:
            VerificationResult with verification status and guard details
        """
        feasibility = self._run("Feasibility Guard", self.feasibility_guard.verify, problem, solution)
        guards = [feasibility]
        if report is not None:
            guards.append(self._run("Chance Guard", self.chance_guard.verify, report, problem.eps_y))

        if self.strict_mode:
            verified = all(g.verified for g in guards)
        else:
            verified = feasibility.verified

        error = next((g.error for g in guards if not g.verified and g.error), None)
        return VerificationResult(verified=verified, guards=guards, error=error)

    @staticmethod
    def _run(name: str, check, *args) -> GuardResult:
        try:
            result = check(*args)
            return GuardResult(guard_name=name, verified=result.verified, error=result.error, details=result.details)
        except Exception as e:
            return GuardResult(guard_name=name, verified=False, error=f"Guard execution error: {str(e)}")
