"""Exception hierarchy for GP-CCOPF.

Every error carries a ``details`` dict with machine-readable diagnostics so
callers (and the CLI) can report what went wrong without parsing messages.
"""

from typing import Any, Optional


class GpCcOpfError(Exception):
    """Base class for all toolkit errors."""

    def __init__(self, message: str, details: Optional[dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}


# grid and power flow

class ParseError(GpCcOpfError):
    """Case text could not be parsed (details carry line / field)."""


class ValidationError(GpCcOpfError):
    """A GridCase (or other document) violates its invariants."""


class SpecMismatch(GpCcOpfError):
    """An OutputSpec references elements absent from the case."""


class NonConvergence(GpCcOpfError):
    """Newton iterations hit the cap without meeting the tolerance."""


class SingularJacobian(GpCcOpfError):
    """The power-flow Jacobian is singular at the current iterate."""


# dataset generation

class DegenerateCase(GpCcOpfError):
    """The case cannot produce a meaningful sample (e.g. zero generation)."""


class TooManyFailures(GpCcOpfError):
    """Too many sampled operating points failed to solve."""


# gaussian processes

class FactorizationFailure(GpCcOpfError):
    """Cholesky factorization failed even after jitter escalation."""


class AllRestartsFailed(GpCcOpfError):
    """No hyperparameter restart produced a finite likelihood."""


class FingerprintMismatch(GpCcOpfError):
    """A dataset is not disjoint from (or does not match) a model's training data."""


# uncertainty propagation

class IllConditioned(GpCcOpfError):
    """Moment matching determinant factor under/overflowed."""


class InvalidAlpha(GpCcOpfError):
    """Participation factors are negative or do not sum to one."""


class PropagationFailure(GpCcOpfError):
    """Uncertainty propagation produced non-finite moments."""


# optimization

class DomainError(GpCcOpfError):
    """Argument outside the function's domain."""


class InfeasibleSubproblem(GpCcOpfError):
    """The optimizer could not meet the constraints (details list binding ones)."""


# configuration

class ConfigError(GpCcOpfError):
    """Run configuration is invalid."""
