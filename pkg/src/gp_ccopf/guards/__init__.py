"""Guards that verify cases, datasets, solutions and validation reports."""

from .case import CaseGuard
from .balance import BalanceGuard
from .feasibility import FeasibilityGuard
from .chance import ChanceGuard

__all__ = [
    "CaseGuard",
    "BalanceGuard",
    "FeasibilityGuard",
    "ChanceGuard",
]
