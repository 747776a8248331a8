"""Tests for the Feasibility Guard, the Chance Guard and CcOpfVerifier."""

from types import SimpleNamespace

import numpy as np
import pytest

from gp_ccopf.core import CcOpfVerifier, VerificationResult
from gp_ccopf.guards.chance import ChanceGuard
from gp_ccopf.guards.feasibility import FeasibilityGuard
from gp_ccopf.opf.ccopf import CcOpfProblem


@pytest.fixture
def problem(make_surrogate):
    model = make_surrogate([[1.0, 0.0]], low=np.array([0.0, 0.5]), high=np.array([3.0, 1.5]))
    return CcOpfProblem(
        model=model,
        u_min=[0.0],
        u_max=[3.0],
        y_min=[-np.inf],
        y_max=[2.0],
        cost=[[1.0, 0.0, 0.0]],
        p_load=[1.0],
        p_res=[],
        sigma_w=[0.01],
        y_labels=["p_out"],
    )


def _dispatch(u, alpha):
    return SimpleNamespace(u=np.array(u), alpha=np.array(alpha))


def _report(joint, n_failed=0):
    return SimpleNamespace(joint_violation=joint, max_violation=joint, n_samples=1000, n_failed=n_failed)


class TestFeasibilityGuard:
    """Feasibility Guard tests."""

    def test_feasible_point(self, problem):
        """A balanced point inside the margins passes."""
        result = FeasibilityGuard().verify(problem, _dispatch([1.0], [1.0]))
        assert result.verified is True
        assert result.details["violated"] == []

    def test_alpha_off_simplex(self, problem):
        """Participation factors not summing to one fail."""
        result = FeasibilityGuard().verify(problem, _dispatch([1.0], [0.5]))
        assert result.verified is False
        assert "alpha sums to" in result.error

    def test_balance_residual(self, problem):
        """Unbalanced set-points fail."""
        result = FeasibilityGuard().verify(problem, _dispatch([0.8], [1.0]))
        assert result.verified is False
        assert result.details["balance_residual"] == pytest.approx(-0.2)

    def test_margin_violation(self, problem):
        """An output too close to its limit is named."""
        tight = CcOpfProblem.from_document({**problem.to_document(), "y_max": [1.005]}, problem.model)
        result = FeasibilityGuard().verify(tight, _dispatch([1.0], [1.0]))
        assert result.verified is False
        assert result.details["violated"] == ["p_out_max"]


class TestChanceGuard:
    """Chance Guard tests."""

    def test_within_target(self):
        """Joint violation at or under eps plus tolerance passes."""
        result = ChanceGuard().verify(_report(0.03), eps_y=0.025)
        assert result.verified is True
        assert result.details["limit"] == pytest.approx(0.045)

    def test_exceeds_target(self):
        """Joint violation above the limit fails."""
        result = ChanceGuard(tol=0.0).verify(_report(0.03), eps_y=0.025)
        assert result.verified is False
        assert "0.0300" in result.error


class TestCcOpfVerifier:
    """Aggregated verification."""

    def test_all_pass(self, problem):
        """A feasible solution with a good report passes every guard."""
        result = CcOpfVerifier().verify(problem, _dispatch([1.0], [1.0]), _report(0.01))
        assert result.verified is True
        assert [g.guard_name for g in result.guards] == ["Feasibility Guard", "Chance Guard"]
        assert str(result) == "✅ All guards passed"

    def test_without_report(self, problem):
        """Without a report only the Feasibility Guard runs."""
        result = CcOpfVerifier().verify(problem, _dispatch([1.0], [1.0]))
        assert len(result.guards) == 1

    def test_strict_mode_fails_on_chance(self, problem):
        """In strict mode a high violation frequency fails the verification."""
        result = CcOpfVerifier().verify(problem, _dispatch([1.0], [1.0]), _report(0.5))
        assert result.verified is False
        assert str(result) == "❌ 1 guard(s) failed: Chance Guard"
        assert result.error.startswith("Empirical joint violation")

    def test_lenient_mode(self, problem):
        """Outside strict mode only feasibility decides."""
        result = CcOpfVerifier(strict_mode=False).verify(problem, _dispatch([1.0], [1.0]), _report(0.5))
        assert result.verified is True

    def test_guard_exception(self, problem):
        """Exceptions inside a guard become failed results."""
        result = CcOpfVerifier().verify(problem, None)
        assert result.verified is False
        assert result.guards[0].error.startswith("Guard execution error")

    def test_failed_string_lists_all(self):
        """Every failed guard is listed."""
        result = VerificationResult(
            verified=False,
            guards=[
                CcOpfVerifier._run("Feasibility Guard", lambda: 1 / 0),
                CcOpfVerifier._run("Chance Guard", ChanceGuard(0.0).verify, _report(1.0), 0.01),
            ],
        )
        assert str(result) == "❌ 2 guard(s) failed: Feasibility Guard, Chance Guard"


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
