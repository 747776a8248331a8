"""Tests for Case Guard - grid case document verification."""

import pytest

from gp_ccopf.guards.case import CaseGuard


class TestCaseGuardValid:
    """Well-formed documents."""

    def test_two_bus_passes(self, two_bus_document):
        """A minimal slack + PQ network is accepted."""
        result = CaseGuard().verify(two_bus_document)
        assert result.verified is True
        assert result.error is None
        assert result.details["buses"] == 2

    def test_three_bus_passes(self, three_bus_document):
        """A network with a PV bus is accepted."""
        assert CaseGuard().verify(three_bus_document).verified is True


class TestCaseGuardSchema:
    """Structural problems caught by the JSON schema."""

    def test_missing_section(self, two_bus_document):
        """Documents without generators fail schema validation."""
        del two_bus_document["generators"]
        result = CaseGuard().verify(two_bus_document)
        assert result.verified is False
        assert "Schema validation failed" in result.error
        assert result.details["validation_method"] == "jsonschema"

    def test_unknown_bus_kind(self, two_bus_document):
        """Bus kinds are restricted to slack / pv / pq."""
        two_bus_document["buses"][1]["kind"] = "load"
        result = CaseGuard().verify(two_bus_document)
        assert result.verified is False
        assert result.details["path"] == ["buses", 1, "kind"]

    def test_unexpected_field(self, two_bus_document):
        """Extra generator fields are rejected."""
        two_bus_document["generators"][0]["ramp"] = 1.0
        assert CaseGuard().verify(two_bus_document).verified is False


class TestCaseGuardInvariants:
    """Semantic invariants beyond the schema."""

    def test_two_slack_buses(self, two_bus_document):
        """Exactly one slack bus is required."""
        two_bus_document["buses"][1].update(kind="slack", v_set=1.0)
        result = CaseGuard().verify(two_bus_document)
        assert result.verified is False
        assert any("exactly one slack" in e for e in result.details["errors"])

    def test_slack_without_setpoint(self, two_bus_document):
        """Slack and PV buses need a voltage set-point."""
        del two_bus_document["buses"][0]["v_set"]
        result = CaseGuard().verify(two_bus_document)
        assert result.verified is False
        assert "needs v_set" in result.error

    def test_dangling_line(self, two_bus_document):
        """Line endpoints must exist."""
        two_bus_document["lines"][0]["to_bus"] = 7
        result = CaseGuard().verify(two_bus_document)
        assert result.verified is False
        assert "does not exist" in result.error

    def test_zero_admittance(self, two_bus_document):
        """A line with zero admittance is rejected."""
        two_bus_document["lines"][0]["b"] = 0.0
        assert "admittance is zero" in CaseGuard().verify(two_bus_document).error

    def test_setpoint_outside_limits(self, two_bus_document):
        """p_ref must lie inside [p_min, p_max]."""
        two_bus_document["generators"][0]["p_ref"] = 3.0
        assert "p_ref outside" in CaseGuard().verify(two_bus_document).error

    def test_generator_on_pq_bus(self, two_bus_document):
        """Generators sit on PV or slack buses."""
        two_bus_document["generators"].append(dict(two_bus_document["generators"][0], bus=2))
        assert "is a PQ bus" in CaseGuard().verify(two_bus_document).error

    def test_negative_cost(self, two_bus_document):
        """Cost coefficients are nonnegative."""
        two_bus_document["generators"][0]["c2"] = -1.0
        assert "c2 must be >= 0" in CaseGuard().verify(two_bus_document).error

    def test_negative_sigma(self, two_bus_document):
        """Fluctuation std-devs are nonnegative."""
        two_bus_document["loads"][0]["sigma"] = -0.1
        assert "sigma must be >= 0" in CaseGuard().verify(two_bus_document).error

    def test_inconsistent_power_ratio(self, two_bus_document):
        """gamma must equal q_ref / p_ref."""
        two_bus_document["loads"][0]["gamma"] = 0.5
        assert "gamma inconsistent" in CaseGuard().verify(two_bus_document).error

    def test_loss_factor_range(self, two_bus_document):
        """A stated loss factor must lie in [1, 1.2]."""
        two_bus_document["loss_factor"] = 1.5
        assert "loss_factor" in CaseGuard().verify(two_bus_document).error

    def test_collects_every_error(self, two_bus_document):
        """All violations are reported, not just the first."""
        two_bus_document["generators"][0]["c1"] = -1.0
        two_bus_document["loads"][0]["sigma"] = -1.0
        result = CaseGuard().verify(two_bus_document)
        assert result.details["error_count"] == 2


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
