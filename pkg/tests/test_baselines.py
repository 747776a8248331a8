"""Tests for the power-flow based baselines."""

import numpy as np
import pytest

from gp_ccopf.errors import DegenerateCase, DomainError
from gp_ccopf.grid.case import GridCase
from gp_ccopf.opf.acopf import DispatchLayout, ac_opf, dispatch_cost, full_recourse, scenario_cc_opf


class TestDispatchLayout:
    """Slack-following unit bookkeeping."""

    def test_three_bus_layout(self, three_bus_case):
        """The unit at bus 1 follows the power flow, the other is a set-point."""
        layout = DispatchLayout.of(three_bus_case)
        assert layout.slack_unit == 0
        np.testing.assert_array_equal(layout.free, [1])
        assert layout.fixed_at_slack == 0.0

    def test_no_unit_at_slack(self, three_bus_document):
        """A slack bus without a controllable unit is degenerate."""
        three_bus_document["generators"][0]["controllable"] = False
        case = GridCase.from_document(three_bus_document)
        with pytest.raises(DegenerateCase):
            ac_opf(case)

    def test_dispatch_cost(self):
        """Quadratic cost summed over units."""
        coeffs = np.array([[10.0, 5.0, 1.0], [1.0, 0.0, 0.0]])
        assert dispatch_cost(np.array([0.5, 2.0]), coeffs) == pytest.approx(2.5 + 2.5 + 1.0 + 4.0)


class TestAcOpf:
    """Deterministic AC-OPF."""

    def test_single_unit_needs_no_optimization(self, two_bus_case):
        """With only the slack unit the power flow fixes the dispatch."""
        result = ac_opf(two_bus_case)
        assert result.status == "converged"
        assert result.iterations == 0
        assert result.u[0] == pytest.approx(0.5, abs=1e-8)
        assert result.cost == pytest.approx(10.0 * 0.25 + 5.0 * 0.5, abs=1e-6)

    def test_equal_costs_split_evenly(self, three_bus_case):
        """Identical units on a lossless network share the load equally."""
        result = ac_opf(three_bus_case)
        assert result.status == "converged"
        np.testing.assert_allclose(result.u, [0.5, 0.5], atol=1e-4)
        assert result.u.sum() == pytest.approx(1.0, abs=1e-8)
        assert result.cost == pytest.approx(10.0, abs=1e-6)

    def test_outputs_follow_spec(self, three_bus_case):
        """Reported outputs are those of the final power flow."""
        result = ac_opf(three_bus_case)
        assert result.outputs.shape == (6,)
        assert result.pf is not None and result.pf.converged
        assert result.outputs[0] == pytest.approx(result.pf.v[2])

    def test_cheaper_unit_takes_more(self, three_bus_document):
        """A lower quadratic cost shifts dispatch to that unit."""
        three_bus_document["generators"][1]["c2"] = 5.0
        result = ac_opf(GridCase.from_document(three_bus_document))
        assert result.u[1] > result.u[0]
        assert result.u[1] == pytest.approx(2.0 / 3.0, abs=1e-3)

    def test_at_given_injections(self, three_bus_case):
        """Explicit loads replace the forecast."""
        result = ac_opf(three_bus_case, p_load=np.array([1.4]))
        assert result.u.sum() == pytest.approx(1.4, abs=1e-8)


class TestFullRecourse:
    """One AC-OPF per scenario."""

    def test_zero_fluctuation(self, three_bus_case):
        """Without fluctuations every scenario costs the same."""
        result = full_recourse(three_bus_case, np.zeros((3, 1)))
        np.testing.assert_allclose(result.costs, 10.0, atol=1e-6)
        assert result.failures == 0
        assert result.mean_cost == pytest.approx(10.0, abs=1e-6)

    def test_costs_grow_with_load(self, three_bus_case):
        """Higher load scenarios cost more."""
        result = full_recourse(three_bus_case, np.array([[-0.1], [0.0], [0.1]]), workers=2)
        assert result.costs[0] < result.costs[1] < result.costs[2]

    def test_failures_are_counted(self, two_bus_case):
        """Scenarios without a power-flow solution get a nan cost."""
        result = full_recourse(two_bus_case, np.array([[0.0], [50.0]]))
        assert result.failures == 1
        assert np.isnan(result.costs[1])
        assert result.mean_cost == pytest.approx(result.costs[0])


class TestScenarioCcOpf:
    """Sample-based chance-constrained baseline."""

    def test_single_zero_scenario_matches_ac_opf(self, three_bus_case):
        """One scenario without fluctuation reduces to the deterministic AC-OPF."""
        reference = ac_opf(three_bus_case)
        result = scenario_cc_opf(three_bus_case, np.zeros((1, 1)), balance="lossless")
        assert result.n_scenarios == 1
        np.testing.assert_allclose(result.u, reference.u, atol=1e-4)
        assert result.cost == pytest.approx(reference.cost, abs=1e-5)

    def test_participation_sums_to_one(self, three_bus_case):
        """Participation factors stay on the simplex."""
        omega = np.array([[-0.05], [0.0], [0.05]])
        result = scenario_cc_opf(three_bus_case, omega, balance="lossless")
        assert result.alpha.sum() == pytest.approx(1.0, abs=1e-8)
        assert np.all(result.alpha >= -1e-9)

    def test_unknown_balance(self, three_bus_case):
        """Only losses and lossless balance modes apply."""
        with pytest.raises(DomainError):
            scenario_cc_opf(three_bus_case, np.zeros((1, 1)), balance="none")

    def test_requires_scenarios(self, three_bus_case):
        """An empty scenario set is rejected."""
        with pytest.raises(ValueError):
            scenario_cc_opf(three_bus_case, np.zeros((0, 1)))


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
