"""Tests for Monte-Carlo validation and the reporting tables."""

import json

import numpy as np
import pandas as pd
import pytest

from gp_ccopf.dataset import SamplingConfig, build_dataset
from gp_ccopf.errors import FingerprintMismatch, SpecMismatch
from gp_ccopf.gp.kernel import KernelParams
from gp_ccopf.gp.model import GpModel, MultiGpModel
from gp_ccopf.grid.case import GridCase
from gp_ccopf.grid.caseio import load_builtin_case
from gp_ccopf.opf.ccopf import CcOpfProblem
from gp_ccopf.validation import (
    ApproachRow,
    ScenarioSet,
    comparison_table,
    mc_validate,
    mean_rmse,
    rmse_report,
    spread_table,
    write_table,
)

DISPATCH = (np.array([0.5, 0.5]), np.array([0.5, 0.5]))


class TestScenarioSet:
    """Fluctuation sampling."""

    def test_deterministic(self):
        """The same seed reproduces the same samples."""
        case = load_builtin_case("case9")
        a = ScenarioSet.sample(case, 20, seed=4)
        b = ScenarioSet.sample(case, 20, seed=4)
        np.testing.assert_array_equal(a.omega, b.omega)
        assert a.omega.shape == (20, case.n_d)

    def test_head_is_prefix(self):
        """Shorter sets are prefixes of longer ones."""
        case = load_builtin_case("case9")
        long = ScenarioSet.sample(case, 30, seed=1)
        short = ScenarioSet.sample(case, 10, seed=1)
        np.testing.assert_array_equal(long.head(10).omega, short.omega)

    def test_imbalance_signs(self):
        """Renewable fluctuations reduce the net imbalance."""
        case = load_builtin_case("case9")
        scenarios = ScenarioSet.sample(case, 5)
        expected = scenarios.omega[:, :3].sum(axis=1) - scenarios.omega[:, 3:].sum(axis=1)
        np.testing.assert_allclose(scenarios.imbalance, expected)

    def test_zero_sigma(self, three_bus_case):
        """Zero relative std-dev gives no fluctuation."""
        scenarios = ScenarioSet.sample(three_bus_case, 3, sigma_load=0.0)
        np.testing.assert_array_equal(scenarios.omega, 0.0)

    def test_requires_samples(self, three_bus_case):
        """At least one sample is needed."""
        with pytest.raises(ValueError):
            ScenarioSet.sample(three_bus_case, 0)


class TestMonteCarlo:
    """AC validation of a dispatch."""

    def test_no_violation_within_limits(self, three_bus_case):
        """A comfortable dispatch never violates a limit."""
        scenarios = ScenarioSet.sample(three_bus_case, 50, seed=2)
        report = mc_validate(three_bus_case, *DISPATCH, scenarios, label="even")
        assert report.joint_violation == 0.0
        assert report.max_violation == 0.0
        assert report.n_failed == 0
        assert report.outputs.shape == (50, 6)

    def test_recourse_follows_imbalance(self, three_bus_case):
        """The set-point unit moves by its share of the imbalance."""
        scenarios = ScenarioSet.sample(three_bus_case, 10, seed=3)
        report = mc_validate(three_bus_case, *DISPATCH, scenarios)
        np.testing.assert_allclose(report.units[:, 1], 0.5 + 0.5 * scenarios.imbalance)
        np.testing.assert_allclose(report.units.sum(axis=1), 1.0 + scenarios.imbalance, atol=1e-8)

    def test_tight_voltage_always_violated(self, three_bus_document):
        """A voltage cap below the operating voltage is violated by every sample."""
        three_bus_document["buses"][2]["v_max"] = 0.95
        three_bus_document["buses"][2]["v_min"] = 0.5
        case = GridCase.from_document(three_bus_document)
        report = mc_validate(case, *DISPATCH, ScenarioSet.sample(case, 20))
        assert report.joint_violation == 1.0
        assert report.violation["v_3"] == 1.0
        assert report.violation["q_1"] == 0.0

    def test_parallel_matches_serial(self, three_bus_case):
        """Worker count does not change the results."""
        scenarios = ScenarioSet.sample(three_bus_case, 12, seed=5)
        serial = mc_validate(three_bus_case, *DISPATCH, scenarios)
        pooled = mc_validate(three_bus_case, *DISPATCH, scenarios, workers=3)
        np.testing.assert_allclose(serial.outputs, pooled.outputs, atol=1e-9)

    def test_report_files(self, three_bus_case, tmp_path):
        """Reports are written as per-output CSV plus a JSON summary."""
        scenarios = ScenarioSet.sample(three_bus_case, 20, seed=6)
        report = mc_validate(three_bus_case, *DISPATCH, scenarios, cost=10.0, label="gp")
        path = report.save(tmp_path, "mc_gp")
        header = path.read_text().splitlines()[0]
        assert header.startswith("variable,mean,std,q_low,q_high")
        summary = json.loads(path.with_suffix(".json").read_text())
        assert summary["n_samples"] == 20
        assert summary["cost"] == 10.0
        assert "joint" in summary["note"]

    def test_histogram(self, three_bus_case):
        """Histogram counts cover every accepted sample."""
        report = mc_validate(three_bus_case, *DISPATCH, ScenarioSet.sample(three_bus_case, 30))
        hist = report.histogram("v_3", bins=5)
        assert list(hist.columns) == ["bin_left", "bin_right", "count"]
        assert hist["count"].sum() == 30


class TestRmse:
    """Held-out surrogate accuracy."""

    @staticmethod
    def _model(train):
        params = KernelParams(sf2=1.0, lengthscales=np.ones(train.X.shape[1]), sn2=1e-4)
        models = [GpModel.from_params(train.X, train.Y[:, a], params, center=True) for a in range(train.Y.shape[1])]
        return MultiGpModel(models, x_labels=train.x_labels, y_labels=train.y_labels)

    def test_held_out_rmse(self, two_bus_case):
        """RMSE is reported per output and averaged."""
        ds = build_dataset(two_bus_case, SamplingConfig(), 12)
        train, test = ds.split(9, seed=0)
        report = rmse_report(self._model(train), test)
        assert report.labels == ["v_2", "q_1", "s_1_2"]
        assert report.rmse.shape == (3,)
        assert report.average == pytest.approx(report.rmse.mean())
        assert list(report.to_frame()["variable"])[-1] == "average"

    def test_overlap_is_rejected(self, two_bus_case):
        """Evaluating on training rows is refused."""
        ds = build_dataset(two_bus_case, SamplingConfig(), 8)
        with pytest.raises(FingerprintMismatch):
            rmse_report(self._model(ds), ds)


class TestTables:
    """Plot-ready tables."""

    def test_comparison_table(self, tmp_path):
        """Violations are reported in percent."""
        rows = [
            ApproachRow("ac_opf", 10.0, 0.5, 0.25, 1.0),
            ApproachRow("gp_ta1", 11.0, 0.01, 0.01, 2.0),
        ]
        frame = comparison_table(rows)
        assert list(frame.columns) == ["approach", "cost", "joint_violation_pct", "max_violation_pct", "wall_time_s"]
        assert frame["joint_violation_pct"].tolist() == [50.0, 1.0]
        path = write_table(frame, tmp_path / "nested" / "comparison.csv")
        assert path.exists()

    def test_spread_table(self, make_surrogate):
        """One row per output with every propagation method and the GP sample spread."""
        model = make_surrogate(
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.5]], low=np.array([0.0, 0.0, 0.5]), high=np.array([1.5, 1.5, 1.5])
        )
        problem = CcOpfProblem(
            model=model,
            u_min=[0.0, 0.0],
            u_max=[1.5, 1.5],
            y_min=[-np.inf, -np.inf],
            y_max=[np.inf, np.inf],
            cost=[[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
            p_load=[1.0],
            p_res=[],
            sigma_w=[0.05],
            y_labels=["a", "b"],
        )
        frame = spread_table(problem, *DISPATCH, gp_samples=500)
        assert frame["variable"].tolist() == ["a", "b"]
        for column in ("ta1_mean", "ta1_3std", "ta2_3std", "em_mean", "em_3std", "gp_mc_lower", "gp_mc_upper"):
            assert column in frame
        assert "ac_mc_lower" not in frame
        assert np.all(frame["ta1_3std"] > 0)
        np.testing.assert_allclose(frame["ta1_mean"], frame["ta2_mean"], rtol=0, atol=1e-12)
        with pytest.raises(SpecMismatch):
            mean_rmse(frame, "em")

    def test_mean_rmse(self):
        """Mean RMSE is taken against the AC Monte-Carlo means."""
        frame = pd.DataFrame({"ta1_mean": [1.0, 2.0], "em_mean": [1.0, 1.0], "ac_mc_mean": [1.0, 1.0]})
        assert mean_rmse(frame, "em") == 0.0
        assert mean_rmse(frame, "ta1") == pytest.approx(np.sqrt(0.5))


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
