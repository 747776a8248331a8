"""End-to-end runs of the pipeline on the bundled 9-bus case.

These tests exercise every stage through the command line: sampling and
labelling operating points, training the surrogate, solving the
chance-constrained dispatch and validating it on the true AC power flow.
"""

import json

import numpy as np
import pandas as pd
import pytest

from gp_ccopf.cli import main
from gp_ccopf.gp.model import MultiGpModel
from gp_ccopf.opf.ccopf import CcOpfSolution
from gp_ccopf.validation import mean_rmse


# =============================================================================
# Run configuration
# =============================================================================

CONFIG = {
    "case": "case9",
    "workers": 2,
    "sampling": {"res_corr": {"mu": -1.0, "sigma": 0.4}, "seed": 0},
    "dataset": {"n_samples": 100, "n_train": 75},
    "training": {"restarts": 2, "max_evals": 300},
    "uncertainty": {"sigma_load": 0.15, "sigma_res": 0.30},
    "ccopf": {"eps_u": 0.001, "eps_y": 0.025, "method": "ta1"},
    "validation": {"n_samples": 1000, "seed": 1},
    "baselines": {"full_recourse_samples": 20, "scenarios": [5], "scenario_seed": 2},
}


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    """Generate, train and solve once for the whole module."""
    root = tmp_path_factory.mktemp("ieee9")
    config_path = root / "config.json"
    config_path.write_text(json.dumps({**CONFIG, "output_dir": str(root / "run")}))
    assert main(["gen-data", "--config", str(config_path)]) == 0
    assert main(["train", "--config", str(config_path)]) == 0
    assert main(["solve", "--config", str(config_path)]) == 0
    return root


def _config(run_dir):
    return str(run_dir / "config.json")


# =============================================================================
# Pipeline tests
# =============================================================================

@pytest.mark.slow
class TestIeee9Pipeline:
    """Full pipeline on the 9-bus case."""

    def test_dataset_layout(self, run_dir):
        """Dataset columns follow the input and output layout."""
        frame = pd.read_csv(run_dir / "run" / "dataset.csv")
        assert frame.shape == (100, 8 + 15)
        assert list(frame.columns[:3]) == ["u_1", "u_2", "u_3"]
        assert len(pd.read_csv(run_dir / "run" / "train.csv")) == 75

    def test_model_accuracy(self, run_dir):
        """Held-out RMSE is small relative to the output scale."""
        rmse = pd.read_csv(run_dir / "run" / "rmse.csv")
        assert rmse["rmse"].iloc[-1] < 0.1
        model = MultiGpModel.load(run_dir / "run" / "model.json")
        assert model.n_x == 8 and model.n_y == 15

    def test_solution_feasible(self, run_dir):
        """The dispatch is balanced and its participation factors are on the simplex."""
        solution = CcOpfSolution.load(run_dir / "run" / "solution_ta1.json")
        assert solution.converged
        assert solution.alpha.sum() == pytest.approx(1.0, abs=1e-8)
        assert (solution.alpha >= -1e-10).all()
        assert (run_dir / "run" / "iterations_ta1.csv").exists()

    def test_validation_outputs(self, run_dir):
        """Validation writes the per-output report, the spread table and a summary."""
        code = main(["validate", "--config", _config(run_dir), "--histogram", "v_5"])
        assert code in (0, 1)
        run = run_dir / "run"
        summary = json.loads((run / "mc_ta1.json").read_text())
        assert summary["n_samples"] == 1000
        assert 0.0 <= summary["joint_violation"] <= 1.0
        spread = pd.read_csv(run / "spread_ta1.csv")
        assert {"ta1_3std", "ta2_3std", "em_3std", "ac_mc_lower", "ac_mc_upper"} <= set(spread.columns)
        assert (run / "histogram_v_5.csv").exists()

    def test_em_solution(self, run_dir):
        """Exact-moment propagation solves on the same model."""
        assert main(["solve", "--config", _config(run_dir), "--method", "em"]) == 0
        solution = CcOpfSolution.load(run_dir / "run" / "solution_em.json")
        assert solution.method == "em"

    def test_comparison_table(self, run_dir):
        """The comparison table lists every approach that ran."""
        main(["compare", "--config", _config(run_dir)])
        table = pd.read_csv(run_dir / "run" / "comparison.csv")
        assert "B (base case)" in set(table["approach"])
        assert "GP CC-OPF (ta1)" in set(table["approach"])


# =============================================================================
# Reference results on the 9-bus case
# =============================================================================

PRINTED_COSTS = {"A (full recourse)": 4.056e3, "B (base case)": 3.467e3, "GP CC-OPF (ta1)": 4.039e3}
DETERMINISTIC_FILES = ("dataset.csv", "train.csv", "validation_set.csv", "model.json", "rmse.csv",
                       "iterations_ta1.csv")


@pytest.fixture(scope="module")
def comparison(run_dir):
    """Validate the TA1 dispatch and run every baseline once."""
    main(["validate", "--config", _config(run_dir)])
    main(["compare", "--config", _config(run_dir)])
    return pd.read_csv(run_dir / "run" / "comparison.csv").set_index("approach")


@pytest.mark.slow
class TestIeee9Reference:
    """Reliability, cost ordering and method agreement at eps_y = 2.5%."""

    def test_joint_violation_within_target(self, run_dir, comparison):
        """Fewer than 2.5% of 1000 fresh samples violate any output limit."""
        summary = json.loads((run_dir / "run" / "mc_ta1.json").read_text())
        assert summary["n_samples"] == 1000
        assert summary["joint_violation"] <= 0.025

    def test_cost_between_baselines(self, comparison):
        """Base case <= GP CC-OPF <= full recourse (1% slack)."""
        cost = comparison["cost"]
        assert cost["B (base case)"] <= cost["GP CC-OPF (ta1)"]
        assert cost["GP CC-OPF (ta1)"] <= 1.01 * cost["A (full recourse)"]

    @pytest.mark.xfail(strict=False, reason="printed costs depend on unpublished sampling details")
    @pytest.mark.parametrize("approach", sorted(PRINTED_COSTS))
    def test_printed_costs(self, comparison, approach):
        """Costs land within 5% of the published reference values."""
        assert comparison.loc[approach, "cost"] == pytest.approx(PRINTED_COSTS[approach], rel=0.05)

    def test_em_mean_at_least_as_accurate(self, run_dir, comparison):
        """EM means are no further from the AC Monte-Carlo means than TA1, up to sampling error."""
        run = run_dir / "run"
        spread = pd.read_csv(run / "spread_ta1.csv")
        stats = pd.read_csv(run / "mc_ta1.csv")
        n = json.loads((run / "mc_ta1.json").read_text())["n_samples"]
        standard_error = float(np.sqrt(np.mean(stats["std"] ** 2 / n)))
        np.testing.assert_allclose(spread["ta1_mean"], spread["ta2_mean"], rtol=0, atol=1e-12)
        assert mean_rmse(spread, "em") <= mean_rmse(spread, "ta1") + standard_error


@pytest.mark.slow
class TestDeterminism:
    """Reruns with identical config and seeds."""

    def test_rerun_reproduces_files(self, run_dir, tmp_path):
        """A second run writes identical files; only wall times may differ."""
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps({**CONFIG, "output_dir": str(tmp_path / "run")}))
        for stage in ("gen-data", "train", "solve"):
            assert main([stage, "--config", str(config_path)]) == 0

        for name in DETERMINISTIC_FILES:
            assert (tmp_path / "run" / name).read_bytes() == (run_dir / "run" / name).read_bytes(), name
        first = json.loads((run_dir / "run" / "solution_ta1.json").read_text())
        second = json.loads((tmp_path / "run" / "solution_ta1.json").read_text())
        first.pop("wall_time")
        second.pop("wall_time")
        assert first == second



if __name__ == "__main__":
    pytest.main([__file__, "-v"])
