"""Tests for the gp-ccopf command line."""

import json
from importlib import resources

import pytest

from gp_ccopf.cli import MODEL_FILE, build_parser, main
from gp_ccopf.grid.caseio import load_case

from tests.conftest import TWO_BUS


@pytest.fixture
def two_bus_config(tmp_path):
    case_path = tmp_path / "two_bus.json"
    case_path.write_text(json.dumps(TWO_BUS))
    config = {
        "case": str(case_path),
        "output_dir": str(tmp_path / "run"),
        "dataset": {"n_samples": 8, "n_train": 6},
        "training": {"restarts": 1, "max_evals": 60},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    return path


class TestParser:
    """Argument handling."""

    def test_usage_error(self):
        """A missing subcommand exits with code 2."""
        with pytest.raises(SystemExit) as info:
            main([])
        assert info.value.code == 2

    def test_config_required(self):
        """Pipeline stages need a config."""
        with pytest.raises(SystemExit) as info:
            main(["solve"])
        assert info.value.code == 2

    def test_method_choices(self):
        """Only known propagation methods parse."""
        args = build_parser().parse_args(["solve", "--config", "c.json", "--method", "em"])
        assert args.method == "em"
        with pytest.raises(SystemExit):
            build_parser().parse_args(["solve", "--config", "c.json", "--method", "pce"])


class TestConvertCase:
    """convert-case subcommand."""

    def test_bundled_matpower_case(self, tmp_path, capsys):
        """The bundled 9-bus case converts to a loadable native file."""
        source = resources.files("gp_ccopf.grid").joinpath("cases", "case9.m")
        target = tmp_path / "case9.json"
        assert main(["convert-case", str(source), "-o", str(target)]) == 0
        assert "✅" in capsys.readouterr().out
        case = load_case(target)
        assert case.n_bus == 9
        assert case.n_u == 3

    def test_missing_input(self, tmp_path, capsys):
        """An unreadable case file exits with code 1."""
        assert main(["convert-case", str(tmp_path / "absent.m")]) == 1
        assert "FileNotFoundError" in capsys.readouterr().out


class TestStages:
    """Pipeline stages on a tiny network."""

    def test_missing_config(self, tmp_path, capsys):
        """A missing config reports ConfigError with exit code 1."""
        assert main(["gen-data", "--config", str(tmp_path / "absent.json")]) == 1
        assert "❌ ConfigError" in capsys.readouterr().out

    def test_invalid_override(self, two_bus_config, capsys):
        """Overrides are validated."""
        assert main(["gen-data", "--config", str(two_bus_config), "--set", "ccopf.eps_y=0.7"]) == 1
        assert "ccopf.eps_y" in capsys.readouterr().out

    def test_gen_data_then_train(self, two_bus_config, tmp_path, capsys):
        """gen-data writes the splits, train writes the model and RMSE table."""
        assert main(["gen-data", "--config", str(two_bus_config), "--workers", "2"]) == 0
        run = tmp_path / "run"
        for name in ("dataset.csv", "dataset.json", "train.csv", "validation_set.csv", "effective_config.json"):
            assert (run / name).exists()
        assert json.loads((run / "effective_config.json").read_text())["workers"] == 2

        assert main(["train", "--config", str(two_bus_config)]) == 0
        assert (run / MODEL_FILE).exists()
        assert (run / "rmse.csv").read_text().startswith("variable,rmse")
        out = capsys.readouterr().out
        assert "Generated 8 rows" in out
        assert "Trained 3 output GPs on 6 samples" in out

    def test_solve_without_model(self, two_bus_config, capsys):
        """Solving before training fails cleanly."""
        assert main(["solve", "--config", str(two_bus_config)]) == 1


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
