"""Command-line front end.

Subcommands run one pipeline stage each and read/write files in the
configured output directory:

    gen-data      sample operating points and label them with the AC power flow
    train         fit one GP per output and report validation RMSE
    solve         solve the GP CC-OPF with a chosen propagation method
    validate      Monte-Carlo validate a solved dispatch on the true AC power flow
    compare       run the baselines and write the comparison table
    convert-case  turn a matpower-style case into native JSON

Exit code 0 means every requested output was produced and converged, 1 a
toolkit error or unconverged result, 2 a usage error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from gp_ccopf.config import RunConfig, log_level
from gp_ccopf.core import CcOpfVerifier
from gp_ccopf.dataset import Dataset, build_dataset
from gp_ccopf.errors import GpCcOpfError
from gp_ccopf.gp.model import FitOptions, MultiGpModel, fit_multi
from gp_ccopf.grid.caseio import load_case, serialize_case
from gp_ccopf.grid.case import GridCase
from gp_ccopf.grid.outputs import OutputSpec
from gp_ccopf.opf.acopf import ac_opf, full_recourse, scenario_cc_opf
from gp_ccopf.opf.ccopf import CcOpfProblem, CcOpfSolution, solve
from gp_ccopf.opf.nlp import SolverOptions, expected_cost
from gp_ccopf.propagation import METHODS
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

logger = logging.getLogger("gp_ccopf.cli")

DATASET_STEM = "dataset"
TRAIN_STEM = "train"
VALIDATION_STEM = "validation_set"
MODEL_FILE = "model.json"


def _output_spec(config: RunConfig, case: GridCase) -> OutputSpec:
    return OutputSpec.default(case, include_slack_voltage=config.section("dataset")["include_slack_voltage"])


def _problem(config: RunConfig, case: GridCase, model: MultiGpModel, method: Optional[str] = None) -> CcOpfProblem:
    cc = config.section("ccopf")
    return CcOpfProblem.from_case(
        case,
        model,
        _output_spec(config, case),
        eps_u=cc["eps_u"],
        eps_y=cc["eps_y"],
        method=method or cc["method"],
        balance=cc["balance"],
    )


def _solver_options(config: RunConfig) -> SolverOptions:
    cc = config.section("ccopf")
    return SolverOptions(tol=cc["tol"], max_iter=cc["max_iter"])


def _scenarios(config: RunConfig, case: GridCase, n: int, seed: int) -> ScenarioSet:
    sigma = config.section("uncertainty")
    return ScenarioSet.sample(case, n, seed, sigma["sigma_load"], sigma["sigma_res"])


# -- commands ---------------------------------------------------------------

def cmd_gen_data(config: RunConfig, args: argparse.Namespace) -> int:
    case = config.resolve_case()
    ds = config.section("dataset")
    dataset = build_dataset(
        case,
        config.sampling,
        ds["n_samples"],
        _output_spec(config, case),
        noise_sigma=ds["noise_sigma"],
        workers=config.workers,
    )
    out = config.output_dir
    dataset.save(out, DATASET_STEM)
    if ds["n_train"] < dataset.n:
        train, held_out = dataset.split(ds["n_train"], ds["split_seed"])
        train.save(out, TRAIN_STEM)
        held_out.save(out, VALIDATION_STEM)
    else:
        dataset.save(out, TRAIN_STEM)
    report = dataset.report
    print(f"✅ Generated {dataset.n} rows for {case.name} ({dataset.X.shape[1]} inputs, {dataset.Y.shape[1]} outputs)")
    print(f"   power-flow failures resampled: {report['dropped']} of {report['attempted']} attempts")
    return 0


def cmd_train(config: RunConfig, args: argparse.Namespace) -> int:
    out = config.output_dir
    train = Dataset.load(args.dataset or out / f"{TRAIN_STEM}.csv")
    tr = config.section("training")
    options = FitOptions(restarts=tr["restarts"], max_evals=tr["max_evals"], init_spread=tr["init_spread"],
                         seed=tr["seed"])
    model = fit_multi(train.X, train.Y, options, config.workers, train.x_labels, train.y_labels)
    model.save(out / MODEL_FILE)
    print(f"✅ Trained {model.n_y} output GPs on {train.n} samples")

    held_out_path = out / f"{VALIDATION_STEM}.csv"
    if held_out_path.exists():
        report = rmse_report(model, Dataset.load(held_out_path))
        write_table(report.to_frame(), out / "rmse.csv")
        print(f"   validation RMSE (average): {report.average:.3e}")
    return 0


def _solve(config: RunConfig, case: GridCase, model: MultiGpModel, method: str) -> CcOpfSolution:
    problem = _problem(config, case, model, method)
    solution = solve(problem, _solver_options(config))
    out = config.output_dir
    solution.save(out / f"solution_{method}.json")
    solution.write_log(out / f"iterations_{method}.csv")
    return solution


def cmd_solve(config: RunConfig, args: argparse.Namespace) -> int:
    case = config.resolve_case()
    model = MultiGpModel.load(config.output_dir / MODEL_FILE)
    method = args.method or config.section("ccopf")["method"]
    solution = _solve(config, case, model, method)
    mark = "✅" if solution.converged else "🛑"
    print(f"{mark} CC-OPF ({method}) {solution.status} in {solution.iterations} iterations, "
          f"cost {solution.cost:.6g}, {solution.wall_time:.2f}s")
    return 0 if solution.converged else 1


def cmd_validate(config: RunConfig, args: argparse.Namespace) -> int:
    case = config.resolve_case()
    out = config.output_dir
    model = MultiGpModel.load(out / MODEL_FILE)
    method = args.method or config.section("ccopf")["method"]
    problem = _problem(config, case, model, method)
    solution = CcOpfSolution.load(args.solution or out / f"solution_{method}.json")

    va = config.section("validation")
    scenarios = _scenarios(config, case, va["n_samples"], va["seed"])
    report = mc_validate(
        case, solution.u, solution.alpha, scenarios, _output_spec(config, case),
        workers=config.workers, cost=solution.cost, mu_y=solution.mu_y, lambda_y=solution.lambda_y,
        label=f"gp_{method}",
    )
    report.save(out, f"mc_{method}")
    spread = spread_table(problem, solution.u, solution.alpha, report, seed=va["seed"])
    write_table(spread, out / f"spread_{method}.csv")
    if args.histogram:
        write_table(report.histogram(args.histogram), out / f"histogram_{args.histogram}.csv")

    result = CcOpfVerifier().verify(problem, solution, report)
    print(result)
    print(f"   joint violation {100 * report.joint_violation:.2f}% "
          f"(max per constraint {100 * report.max_violation:.2f}%) over {report.n_samples} samples")
    print("   mean RMSE vs AC Monte-Carlo: " + ", ".join(f"{m} {mean_rmse(spread, m):.3e}" for m in METHODS))
    return 0 if result.verified else 1


def cmd_compare(config: RunConfig, args: argparse.Namespace) -> int:
    case = config.resolve_case()
    out = config.output_dir
    spec = _output_spec(config, case)
    base = config.section("baselines")
    va = config.section("validation")
    scenarios = _scenarios(config, case, va["n_samples"], va["seed"])
    options = _solver_options(config)
    rows: list[ApproachRow] = []
    failures: list[str] = []

    def attempt(name: str, run):
        try:
            rows.append(run())
            print(f"✅ {name}")
        except GpCcOpfError as e:
            failures.append(name)
            print(f"🛑 {name}: {e.message}")

    b_result = None
    if base["base_case"]:
        def run_b():
            nonlocal b_result
            b_result = ac_opf(case, output_spec=spec, options=options)
            alpha = np.full(case.n_u, 1.0 / case.n_u)
            report = mc_validate(case, b_result.u, alpha, scenarios, spec, workers=config.workers, label="B")
            return ApproachRow("B (base case)", b_result.cost, report.joint_violation, report.max_violation,
                               b_result.wall_time)
        attempt("B (base case)", run_b)

    if base["full_recourse"]:
        def run_a():
            result = full_recourse(case, scenarios.head(base["full_recourse_samples"]).omega, spec, options,
                                   config.workers)
            return ApproachRow("A (full recourse)", result.mean_cost, 0.0, 0.0, result.wall_time,
                               {"failures": result.failures})
        attempt("A (full recourse)", run_a)

    for path in sorted(out.glob("solution_*.json")):
        method = path.stem.split("_", 1)[1]

        def run_gp(path=path, method=method):
            solution = CcOpfSolution.load(path)
            report = mc_validate(case, solution.u, solution.alpha, scenarios, spec, workers=config.workers)
            return ApproachRow(f"GP CC-OPF ({method})", solution.cost, report.joint_violation,
                               report.max_violation, solution.wall_time)
        attempt(f"GP CC-OPF ({method})", run_gp)

    for n in base["scenarios"]:
        def run_s(n=n):
            omega = _scenarios(config, case, n, base["scenario_seed"]).omega
            init = None
            if b_result is not None:
                init = np.concatenate([b_result.u, np.full(case.n_u, 1.0 / case.n_u)])
            s_options = SolverOptions(options.tol, options.max_iter, options.feasibility_tol, init)
            result = scenario_cc_opf(case, omega, spec, s_options, workers=config.workers,
                                     balance="lossless" if config.section("ccopf")["balance"] == "lossless"
                                     else "losses")
            report = mc_validate(case, result.u, result.alpha, scenarios, spec, workers=config.workers)
            cost = expected_cost(result.u, result.alpha, case.sigma_w, case.cost_coefficients)
            return ApproachRow(f"{n}-scenario CC-OPF", cost, report.joint_violation, report.max_violation,
                               result.wall_time, {"scenario_average_cost": result.cost})
        attempt(f"{n}-scenario CC-OPF", run_s)

    write_table(comparison_table(rows), out / "comparison.csv")
    print(f"{'✅' if not failures else '❌'} Wrote {len(rows)} comparison row(s) to {out / 'comparison.csv'}")
    return 0 if not failures else 1


def cmd_convert_case(args: argparse.Namespace) -> int:
    case = load_case(args.input)
    text = serialize_case(case)
    if args.output:
        Path(args.output).write_text(text)
        print(f"✅ Wrote {case.name} ({case.n_bus} buses) to {args.output}")
    else:
        print(text)
    return 0


# -- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gp-ccopf", description="Data-driven chance-constrained AC-OPF")
    sub = parser.add_subparsers(dest="command", required=True)

    def staged(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="Run config JSON")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="Override a config key (repeatable), e.g. ccopf.eps_y=0.05")
        p.add_argument("--workers", type=int, help="Thread pool size")
        p.add_argument("-v", "--verbose", action="count", default=0)
        return p

    staged("gen-data", "Generate the training dataset")
    train = staged("train", "Fit the GP surrogate")
    train.add_argument("--dataset", help="Training CSV (default: <output_dir>/train.csv)")
    for name, text in (("solve", "Solve the GP CC-OPF"), ("validate", "Monte-Carlo validate a solution")):
        p = staged(name, text)
        p.add_argument("--method", choices=["ta1", "ta2", "em"])
        p.add_argument("--balance-no-losses", action="store_true", help="Balance without the loss factor")
        if name == "validate":
            p.add_argument("--solution", help="Solution JSON (default: <output_dir>/solution_<method>.json)")
            p.add_argument("--histogram", metavar="OUTPUT", help="Also dump a histogram of one output, e.g. v_8")
    staged("compare", "Run baselines and write the comparison table")

    convert = sub.add_parser("convert-case", help="Convert a matpower-style case to native JSON")
    convert.add_argument("input")
    convert.add_argument("-o", "--output")
    convert.add_argument("-v", "--verbose", action="count", default=0)
    return parser


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "solve": cmd_solve,
    "validate": cmd_validate,
    "compare": cmd_compare,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=log_level(args.verbose), format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "convert-case":
            return cmd_convert_case(args)
        overrides = list(args.set)
        if args.workers is not None:
            overrides.append(f"workers={args.workers}")
        if getattr(args, "balance_no_losses", False):
            overrides.append("ccopf.balance=lossless")
        config = RunConfig.load(args.config, overrides)
        config.write_effective()
        return COMMANDS[args.command](config, args)
    except GpCcOpfError as e:
        print(f"❌ {type(e).__name__}: {e.message}")
        if e.details:
            print(f"   details: {json.dumps(e.details, default=str)[:500]}")
        return 1
    except OSError as e:
        print(f"❌ {type(e).__name__}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
