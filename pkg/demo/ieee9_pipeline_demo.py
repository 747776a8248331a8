"""Demo: Chance-constrained dispatch on the IEEE 9-bus case

This demo runs the whole pipeline through the library API:
sample operating points, train the GP surrogate, solve the
chance-constrained dispatch and check it against the true AC power flow.
"""

# Add parent to path for development
import sys
sys.path.insert(0, str(__file__).replace("demo/ieee9_pipeline_demo.py", "src"))

from gp_ccopf import (
    CcOpfProblem,
    CcOpfVerifier,
    SamplingConfig,
    ScenarioSet,
    ac_opf,
    build_dataset,
    fit_multi,
    load_builtin_case,
    mc_validate,
    solve,
)
from gp_ccopf.gp.model import FitOptions
from gp_ccopf.validation import rmse_report

SIGMA_LOAD = 0.15
SIGMA_RES = 0.30


def main():
    print("=" * 60)
    print("gp-ccopf Demo: IEEE 9-bus chance-constrained dispatch")
    print("=" * 60)
    print()

    case = load_builtin_case("case9").with_sigma(SIGMA_LOAD, SIGMA_RES)
    print(f"🔌 Case: {case.name}")
    print(f"   Buses: {case.n_bus}, controllable units: {case.n_u}, uncertain injections: {case.n_d}")
    print(f"   Load fluctuation: {SIGMA_LOAD:.0%}, renewable fluctuation: {SIGMA_RES:.0%}")
    print()

    # Step 1: labelled operating points
    print("📦 Step 1: Sampling and labelling operating points")
    sampling = SamplingConfig(seed=0)
    dataset = build_dataset(case, sampling, 100, workers=4)
    train, held_out = dataset.split(75)
    print(f"   {dataset.n} rows, {dataset.X.shape[1]} inputs, {dataset.Y.shape[1]} outputs")
    print(f"   Power-flow failures resampled: {dataset.report['dropped']}")
    print()

    # Step 2: surrogate
    print("🧠 Step 2: Training one GP per output")
    model = fit_multi(train.X, train.Y, FitOptions(restarts=3), workers=4,
                      x_labels=train.x_labels, y_labels=train.y_labels)
    rmse = rmse_report(model, held_out)
    print(f"   Held-out RMSE (average): {rmse.average:.2e}")
    print()

    # Step 3: dispatch
    print("⚙️  Step 3: Solving the chance-constrained dispatch")
    problem = CcOpfProblem.from_case(case, model, eps_u=0.001, eps_y=0.025, method="ta1")
    solution = solve(problem)
    print(f"   Status: {solution.status} after {solution.iterations} iterations")
    print(f"   Expected cost: {solution.cost:.4f}")
    print(f"   Set-points:    {[round(float(v), 4) for v in solution.u]}")
    print(f"   Participation: {[round(float(a), 4) for a in solution.alpha]}")
    print()

    # Step 4: true power flow
    print("🔍 Step 4: Monte-Carlo check on the AC power flow")
    scenarios = ScenarioSet.sample(case, 500, seed=1, sigma_load=SIGMA_LOAD, sigma_res=SIGMA_RES)
    report = mc_validate(case, solution.u, solution.alpha, scenarios, workers=4, cost=solution.cost)
    print(f"   Joint violation:        {report.joint_violation:.2%} (target {problem.eps_y:.2%})")
    print(f"   Worst single violation: {report.max_violation:.2%}")
    print(f"   Failed power flows:     {report.n_failed} of {report.n_samples}")
    print()

    result = CcOpfVerifier().verify(problem, solution, report)
    for guard in result.guards:
        mark = "✅" if guard.verified else "❌"
        print(f"   {mark} {guard.guard_name}" + (f": {guard.error}" if guard.error else ""))
    print()

    # Reference: base case without uncertainty
    base = ac_opf(case)
    base_report = mc_validate(case, base.u, [1.0 / case.n_u] * case.n_u, scenarios, workers=4)

    print("=" * 60)
    print("📊 GP CC-OPF vs deterministic AC-OPF")
    print("=" * 60)
    print(f"   {'':<22}{'cost':>10}{'violation':>12}")
    print(f"   {'AC-OPF (base case)':<22}{base.cost:>10.4f}{base_report.joint_violation:>12.2%}")
    print(f"   {'GP CC-OPF (ta1)':<22}{solution.cost:>10.4f}{report.joint_violation:>12.2%}")
    print()

    print("=" * 60)
    print(f"{result}")
    print("=" * 60)
    print()


if __name__ == "__main__":
    main()
