"""Model-based baselines on the true AC power flow.

* :func:`ac_opf` - deterministic AC-OPF at given injections (baselines A and B).
* :func:`full_recourse` - one AC-OPF per scenario.
* :func:`scenario_cc_opf` - set-points and participation factors that keep
  every sampled scenario feasible under affine recourse.

Non-slack controllable units are power-flow set-points; the unit at the slack
bus follows from the power flow. Constraint sensitivities are central
differences of warm-started power flows.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from gp_ccopf.errors import DegenerateCase, DomainError, GpCcOpfError, InfeasibleSubproblem
from gp_ccopf.grid.case import GridCase
from gp_ccopf.grid.outputs import OutputSpec
from gp_ccopf.grid.powerflow import BusInjections, PfOptions, PfSolution, solve_ac_pf
from gp_ccopf.opf.nlp import FD_STEP, NlpProblem, SolverOptions, run_slsqp

logger = logging.getLogger("gp_ccopf.opf.acopf")

PF_TOL = 1e-11


@dataclass(frozen=True)
class DispatchLayout:
    """Positions in ``u`` of the slack-following unit and of the set-point units."""

    slack_unit: int
    free: np.ndarray
    others_at_slack: np.ndarray
    fixed_at_slack: float

    @classmethod
    def of(cls, case: GridCase) -> "DispatchLayout":
        slack_bus = case.buses[case.slack].id
        at_slack = [j for j, k in enumerate(case.controllable) if case.generators[k].bus == slack_bus]
        if not at_slack:
            raise DegenerateCase("No controllable generator at the slack bus", {"slack_bus": slack_bus})
        slack_unit = at_slack[0]
        fixed = sum(g.p_ref for g in case.generators if g.bus == slack_bus and not g.controllable)
        return cls(
            slack_unit=slack_unit,
            free=np.array([j for j in range(case.n_u) if j != slack_unit], dtype=int),
            others_at_slack=np.array(at_slack[1:], dtype=int),
            fixed_at_slack=float(fixed),
        )

    def slack_output(self, sol: PfSolution, dispatch: np.ndarray) -> float:
        return sol.slack_p - float(np.sum(dispatch[self.others_at_slack])) - self.fixed_at_slack


def dispatch_cost(dispatch: np.ndarray, coeffs: np.ndarray) -> float:
    c2, c1, c0 = coeffs[:, 0], coeffs[:, 1], coeffs[:, 2]
    return float(np.sum(c2 * dispatch**2 + c1 * dispatch + c0))


class RecourseEvaluator:
    """
    Power flows for a fixed set of injection scenarios.

    For scenario ``s`` with fluctuation ``omega_s`` the controllable units run
    at ``u + alpha * Omega_s`` with ``Omega_s = signs . omega_s``; the slack
    unit's value is replaced by what the power flow returns. Each evaluation
    yields ``c = [outputs, slack unit output]``.
    """

    def __init__(
        self,
        case: GridCase,
        spec: OutputSpec,
        omega: np.ndarray,
        pf_options: Optional[PfOptions] = None,
        workers: int = 1,
    ):
        self.case = case
        self.spec = spec
        self.layout = DispatchLayout.of(case)
        omega = np.atleast_2d(np.asarray(omega, dtype=float)).reshape(-1, case.n_d)
        n_load = len(case.loads)
        self.p_load = case.p_load_ref + omega[:, :n_load]
        self.p_res = case.p_res_ref + omega[:, n_load:]
        self.imbalance = omega @ case.injection_signs
        self.pf_options = pf_options or PfOptions(tol=PF_TOL)
        self.workers = workers
        self._indices = spec.indices(case)
        self._warm: list[Optional[PfSolution]] = [None] * self.n_scenarios

    @property
    def n_scenarios(self) -> int:
        return self.imbalance.size

    def dispatch(self, s: int, u: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        return u + alpha * self.imbalance[s]

    def run(self, s: int, dispatch: np.ndarray) -> tuple[np.ndarray, PfSolution]:
        """
        Raises:
            NonConvergence: power flow failed; ``details["scenario"]`` is ``s``
        """
        warm = self._warm[s]
        options = self.pf_options
        if warm is not None:
            options = replace(options, v0=warm.v, theta0=warm.theta)
        injections = BusInjections.from_case(self.case, dispatch, self.p_load[s], self.p_res[s])
        try:
            sol = solve_ac_pf(self.case, injections, options)
        except GpCcOpfError as e:
            e.details.setdefault("scenario", s)
            raise
        self._warm[s] = sol
        v_idx, q_idx, s_idx = self._indices
        y = np.concatenate([sol.v[v_idx], sol.q_gen[q_idx], sol.s[s_idx]])
        return np.append(y, self.layout.slack_output(sol, dispatch)), sol

    def sensitivity(self, s: int, dispatch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Values and central-difference Jacobian with respect to the set-point units."""
        c0, _ = self.run(s, dispatch)
        cols = []
        for j in self.layout.free:
            step = np.zeros_like(dispatch)
            step[j] = FD_STEP
            plus, _ = self.run(s, dispatch + step)
            minus, _ = self.run(s, dispatch - step)
            cols.append((plus - minus) / (2.0 * FD_STEP))
        jac = np.column_stack(cols) if cols else np.zeros((c0.size, 0))
        return c0, jac

    def map(self, fn, items):
        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                return list(pool.map(fn, items))
        return [fn(i) for i in items]


def _limits(case: GridCase, spec: OutputSpec, layout: DispatchLayout) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Lower/upper bounds and labels for ``c = [outputs, slack unit output]``."""
    lower = np.append(spec.lower, case.u_min[layout.slack_unit])
    upper = np.append(spec.upper, case.u_max[layout.slack_unit])
    return lower, upper, spec.labels + [f"u{layout.slack_unit}"]


def _limit_slacks(c: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    up, lo = np.isfinite(upper), np.isfinite(lower)
    return np.concatenate([(upper - c)[up], (c - lower)[lo]])


def _limit_slack_jac(J: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    return np.vstack([-J[np.isfinite(upper)], J[np.isfinite(lower)]])


def _limit_labels(labels: list[str], lower: np.ndarray, upper: np.ndarray, prefix: str = "") -> list[str]:
    return (
        [f"{prefix}{labels[i]}_max" for i in np.flatnonzero(np.isfinite(upper))]
        + [f"{prefix}{labels[i]}_min" for i in np.flatnonzero(np.isfinite(lower))]
    )


@dataclass
class AcOpfResult:
    u: np.ndarray
    cost: float
    outputs: np.ndarray
    status: str
    iterations: int
    max_violation: float
    wall_time: float = 0.0
    pf: Optional[PfSolution] = field(default=None, repr=False)


def ac_opf(
    case: GridCase,
    p_load: Optional[np.ndarray] = None,
    p_res: Optional[np.ndarray] = None,
    output_spec: Optional[OutputSpec] = None,
    options: Optional[SolverOptions] = None,
    pf_options: Optional[PfOptions] = None,
) -> AcOpfResult:
    """
    Deterministic AC-OPF at the given injections (default: the forecast).

    Raises:
        NonConvergence: the power flow failed at an iterate
        InfeasibleSubproblem: no dispatch meets the limits
    """
    spec = output_spec or OutputSpec.default(case)
    p_load = case.p_load_ref if p_load is None else np.asarray(p_load, dtype=float)
    p_res = case.p_res_ref if p_res is None else np.asarray(p_res, dtype=float)
    omega = np.concatenate([p_load - case.p_load_ref, p_res - case.p_res_ref])
    ev = RecourseEvaluator(case, spec, omega[None, :], pf_options)
    layout = ev.layout
    coeffs = case.cost_coefficients
    lower, upper, labels = _limits(case, spec, layout)
    alpha = np.zeros(case.n_u)
    base = case.u_ref.copy()

    def full(d):
        u = base.copy()
        u[layout.free] = d
        return u

    cache: dict = {}

    def at(d):
        key = d.tobytes()
        if key not in cache:
            cache.clear()
            u = full(d)
            c, jac = ev.sensitivity(0, ev.dispatch(0, u, alpha))
            u[layout.slack_unit] = c[-1]
            cache[key] = (u, c, jac)
        return cache[key]

    def objective(d):
        u, _, _ = at(d)
        return dispatch_cost(u, coeffs)

    def gradient(d):
        u, _, jac = at(d)
        marginal = 2.0 * coeffs[:, 0] * u + coeffs[:, 1]
        return marginal[layout.free] + marginal[layout.slack_unit] * jac[-1]

    problem = NlpProblem(
        objective=objective,
        gradient=gradient,
        bounds=list(zip(case.u_min[layout.free], case.u_max[layout.free])),
        ineq=lambda d: _limit_slacks(at(d)[1], lower, upper),
        ineq_jac=lambda d: _limit_slack_jac(at(d)[2], lower, upper),
        ineq_labels=_limit_labels(labels, lower, upper),
    )

    start = time.perf_counter()
    d0 = base[layout.free]
    if layout.free.size == 0:
        violation = float(np.max(-_limit_slacks(at(d0)[1], lower, upper), initial=0.0))
        if violation > (options or SolverOptions()).feasibility_tol:
            raise InfeasibleSubproblem("Single-unit dispatch violates its limits", {"max_violation": violation})
        status, iterations, x = "converged", 0, d0
    else:
        result = run_slsqp(problem, d0, options)
        status, iterations, x, violation = result.status, result.iterations, result.x, result.max_violation

    u, c, _ = at(x)
    _, sol = ev.run(0, ev.dispatch(0, u, alpha))
    return AcOpfResult(
        u=u,
        cost=dispatch_cost(u, coeffs),
        outputs=c[:-1],
        status=status,
        iterations=iterations,
        max_violation=violation,
        wall_time=time.perf_counter() - start,
        pf=sol,
    )


@dataclass
class RecourseResult:
    costs: np.ndarray
    failures: int
    wall_time: float

    @property
    def mean_cost(self) -> float:
        ok = self.costs[np.isfinite(self.costs)]
        return float(ok.mean()) if ok.size else float("nan")


def full_recourse(
    case: GridCase,
    omega: np.ndarray,
    output_spec: Optional[OutputSpec] = None,
    options: Optional[SolverOptions] = None,
    workers: int = 1,
) -> RecourseResult:
    """Solve an AC-OPF per scenario; failed scenarios are counted and get a ``nan`` cost."""
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    n_load = len(case.loads)

    def one(s: int) -> float:
        try:
            result = ac_opf(
                case,
                case.p_load_ref + omega[s, :n_load],
                case.p_res_ref + omega[s, n_load:],
                output_spec,
                options,
            )
        except GpCcOpfError as e:
            logger.warning("Scenario %d failed: %s", s, e.message)
            return float("nan")
        return result.cost

    start = time.perf_counter()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            costs = np.array(list(pool.map(one, range(omega.shape[0]))))
    else:
        costs = np.array([one(s) for s in range(omega.shape[0])])
    failures = int(np.sum(~np.isfinite(costs)))
    logger.info("Full recourse: %d scenarios, %d failed", costs.size, failures)
    return RecourseResult(costs=costs, failures=failures, wall_time=time.perf_counter() - start)


@dataclass
class ScenarioCcOpfResult:
    u: np.ndarray
    alpha: np.ndarray
    cost: float
    status: str
    iterations: int
    n_scenarios: int
    max_violation: float
    wall_time: float = 0.0


def scenario_cc_opf(
    case: GridCase,
    omega: np.ndarray,
    output_spec: Optional[OutputSpec] = None,
    options: Optional[SolverOptions] = None,
    pf_options: Optional[PfOptions] = None,
    workers: int = 1,
    balance: str = "losses",
) -> ScenarioCcOpfResult:
    """
    Set-points and participation factors feasible for every scenario.

    The objective is the scenario-average generation cost of the recourse
    dispatch, with the slack unit at its power-flow output. Every scenario
    contributes its output limits, the slack unit limits and the set-point
    limits of the recourse dispatch.

    Raises:
        InfeasibleSubproblem: ``details["binding"]`` names ``s<k>:<constraint>``
        NonConvergence: a scenario power flow failed (``details["scenario"]``)
    """
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    if omega.shape[0] < 1:
        raise ValueError("At least one scenario is required")
    spec = output_spec or OutputSpec.default(case)
    ev = RecourseEvaluator(case, spec, omega, pf_options, workers)
    layout = ev.layout
    coeffs = case.cost_coefficients
    n_u, S = case.n_u, ev.n_scenarios
    lower, upper, labels = _limits(case, spec, layout)
    free = layout.free
    rho = {"losses": case.loss_factor, "lossless": 1.0}
    if balance not in rho:
        raise DomainError(f"Unknown balance mode '{balance}'", {"modes": list(rho)})
    target = rho[balance] * case.p_load_ref.sum() - case.p_res_ref.sum() - case.fixed_generation

    cache: dict = {}

    def at(z):
        key = z.tobytes()
        if key not in cache:
            cache.clear()
            u, alpha = z[:n_u], z[n_u:]
            cache[key] = ev.map(lambda s: ev.sensitivity(s, ev.dispatch(s, u, alpha)), range(S))
        return cache[key]

    def objective(z):
        total = 0.0
        for s, (c, _) in enumerate(at(z)):
            d = ev.dispatch(s, z[:n_u], z[n_u:])
            d[layout.slack_unit] = c[-1]
            total += dispatch_cost(d, coeffs)
        return total / S

    def gradient(z):
        grad = np.zeros(2 * n_u)
        for s, (c, jac) in enumerate(at(z)):
            d = ev.dispatch(s, z[:n_u], z[n_u:])
            d[layout.slack_unit] = c[-1]
            marginal = 2.0 * coeffs[:, 0] * d + coeffs[:, 1]
            dd = marginal[free] + marginal[layout.slack_unit] * jac[-1]
            grad[free] += dd
            grad[n_u + free] += ev.imbalance[s] * dd
        return grad / S

    def chain(jac: np.ndarray, s: int) -> np.ndarray:
        full = np.zeros((jac.shape[0], 2 * n_u))
        full[:, free] = jac
        full[:, n_u + free] = ev.imbalance[s] * jac
        return full

    def ineq(z):
        parts = []
        for s, (c, _) in enumerate(at(z)):
            d = ev.dispatch(s, z[:n_u], z[n_u:])[free]
            parts.append(_limit_slacks(c, lower, upper))
            parts.append(np.concatenate([case.u_max[free] - d, d - case.u_min[free]]))
        return np.concatenate(parts)

    def ineq_jac(z):
        rows = []
        for s, (_, jac) in enumerate(at(z)):
            rows.append(_limit_slack_jac(chain(jac, s), lower, upper))
            sel = np.zeros((free.size, 2 * n_u))
            sel[np.arange(free.size), free] = 1.0
            sel[np.arange(free.size), n_u + free] = ev.imbalance[s]
            rows.extend([-sel, sel])
        return np.vstack(rows)

    ineq_labels = []
    for s in range(S):
        ineq_labels += _limit_labels(labels, lower, upper, f"s{s}:")
        ineq_labels += [f"s{s}:u{j}_max" for j in free] + [f"s{s}:u{j}_min" for j in free]

    def eq(z):
        return np.array([z[n_u:].sum() - 1.0, z[:n_u].sum() - target])

    eq_jac_rows = np.array([
        np.concatenate([np.zeros(n_u), np.ones(n_u)]),
        np.concatenate([np.ones(n_u), np.zeros(n_u)]),
    ])
    problem = NlpProblem(
        objective=objective,
        gradient=gradient,
        bounds=list(zip(case.u_min, case.u_max)) + [(0.0, 1.0)] * n_u,
        eq=eq,
        eq_jac=lambda z: eq_jac_rows,
        ineq=ineq,
        ineq_jac=ineq_jac,
        ineq_labels=ineq_labels,
        eq_labels=["alpha_sum", "balance"],
    )

    options = options or SolverOptions()
    if options.init is not None:
        z0 = np.asarray(options.init, dtype=float)
    else:
        u0 = case.u_ref * (target / case.u_ref.sum()) if case.u_ref.sum() > 0 else case.u_ref
        z0 = np.concatenate([u0, np.full(n_u, 1.0 / n_u)])
    logger.info("Scenario CC-OPF with %d scenarios", S)
    result = run_slsqp(problem, z0, options)
    return ScenarioCcOpfResult(
        u=result.x[:n_u],
        alpha=result.x[n_u:],
        cost=result.cost,
        status=result.status,
        iterations=result.iterations,
        n_scenarios=S,
        max_violation=result.max_violation,
        wall_time=result.wall_time,
    )
