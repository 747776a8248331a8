"""Shared NLP machinery: quantile, expected cost and the SLSQP driver.

Every optimization in the package (GP CC-OPF, deterministic AC-OPF and the
scenario CC-OPF) is posed as

    minimize f(z)  s.t.  h(z) = 0,  g(z) >= 0,  lb <= z <= ub

and handed to :func:`run_slsqp`, which records an iteration log, classifies
the exit and estimates KKT multipliers.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.optimize import lsq_linear, minimize
from scipy.stats import norm

from gp_ccopf.errors import DomainError, InfeasibleSubproblem

logger = logging.getLogger("gp_ccopf.opf")

FEASIBILITY_TOL = 1e-6
FD_STEP = 1e-6
KKT_TOL = 1e-3
LOG_COLUMNS = ("iteration", "cost", "max_violation", "step_norm")

Vector = Callable[[np.ndarray], np.ndarray]


def quantile(p: float) -> float:
    """
    Standard normal quantile ``Phi^-1(p)``.

    Raises:
        DomainError: ``p`` is not strictly between 0 and 1
    """
    if not (0.0 < p < 1.0) or not np.isfinite(p):
        raise DomainError(f"Quantile argument must lie in (0, 1), got {p}", {"p": p})
    return float(norm.ppf(p))


def expected_cost(u: np.ndarray, alpha: np.ndarray, sigma_w: np.ndarray, coeffs: np.ndarray) -> float:
    """Expected quadratic generation cost under affine recourse with ``Var(Omega) = sum(sigma_w**2)``."""
    u = np.asarray(u, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    coeffs = np.asarray(coeffs, dtype=float).reshape(-1, 3)
    total = float(np.sum(np.asarray(sigma_w, dtype=float) ** 2))
    c2, c1, c0 = coeffs[:, 0], coeffs[:, 1], coeffs[:, 2]
    return float(np.sum(c2 * (u**2 + total * alpha**2) + c1 * u + c0))


def expected_cost_gradient(
    u: np.ndarray, alpha: np.ndarray, sigma_w: np.ndarray, coeffs: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    coeffs = np.asarray(coeffs, dtype=float).reshape(-1, 3)
    total = float(np.sum(np.asarray(sigma_w, dtype=float) ** 2))
    return 2.0 * coeffs[:, 0] * u + coeffs[:, 1], 2.0 * coeffs[:, 0] * total * alpha


def central_difference(fun: Vector, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Jacobian of a vector function by central differences, one column per variable."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        cols.append((np.atleast_1d(fun(x + e)) - np.atleast_1d(fun(x - e))) / (2.0 * step))
    return np.column_stack(cols) if cols else np.zeros((np.atleast_1d(fun(x)).size, 0))


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-6
    max_iter: int = 200
    feasibility_tol: float = FEASIBILITY_TOL
    init: Optional[np.ndarray] = None
    kkt_tol: float = KKT_TOL


@dataclass
class NlpProblem:
    """Callables describing one NLP; gradients may be ``None`` for finite differences."""

    objective: Callable[[np.ndarray], float]
    gradient: Optional[Vector]
    bounds: Sequence[tuple[float, float]]
    eq: Optional[Vector] = None
    eq_jac: Optional[Callable[[np.ndarray], np.ndarray]] = None
    ineq: Optional[Vector] = None
    ineq_jac: Optional[Callable[[np.ndarray], np.ndarray]] = None
    ineq_labels: Sequence[str] = ()
    eq_labels: Sequence[str] = ()


@dataclass
class NlpResult:
    x: np.ndarray
    cost: float
    status: str
    iterations: int
    max_violation: float
    kkt: dict = field(default_factory=dict)
    log: list[dict] = field(default_factory=list)
    wall_time: float = 0.0
    message: str = ""


def _values(fun: Optional[Vector], x: np.ndarray) -> np.ndarray:
    return np.zeros(0) if fun is None else np.atleast_1d(np.asarray(fun(x), dtype=float))


def _jacobian(fun: Optional[Vector], jac, x: np.ndarray) -> np.ndarray:
    if fun is None:
        return np.zeros((0, x.size))
    if jac is not None:
        return np.atleast_2d(np.asarray(jac(x), dtype=float)).reshape(-1, x.size)
    return central_difference(fun, x)


def max_violation(problem: NlpProblem, x: np.ndarray) -> float:
    lo = np.array([b[0] for b in problem.bounds], dtype=float)
    hi = np.array([b[1] for b in problem.bounds], dtype=float)
    parts = [
        np.abs(_values(problem.eq, x)),
        np.maximum(-_values(problem.ineq, x), 0.0),
        np.maximum(lo - x, 0.0),
        np.maximum(x - hi, 0.0),
    ]
    return float(max((np.max(p) for p in parts if p.size), default=0.0))


def kkt_residuals(problem: NlpProblem, x: np.ndarray, tol: float = FEASIBILITY_TOL) -> dict:
    """
    Stationarity residual from least-squares multipliers.

    Equality multipliers are free; multipliers of active inequalities and
    active bounds are restricted to be nonnegative.
    """
    grad = problem.gradient(x) if problem.gradient is not None else central_difference(
        lambda z: np.array([problem.objective(z)]), x
    )[0]
    rows, lower = [], []
    eq_jac = _jacobian(problem.eq, problem.eq_jac, x)
    rows.extend(eq_jac)
    lower.extend([-np.inf] * eq_jac.shape[0])

    g = _values(problem.ineq, x)
    if g.size:
        active = g <= max(tol, 1e-8) * 10
        jac = _jacobian(problem.ineq, problem.ineq_jac, x)
        rows.extend(jac[active])
        lower.extend([0.0] * int(active.sum()))
    for i, (lo, hi) in enumerate(problem.bounds):
        e = np.zeros(x.size)
        e[i] = 1.0
        if np.isfinite(lo) and x[i] - lo <= tol:
            rows.append(e)
            lower.append(0.0)
        if np.isfinite(hi) and hi - x[i] <= tol:
            rows.append(-e)
            lower.append(0.0)

    grad_norm = float(np.linalg.norm(grad, np.inf))
    if not rows:
        return {"stationarity": grad_norm, "active": 0, "gradient_norm": grad_norm}
    A = np.array(rows).T
    fit = lsq_linear(A, grad, bounds=(np.array(lower), np.full(len(lower), np.inf)))
    residual = grad - A @ fit.x
    return {
        "stationarity": float(np.linalg.norm(residual, np.inf)),
        "active": len(lower),
        "multiplier_norm": float(np.linalg.norm(fit.x, np.inf)),
        "gradient_norm": grad_norm,
    }


def binding_constraints(problem: NlpProblem, x: np.ndarray, tol: float = FEASIBILITY_TOL) -> list[str]:
    """Labels of violated constraints at ``x``."""
    names = []
    for label, value in zip(problem.eq_labels, _values(problem.eq, x)):
        if abs(value) > tol:
            names.append(label)
    for label, value in zip(problem.ineq_labels, _values(problem.ineq, x)):
        if value < -tol:
            names.append(label)
    return names


def run_slsqp(problem: NlpProblem, x0: np.ndarray, options: Optional[SolverOptions] = None) -> NlpResult:
    """
    Solve an NLP with SLSQP.

    Status of the returned point:

    * ``converged``: SLSQP reported success and the stationarity residual is
      at most ``kkt_tol * max(1, |grad f|)``
    * ``max_iterations``: the iteration cap was hit; the best feasible
      iterate seen is returned
    * ``stalled``: any other feasible stop (line-search failure, singular
      subproblem, or success without the stationarity certificate)

    Raises:
        InfeasibleSubproblem: the optimizer stopped at a point that violates
            the constraints; ``details["binding"]`` names them
    """
    options = options or SolverOptions()
    x0 = np.asarray(x0, dtype=float)
    lo = np.array([b[0] for b in problem.bounds], dtype=float)
    hi = np.array([b[1] for b in problem.bounds], dtype=float)
    x0 = np.clip(x0, lo, hi)

    scale = max(abs(problem.objective(x0)), 1.0)
    constraints = []
    if problem.eq is not None:
        c = {"type": "eq", "fun": problem.eq}
        if problem.eq_jac is not None:
            c["jac"] = problem.eq_jac
        constraints.append(c)
    if problem.ineq is not None:
        c = {"type": "ineq", "fun": problem.ineq}
        if problem.ineq_jac is not None:
            c["jac"] = problem.ineq_jac
        constraints.append(c)

    log: list[dict] = []
    best = {"x": x0.copy(), "cost": np.inf}
    previous = [x0.copy()]

    def callback(xk):
        cost = problem.objective(xk)
        violation = max_violation(problem, xk)
        step = float(np.linalg.norm(xk - previous[0]))
        previous[0] = xk.copy()
        log.append({"iteration": len(log) + 1, "cost": cost, "max_violation": violation, "step_norm": step})
        logger.debug("iter %d cost %.8g viol %.2e step %.2e", len(log), cost, violation, step)
        if violation <= options.feasibility_tol and cost < best["cost"]:
            best.update(x=xk.copy(), cost=cost)

    jac = None
    if problem.gradient is not None:
        def jac(z):
            return problem.gradient(z) / scale

    start = time.perf_counter()
    result = minimize(
        lambda z: problem.objective(z) / scale,
        x0,
        jac=jac,
        method="SLSQP",
        bounds=list(zip(lo, hi)),
        constraints=constraints,
        callback=callback,
        options={"maxiter": options.max_iter, "ftol": options.tol * 1e-3},
    )
    elapsed = time.perf_counter() - start

    x = np.clip(result.x, lo, hi)
    violation = max_violation(problem, x)
    iterations = int(result.get("nit", len(log)))

    if result.status == 9:
        if violation > options.feasibility_tol and np.isfinite(best["cost"]):
            x, violation = best["x"], max_violation(problem, best["x"])
        status = "max_iterations"
        logger.warning("SLSQP hit the iteration cap (%d); returning the best iterate", options.max_iter)
    elif violation > options.feasibility_tol:
        raise InfeasibleSubproblem(
            f"Optimizer stopped at an infeasible point: {result.message}",
            {
                "max_violation": violation,
                "binding": binding_constraints(problem, x, options.feasibility_tol),
                "iterations": iterations,
                "status": int(result.status),
            },
        )

    kkt = kkt_residuals(problem, x, options.feasibility_tol)
    if result.status != 9:
        certified = kkt["stationarity"] <= options.kkt_tol * max(1.0, kkt["gradient_norm"])
        status = "converged" if result.success and certified else "stalled"
        if status == "stalled":
            logger.warning(
                "SLSQP stopped without a first-order certificate (exit %d: %s, stationarity %.2e)",
                result.status, result.message, kkt["stationarity"],
            )

    cost = problem.objective(x)
    logger.info("SLSQP %s after %d iterations, cost %.6g", status, iterations, cost)
    return NlpResult(
        x=x,
        cost=cost,
        status=status,
        iterations=iterations,
        max_violation=violation,
        kkt=kkt,
        log=log,
        wall_time=elapsed,
        message=str(result.message),
    )


def write_iteration_log(log: Sequence[dict], path: Union[str, Path]) -> Path:
    """Write ``iteration, cost, max_violation, step_norm`` rows as CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(list(log), columns=list(LOG_COLUMNS))
    frame.to_csv(path, index=False, float_format="%.17g")
    return path
