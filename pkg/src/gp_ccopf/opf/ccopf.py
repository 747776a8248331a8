"""GP-based chance-constrained OPF.

Decision variables are the set-points ``u`` and participation factors
``alpha``. Output moments come from the GP surrogate through the configured
propagation method; each two-sided output limit is tightened by the margin
``Phi^-1(1 - eps_y) * sigma_y`` and each set-point limit by
``Phi^-1(1 - eps_u) * alpha_k * sqrt(sum(sigma_w**2))``.

``sigma_y`` is the full propagated standard deviation, so it carries the
surrogate's own predictive variance. With ``sigma_w = 0`` the set-point
margins vanish but the output margins reduce to ``Phi^-1(1 - eps_y)`` times
the GP standard deviation at the set-point: the problem becomes a
deterministic surrogate OPF with limits tightened by the model uncertainty.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from gp_ccopf.errors import DomainError, FingerprintMismatch, SpecMismatch
from gp_ccopf.gp.model import MultiGpModel
from gp_ccopf.grid.case import GridCase
from gp_ccopf.grid.outputs import OutputSpec
from gp_ccopf.opf.nlp import (
    NlpProblem,
    SolverOptions,
    central_difference,
    expected_cost,
    expected_cost_gradient,
    quantile,
    run_slsqp,
    write_iteration_log,
)
from gp_ccopf.propagation import METHODS, InputDistribution, assemble_input_cov, propagate

logger = logging.getLogger("gp_ccopf.opf")

DEFAULT_EPS_U = 0.001
DEFAULT_EPS_Y = 0.025
SIGMA_FLOOR = 1e-12
MOMENT_FD_STEP = 1e-5


def _finite_or_none(values: np.ndarray) -> list[Optional[float]]:
    return [float(v) if np.isfinite(v) else None for v in values]


def _array_or_inf(values, fill: float) -> np.ndarray:
    return np.array([fill if v is None else v for v in values], dtype=float)


@dataclass(eq=False)
class CcOpfProblem:
    """
    One GP CC-OPF instance.

    ``rho_bal`` selects the balance constraint
    ``sum(u) = rho_bal * sum(p_load) - sum(p_res) - fixed_generation``;
    ``None`` drops it.
    """

    model: MultiGpModel
    u_min: np.ndarray
    u_max: np.ndarray
    y_min: np.ndarray
    y_max: np.ndarray
    cost: np.ndarray
    p_load: np.ndarray
    p_res: np.ndarray
    sigma_w: np.ndarray
    signs: Optional[np.ndarray] = None
    eps_u: float = DEFAULT_EPS_U
    eps_y: float = DEFAULT_EPS_Y
    method: str = "ta1"
    rho_bal: Optional[float] = 1.0
    fixed_generation: float = 0.0
    u_ref: Optional[np.ndarray] = None
    y_labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        for name in ("u_min", "u_max", "y_min", "y_max", "p_load", "p_res", "sigma_w"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).ravel())
        self.cost = np.asarray(self.cost, dtype=float).reshape(-1, 3)
        self.signs = np.ones(self.n_d) if self.signs is None else np.asarray(self.signs, dtype=float).ravel()
        self.method = self.method.lower()

        for name in ("eps_u", "eps_y"):
            eps = getattr(self, name)
            if not 0.0 < eps < 0.5:
                raise DomainError(f"{name} must lie in (0, 0.5), got {eps}", {name: eps})
        if self.method not in METHODS:
            raise DomainError(f"Unknown propagation method '{self.method}'", {"methods": list(METHODS)})
        if self.model.n_x != self.n_u + self.n_d:
            raise SpecMismatch(
                "Model input dimension does not match set-points plus injections",
                {"model_inputs": self.model.n_x, "n_u": self.n_u, "n_d": self.n_d},
            )
        if self.y_min.size != self.model.n_y or self.y_max.size != self.model.n_y:
            raise SpecMismatch(
                "Output limits do not match the model outputs",
                {"model_outputs": self.model.n_y, "limits": int(self.y_min.size)},
            )
        if self.sigma_w.size != self.n_d or self.signs.size != self.n_d:
            raise SpecMismatch("sigma_w must have one entry per injection", {"n_d": self.n_d})
        if np.any(self.u_min > self.u_max):
            raise DomainError("u_min exceeds u_max")
        self._warn_outside_hull()

    @property
    def n_u(self) -> int:
        return self.u_min.size

    @property
    def n_d(self) -> int:
        return self.p_load.size + self.p_res.size

    @property
    def forecast(self) -> np.ndarray:
        return np.concatenate([self.p_load, self.p_res])

    @property
    def balance_target(self) -> Optional[float]:
        if self.rho_bal is None:
            return None
        return float(self.rho_bal * self.p_load.sum() - self.p_res.sum() - self.fixed_generation)

    @property
    def r_u(self) -> float:
        return quantile(1.0 - self.eps_u)

    @property
    def r_y(self) -> float:
        return quantile(1.0 - self.eps_y)

    def _warn_outside_hull(self):
        X = self.model.X[:, self.n_u:]
        low, high = X.min(axis=0), X.max(axis=0)
        outside = np.flatnonzero((self.forecast < low) | (self.forecast > high))
        if outside.size:
            labels = self.model.x_labels[self.n_u:] if self.model.x_labels else []
            names = [labels[i] if i < len(labels) else str(i) for i in outside]
            logger.warning("Forecast lies outside the training range for %s", ", ".join(names))

    @classmethod
    def from_case(
        cls,
        case: GridCase,
        model: MultiGpModel,
        output_spec: Optional[OutputSpec] = None,
        eps_u: float = DEFAULT_EPS_U,
        eps_y: float = DEFAULT_EPS_Y,
        method: str = "ta1",
        balance: str = "losses",
        sigma_w: Optional[np.ndarray] = None,
    ) -> "CcOpfProblem":
        """
        Build the problem from a case and a trained model.

        Args:
            balance: ``losses`` (loss factor of the case), ``lossless`` (1.0)
                or ``none``
            sigma_w: Fluctuation std-devs; default the case's per-injection sigma
        """
        spec = output_spec or OutputSpec.default(case)
        if spec.n_y != model.n_y:
            raise SpecMismatch(
                "Output spec does not match the model outputs",
                {"spec_outputs": spec.n_y, "model_outputs": model.n_y},
            )
        rho = {"losses": case.loss_factor, "lossless": 1.0, "none": None}
        if balance not in rho:
            raise DomainError(f"Unknown balance mode '{balance}'", {"modes": list(rho)})
        return cls(
            model=model,
            u_min=case.u_min,
            u_max=case.u_max,
            y_min=spec.lower,
            y_max=spec.upper,
            cost=case.cost_coefficients,
            p_load=case.p_load_ref,
            p_res=case.p_res_ref,
            sigma_w=case.sigma_w if sigma_w is None else sigma_w,
            signs=case.injection_signs,
            eps_u=eps_u,
            eps_y=eps_y,
            method=method,
            rho_bal=rho[balance],
            fixed_generation=case.fixed_generation,
            u_ref=case.u_ref,
            y_labels=spec.labels,
        )

    def input_distribution(self, u: np.ndarray, alpha: np.ndarray, check: bool = True) -> InputDistribution:
        mean = np.concatenate([np.asarray(u, dtype=float), self.forecast])
        cov = assemble_input_cov(alpha, self.sigma_w, self.signs, check=check)
        return InputDistribution(mean, cov, self.n_u)

    def initial_point(self) -> np.ndarray:
        """Reference dispatch scaled onto the balance target, with equal participation."""
        u0 = self.u_ref if self.u_ref is not None else 0.5 * (self.u_min + self.u_max)
        u0 = np.asarray(u0, dtype=float).copy()
        target = self.balance_target
        if target is not None and u0.sum() > 0:
            u0 *= target / u0.sum()
        u0 = np.clip(u0, self.u_min, self.u_max)
        return np.concatenate([u0, np.full(self.n_u, 1.0 / self.n_u)])

    # -- serialization ----------------------------------------------------------

    def to_document(self) -> dict[str, Any]:
        return {
            "u_min": self.u_min.tolist(),
            "u_max": self.u_max.tolist(),
            "y_min": _finite_or_none(self.y_min),
            "y_max": _finite_or_none(self.y_max),
            "cost": self.cost.tolist(),
            "p_load": self.p_load.tolist(),
            "p_res": self.p_res.tolist(),
            "sigma_w": self.sigma_w.tolist(),
            "signs": self.signs.tolist(),
            "eps_u": self.eps_u,
            "eps_y": self.eps_y,
            "method": self.method,
            "rho_bal": self.rho_bal,
            "fixed_generation": self.fixed_generation,
            "u_ref": None if self.u_ref is None else np.asarray(self.u_ref).tolist(),
            "y_labels": list(self.y_labels),
            "training_fingerprint": self.model.fingerprint,
        }

    @classmethod
    def from_document(cls, doc: dict[str, Any], model: MultiGpModel) -> "CcOpfProblem":
        expected = doc.get("training_fingerprint")
        if expected and expected != model.fingerprint:
            raise FingerprintMismatch(
                "Problem was built for a different model",
                {"expected": expected, "actual": model.fingerprint},
            )
        return cls(
            model=model,
            u_min=np.array(doc["u_min"]),
            u_max=np.array(doc["u_max"]),
            y_min=_array_or_inf(doc["y_min"], -np.inf),
            y_max=_array_or_inf(doc["y_max"], np.inf),
            cost=np.array(doc["cost"]),
            p_load=np.array(doc["p_load"]),
            p_res=np.array(doc["p_res"]),
            sigma_w=np.array(doc["sigma_w"]),
            signs=np.array(doc["signs"]),
            eps_u=doc["eps_u"],
            eps_y=doc["eps_y"],
            method=doc["method"],
            rho_bal=doc["rho_bal"],
            fixed_generation=doc.get("fixed_generation", 0.0),
            u_ref=None if doc.get("u_ref") is None else np.array(doc["u_ref"]),
            y_labels=list(doc.get("y_labels", [])),
        )


@dataclass(frozen=True)
class ConstraintEvaluation:
    """Constraint values at one ``(u, alpha)``; slacks are feasible when >= 0."""

    balance_residual: float
    mu_y: np.ndarray
    sigma_y: np.ndarray
    lambda_y: np.ndarray
    lambda_u: np.ndarray
    y_upper_slack: np.ndarray
    y_lower_slack: np.ndarray
    u_upper_slack: np.ndarray
    u_lower_slack: np.ndarray
    fallback: bool = False

    @property
    def max_violation(self) -> float:
        slacks = np.concatenate([self.y_upper_slack, self.y_lower_slack, self.u_upper_slack, self.u_lower_slack])
        worst = float(np.max(-slacks, initial=0.0))
        return max(worst, abs(self.balance_residual) if np.isfinite(self.balance_residual) else 0.0)


def _moments(problem: CcOpfProblem, u: np.ndarray, alpha: np.ndarray):
    out = propagate(problem.model, problem.input_distribution(u, alpha, check=False), problem.method)
    return out.mean, np.sqrt(out.var), out.fallback


def evaluate_constraints(problem: CcOpfProblem, u: np.ndarray, alpha: np.ndarray) -> ConstraintEvaluation:
    """
    Balance residual, propagated output moments and all margin slacks.

    Slacks of unbounded sides are ``+inf``. Without a balance constraint the
    residual is reported as ``nan``. ``lambda_y`` includes the GP predictive
    variance and is therefore positive even when ``sigma_w`` is zero.

    Raises:
        PropagationFailure: propagated moments were not finite
    """
    u = np.asarray(u, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    mu_y, sigma_y, fallback = _moments(problem, u, alpha)
    lambda_y = problem.r_y * sigma_y
    lambda_u = problem.r_u * alpha * np.sqrt(np.sum(problem.sigma_w**2))
    with np.errstate(invalid="ignore"):
        y_upper = np.where(np.isfinite(problem.y_max), problem.y_max - lambda_y - mu_y, np.inf)
        y_lower = np.where(np.isfinite(problem.y_min), mu_y - problem.y_min - lambda_y, np.inf)
    target = problem.balance_target
    return ConstraintEvaluation(
        balance_residual=float(u.sum() - target) if target is not None else float("nan"),
        mu_y=mu_y,
        sigma_y=sigma_y,
        lambda_y=lambda_y,
        lambda_u=lambda_u,
        y_upper_slack=y_upper,
        y_lower_slack=y_lower,
        u_upper_slack=problem.u_max - lambda_u - u,
        u_lower_slack=u - problem.u_min - lambda_u,
        fallback=fallback,
    )


def moment_jacobian(problem: CcOpfProblem, u: np.ndarray, alpha: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Jacobians of ``mu_y`` and ``sigma_y`` with respect to ``z = [u, alpha]``.

    Analytic for ``ta1``; central differences for ``ta2`` and ``em``.
    """
    u = np.asarray(u, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    n_u = problem.n_u
    if problem.method != "ta1":
        def stacked(z):
            mu, sigma, _ = _moments(problem, z[:n_u], z[n_u:])
            return np.concatenate([mu, sigma])

        J = central_difference(stacked, np.concatenate([u, alpha]), MOMENT_FD_STEP)
        n_y = problem.model.n_y
        return J[:n_y], J[n_y:]

    x = np.concatenate([u, problem.forecast])
    cov = assemble_input_cov(alpha, problem.sigma_w, problem.signs, check=False)
    total = float(np.sum(problem.sigma_w**2))
    weighted = problem.signs * problem.sigma_w**2
    d_mu, d_sigma = [], []
    for m in problem.model.models:
        g = m.mean_gradient(x)
        var_gp = m.predict(x)[1]
        variance = max(var_gp + g @ cov @ g, 0.0)
        sigma = max(np.sqrt(variance), SIGMA_FLOOR)
        g_u, g_w = g[:n_u], g[n_u:]
        dvar_du = m.variance_gradient(x)[:n_u] + 2.0 * (m.mean_hessian(x) @ cov @ g)[:n_u]
        dvar_dalpha = 2.0 * g_u * (total * (g_u @ alpha) + g_w @ weighted)
        d_mu.append(np.concatenate([g_u, np.zeros(n_u)]))
        d_sigma.append(np.concatenate([dvar_du, dvar_dalpha]) / (2.0 * sigma))
    return np.array(d_mu).reshape(-1, 2 * n_u), np.array(d_sigma).reshape(-1, 2 * n_u)


@dataclass
class CcOpfSolution:
    u: np.ndarray
    alpha: np.ndarray
    mu_y: np.ndarray
    sigma_y: np.ndarray
    lambda_y: np.ndarray
    lambda_u: np.ndarray
    cost: float
    iterations: int
    status: str
    method: str
    max_violation: float
    kkt: dict = field(default_factory=dict)
    y_labels: list[str] = field(default_factory=list)
    wall_time: float = 0.0
    log: list[dict] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def to_document(self) -> dict[str, Any]:
        return {
            "u": self.u.tolist(),
            "alpha": self.alpha.tolist(),
            "mu_y": self.mu_y.tolist(),
            "sigma_y": self.sigma_y.tolist(),
            "lambda_y": self.lambda_y.tolist(),
            "lambda_u": self.lambda_u.tolist(),
            "cost": self.cost,
            "iterations": self.iterations,
            "status": self.status,
            "method": self.method,
            "max_violation": self.max_violation,
            "kkt": self.kkt,
            "y_labels": list(self.y_labels),
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_document(cls, doc: dict[str, Any]) -> "CcOpfSolution":
        arrays = {k: np.array(doc[k], dtype=float) for k in ("u", "alpha", "mu_y", "sigma_y", "lambda_y", "lambda_u")}
        return cls(
            **arrays,
            cost=float(doc["cost"]),
            iterations=int(doc["iterations"]),
            status=doc["status"],
            method=doc["method"],
            max_violation=float(doc["max_violation"]),
            kkt=dict(doc.get("kkt", {})),
            y_labels=list(doc.get("y_labels", [])),
            wall_time=float(doc.get("wall_time", 0.0)),
        )

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_document(), indent=2))
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "CcOpfSolution":
        return cls.from_document(json.loads(Path(path).read_text()))

    def write_log(self, path: Union[str, Path]) -> Path:
        return write_iteration_log(self.log, path)


class _Evaluator:
    """Caches constraint values and Jacobians at the last visited point."""

    def __init__(self, problem: CcOpfProblem):
        self.problem = problem
        self._key = None
        self._jac_key = None

    def at(self, z: np.ndarray) -> ConstraintEvaluation:
        key = z.tobytes()
        if key != self._key:
            n_u = self.problem.n_u
            self._eval = evaluate_constraints(self.problem, z[:n_u], z[n_u:])
            self._key = key
        return self._eval

    def jac(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        key = z.tobytes()
        if key != self._jac_key:
            n_u = self.problem.n_u
            self._jac = moment_jacobian(self.problem, z[:n_u], z[n_u:])
            self._jac_key = key
        return self._jac


def _nlp(problem: CcOpfProblem) -> NlpProblem:
    n_u = problem.n_u
    ev = _Evaluator(problem)
    upper = np.isfinite(problem.y_max)
    lower = np.isfinite(problem.y_min)
    labels = problem.y_labels or [f"y{a}" for a in range(problem.model.n_y)]
    r_u_scaled = problem.r_u * np.sqrt(np.sum(problem.sigma_w**2))
    eye = np.eye(n_u)

    def objective(z):
        return expected_cost(z[:n_u], z[n_u:], problem.sigma_w, problem.cost)

    def gradient(z):
        return np.concatenate(expected_cost_gradient(z[:n_u], z[n_u:], problem.sigma_w, problem.cost))

    target = problem.balance_target

    def eq(z):
        values = [z[n_u:].sum() - 1.0]
        if target is not None:
            values.append(z[:n_u].sum() - target)
        return np.array(values)

    def eq_jac(z):
        rows = [np.concatenate([np.zeros(n_u), np.ones(n_u)])]
        if target is not None:
            rows.append(np.concatenate([np.ones(n_u), np.zeros(n_u)]))
        return np.array(rows)

    def ineq(z):
        e = ev.at(z)
        return np.concatenate([
            e.y_upper_slack[upper],
            e.y_lower_slack[lower],
            e.u_upper_slack,
            e.u_lower_slack,
        ])

    def ineq_jac(z):
        d_mu, d_sigma = ev.jac(z)
        d_lambda = problem.r_y * d_sigma
        d_lambda_u = np.hstack([np.zeros((n_u, n_u)), r_u_scaled * eye])
        d_u = np.hstack([eye, np.zeros((n_u, n_u))])
        return np.vstack([
            (-d_lambda - d_mu)[upper],
            (d_mu - d_lambda)[lower],
            -d_lambda_u - d_u,
            d_u - d_lambda_u,
        ])

    ineq_labels = (
        [f"{labels[a]}_max" for a in np.flatnonzero(upper)]
        + [f"{labels[a]}_min" for a in np.flatnonzero(lower)]
        + [f"u{k}_max" for k in range(n_u)]
        + [f"u{k}_min" for k in range(n_u)]
    )
    eq_labels = ["alpha_sum"] + (["balance"] if target is not None else [])
    bounds = [(lo, hi) for lo, hi in zip(problem.u_min, problem.u_max)] + [(0.0, 1.0)] * n_u
    return NlpProblem(
        objective=objective,
        gradient=gradient,
        bounds=bounds,
        eq=eq,
        eq_jac=eq_jac,
        ineq=ineq,
        ineq_jac=ineq_jac,
        ineq_labels=ineq_labels,
        eq_labels=eq_labels,
    )


def solve(problem: CcOpfProblem, options: Optional[SolverOptions] = None) -> CcOpfSolution:
    """
    Solve the CC-OPF in the reduced ``(u, alpha)`` space.

    Raises:
        InfeasibleSubproblem: margins cannot be met; ``details["binding"]``
            names the violated constraints
        PropagationFailure: propagation broke down at an iterate
    """
    options = options or SolverOptions()
    x0 = problem.initial_point() if options.init is None else np.asarray(options.init, dtype=float)
    logger.info(
        "Solving CC-OPF: %d set-points, %d outputs, method %s", problem.n_u, problem.model.n_y, problem.method
    )
    result = run_slsqp(_nlp(problem), x0, options)

    n_u = problem.n_u
    u, alpha = result.x[:n_u], result.x[n_u:]
    final = evaluate_constraints(problem, u, alpha)
    return CcOpfSolution(
        u=u,
        alpha=alpha,
        mu_y=final.mu_y,
        sigma_y=final.sigma_y,
        lambda_y=final.lambda_y,
        lambda_u=final.lambda_u,
        cost=result.cost,
        iterations=result.iterations,
        status=result.status,
        method=problem.method,
        max_violation=result.max_violation,
        kkt=result.kkt,
        y_labels=list(problem.y_labels),
        wall_time=result.wall_time,
        log=result.log,
    )
