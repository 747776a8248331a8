"""Monte-Carlo validation and reporting.

* :class:`ScenarioSet` - Gaussian injection fluctuations with per-sample streams.
* :func:`mc_validate` - run the true AC power flow under affine recourse for
  every scenario and report empirical spreads and violation frequencies.
* :func:`rmse_report` - per-output RMSE of a model on held-out data.
* :func:`spread_table` / :func:`comparison_table` - plot-ready CSV tables;
  :func:`mean_rmse` scores propagated means against the AC Monte-Carlo means.

Violation probabilities are reported both per constraint and jointly (a
sample counts once if any constraint is violated).
"""

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from gp_ccopf.dataset import CSV_FLOAT_FORMAT, Dataset, row_fingerprints
from gp_ccopf.errors import FingerprintMismatch, GpCcOpfError, SpecMismatch, TooManyFailures
from gp_ccopf.gp.model import MultiGpModel
from gp_ccopf.grid.case import GridCase
from gp_ccopf.grid.caseio import DEFAULT_LOAD_SIGMA, DEFAULT_RES_SIGMA
from gp_ccopf.grid.outputs import OutputSpec
from gp_ccopf.grid.powerflow import PfOptions
from gp_ccopf.opf.acopf import RecourseEvaluator
from gp_ccopf.opf.ccopf import CcOpfProblem
from gp_ccopf.propagation import METHODS, propagate

logger = logging.getLogger("gp_ccopf.validation")

QUANTILE_LOW = 0.0027
QUANTILE_HIGH = 0.9973
MAX_PF_FAILURE_RATE = 0.05
JOINT_NOTE = "joint violation counts a sample once if any constraint is violated"


@dataclass(frozen=True)
class ScenarioSet:
    """``S x n_d`` fluctuations of ``[loads, renewables]`` around the forecast."""

    omega: np.ndarray
    labels: tuple[str, ...]
    signs: np.ndarray
    seed: int
    sigma_load: float
    sigma_res: float

    @classmethod
    def sample(
        cls,
        case: GridCase,
        n: int,
        seed: int = 0,
        sigma_load: float = DEFAULT_LOAD_SIGMA,
        sigma_res: float = DEFAULT_RES_SIGMA,
    ) -> "ScenarioSet":
        """
        Zero-mean Gaussian draws with std-dev ``sigma_load * |p_l|`` and
        ``sigma_res * |p_rs|``. Sample ``s`` uses the stream ``(seed, s)``.
        """
        if n < 1:
            raise ValueError("n must be >= 1")
        scale = np.concatenate([
            sigma_load * np.abs(case.p_load_ref),
            sigma_res * np.abs(case.p_res_ref),
        ])
        omega = np.vstack([np.random.default_rng([seed, s]).standard_normal(case.n_d) * scale for s in range(n)])
        labels = tuple([f"pl_{ld.bus}" for ld in case.loads] + [f"prs_{rs.bus}" for rs in case.renewables])
        return cls(omega, labels, case.injection_signs, seed, sigma_load, sigma_res)

    @property
    def n(self) -> int:
        return self.omega.shape[0]

    @property
    def imbalance(self) -> np.ndarray:
        """Net demand increase ``Omega_s`` per sample."""
        return self.omega @ self.signs

    def head(self, n: int) -> "ScenarioSet":
        return ScenarioSet(self.omega[:n], self.labels, self.signs, self.seed, self.sigma_load, self.sigma_res)


@dataclass
class ValidationReport:
    y_labels: list[str]
    unit_labels: list[str]
    outputs: np.ndarray
    units: np.ndarray
    violation: dict[str, float]
    joint_violation: float
    n_samples: int
    n_failed: int
    seed: int
    wall_time: float = 0.0
    cost: Optional[float] = None
    mu_y: Optional[np.ndarray] = None
    lambda_y: Optional[np.ndarray] = None
    label: str = ""

    @property
    def mean(self) -> np.ndarray:
        return self.outputs.mean(axis=0)

    @property
    def std(self) -> np.ndarray:
        return self.outputs.std(axis=0, ddof=1) if self.outputs.shape[0] > 1 else np.zeros(self.outputs.shape[1])

    @property
    def q_low(self) -> np.ndarray:
        return np.quantile(self.outputs, QUANTILE_LOW, axis=0)

    @property
    def q_high(self) -> np.ndarray:
        return np.quantile(self.outputs, QUANTILE_HIGH, axis=0)

    @property
    def max_violation(self) -> float:
        return max(self.violation.values(), default=0.0)

    @property
    def failure_rate(self) -> float:
        return self.n_failed / self.n_samples if self.n_samples else 0.0

    def histogram(self, label: str, bins: int = 50) -> pd.DataFrame:
        """Histogram of one output's samples (``bin_left, bin_right, count``)."""
        column = self.outputs[:, self.y_labels.index(label)]
        counts, edges = np.histogram(column, bins=bins)
        return pd.DataFrame({"bin_left": edges[:-1], "bin_right": edges[1:], "count": counts})

    def to_frame(self) -> pd.DataFrame:
        """One row per output variable."""
        mean, q_low, q_high = self.mean, self.q_low, self.q_high
        frame = pd.DataFrame({
            "variable": self.y_labels,
            "mean": mean,
            "std": self.std,
            "q_low": q_low,
            "q_high": q_high,
            "empirical_lower_margin": mean - q_low,
            "empirical_upper_margin": q_high - mean,
            "violation": [self.violation.get(f"{lab}", 0.0) for lab in self.y_labels],
        })
        if self.mu_y is not None:
            frame["predicted_mean"] = self.mu_y
        if self.lambda_y is not None:
            frame["analytic_margin"] = self.lambda_y
        return frame

    def summary(self) -> dict:
        return {
            "label": self.label,
            "n_samples": self.n_samples,
            "n_failed": self.n_failed,
            "seed": self.seed,
            "joint_violation": self.joint_violation,
            "max_violation": self.max_violation,
            "violation": self.violation,
            "cost": self.cost,
            "wall_time": self.wall_time,
            "note": JOINT_NOTE,
        }

    def save(self, directory: Union[str, Path], stem: str = "validation") -> Path:
        """Write ``<stem>.csv`` (per output) and ``<stem>.json`` (summary); returns the CSV path."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        csv_path = directory / f"{stem}.csv"
        write_table(self.to_frame(), csv_path)
        csv_path.with_suffix(".json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True))
        return csv_path


def write_table(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
    return path


def mc_validate(
    case: GridCase,
    u: np.ndarray,
    alpha: np.ndarray,
    scenarios: ScenarioSet,
    output_spec: Optional[OutputSpec] = None,
    pf_options: Optional[PfOptions] = None,
    workers: int = 1,
    cost: Optional[float] = None,
    mu_y: Optional[np.ndarray] = None,
    lambda_y: Optional[np.ndarray] = None,
    label: str = "",
) -> ValidationReport:
    """
    Validate a dispatch ``(u, alpha)`` against the true AC power flow.

    For every sample the units run at ``u + alpha * Omega_s`` (the slack unit
    at its power-flow output) with injections at the forecast plus
    ``omega_s``. Output and unit limits are checked per sample.

    Raises:
        TooManyFailures: more than 5% of the power flows diverged
    """
    spec = output_spec or OutputSpec.default(case)
    u = np.asarray(u, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    ev = RecourseEvaluator(case, spec, scenarios.omega, pf_options)
    slack_unit = ev.layout.slack_unit

    def one(s: int):
        dispatch = ev.dispatch(s, u, alpha)
        try:
            c, _ = ev.run(s, dispatch)
        except GpCcOpfError as e:
            logger.debug("Sample %d: power flow failed (%s)", s, e.message)
            return None
        dispatch[slack_unit] = c[-1]
        return c[:-1], dispatch

    start = time.perf_counter()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(scenarios.n)))
    else:
        results = [one(s) for s in range(scenarios.n)]

    ok = [r for r in results if r is not None]
    n_failed = scenarios.n - len(ok)
    if n_failed > MAX_PF_FAILURE_RATE * scenarios.n or not ok:
        raise TooManyFailures(
            f"{n_failed} of {scenarios.n} validation power flows diverged",
            {"failed": n_failed, "samples": scenarios.n},
        )
    if n_failed:
        logger.warning("%d of %d validation power flows diverged", n_failed, scenarios.n)

    Y = np.vstack([y for y, _ in ok])
    U = np.vstack([d for _, d in ok])
    unit_labels = [f"u_{case.generators[k].bus}" for k in case.controllable]
    y_bad = (Y > spec.upper) | (Y < spec.lower)
    u_bad = (U > case.u_max) | (U < case.u_min)
    violation = {lab: float(y_bad[:, a].mean()) for a, lab in enumerate(spec.labels)}
    for j, lab in enumerate(unit_labels):
        violation[lab if lab not in violation else f"{lab}_unit"] = float(u_bad[:, j].mean())
    joint = float(np.mean(y_bad.any(axis=1) | u_bad.any(axis=1)))
    logger.info("MC validation %s: joint violation %.4f over %d samples", label, joint, len(ok))

    return ValidationReport(
        y_labels=spec.labels,
        unit_labels=unit_labels,
        outputs=Y,
        units=U,
        violation=violation,
        joint_violation=joint,
        n_samples=scenarios.n,
        n_failed=n_failed,
        seed=scenarios.seed,
        wall_time=time.perf_counter() - start,
        cost=cost,
        mu_y=None if mu_y is None else np.asarray(mu_y, dtype=float),
        lambda_y=None if lambda_y is None else np.asarray(lambda_y, dtype=float),
        label=label,
    )


@dataclass
class RmseReport:
    labels: list[str]
    rmse: np.ndarray

    @property
    def average(self) -> float:
        return float(np.mean(self.rmse)) if self.rmse.size else 0.0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"variable": self.labels + ["average"], "rmse": list(self.rmse) + [self.average]})

    def to_document(self) -> dict:
        return {"rmse": dict(zip(self.labels, self.rmse.tolist())), "average": self.average}


def rmse_report(model: MultiGpModel, test: Dataset) -> RmseReport:
    """
    Per-output RMSE of the predictive mean and their average.

    Raises:
        FingerprintMismatch: the test inputs share rows with the training
            data, or their width differs from the model's
    """
    if test.X.shape[1] != model.n_x or test.Y.shape[1] != model.n_y:
        raise FingerprintMismatch(
            "Test data shape does not match the model",
            {"test": list(test.X.shape) + [test.Y.shape[1]], "model": [model.n_x, model.n_y]},
        )
    shared = row_fingerprints(model.X) & row_fingerprints(test.X)
    if shared:
        raise FingerprintMismatch("Test data overlaps the training data", {"shared_rows": len(shared)})
    means, _ = model.predict_batch(test.X)
    rmse = np.sqrt(np.mean((means - test.Y) ** 2, axis=0))
    labels = list(model.y_labels) or list(test.y_labels)
    return RmseReport(labels=labels, rmse=rmse)


def spread_table(
    problem: CcOpfProblem,
    u: np.ndarray,
    alpha: np.ndarray,
    ac_report: Optional[ValidationReport] = None,
    methods: Sequence[str] = METHODS,
    gp_samples: int = 2000,
    seed: int = 0,
) -> pd.DataFrame:
    """
    Plot-ready spread comparison, one row per output.

    Columns: ``variable``; ``<method>_mean`` and ``<method>_3std`` for each
    propagation method; ``gp_mc_lower/upper`` (empirical 0.27%/99.73% margins
    of the surrogate under sampled inputs); ``ac_mc_mean`` and
    ``ac_mc_lower/upper`` from the AC validation.
    """
    dist = problem.input_distribution(u, alpha)
    labels = problem.y_labels or [f"y{a}" for a in range(problem.model.n_y)]
    columns: dict = {"variable": labels}
    for method in methods:
        out = propagate(problem.model, dist, method)
        columns[f"{method}_mean"] = out.mean
        columns[f"{method}_3std"] = 3.0 * out.std

    rng = np.random.default_rng(seed)
    draws = rng.multivariate_normal(dist.mean, dist.cov, size=gp_samples, method="eigh")
    mu, var = problem.model.predict_batch(draws)
    samples = mu + np.sqrt(var) * rng.standard_normal(mu.shape)
    centre = samples.mean(axis=0)
    columns["gp_mc_lower"] = centre - np.quantile(samples, QUANTILE_LOW, axis=0)
    columns["gp_mc_upper"] = np.quantile(samples, QUANTILE_HIGH, axis=0) - centre

    if ac_report is not None:
        columns["ac_mc_mean"] = ac_report.mean
        columns["ac_mc_lower"] = ac_report.mean - ac_report.q_low
        columns["ac_mc_upper"] = ac_report.q_high - ac_report.mean
    return pd.DataFrame(columns)


def mean_rmse(spread: pd.DataFrame, method: str) -> float:
    """RMSE between a method's propagated means and the AC Monte-Carlo means of a spread table."""
    if "ac_mc_mean" not in spread or f"{method}_mean" not in spread:
        raise SpecMismatch(
            f"Spread table lacks the {method} or AC Monte-Carlo means", {"columns": list(spread.columns)}
        )
    return float(np.sqrt(np.mean((spread[f"{method}_mean"] - spread["ac_mc_mean"]) ** 2)))


@dataclass(frozen=True)
class ApproachRow:
    approach: str
    cost: float
    joint_violation: float = float("nan")
    max_violation: float = float("nan")
    wall_time: float = float("nan")
    details: dict = field(default_factory=dict)


def comparison_table(rows: Sequence[ApproachRow]) -> pd.DataFrame:
    """One row per approach: cost, joint and worst per-constraint violation in percent, wall time."""
    return pd.DataFrame({
        "approach": [r.approach for r in rows],
        "cost": [r.cost for r in rows],
        "joint_violation_pct": [100.0 * r.joint_violation for r in rows],
        "max_violation_pct": [100.0 * r.max_violation for r in rows],
        "wall_time_s": [r.wall_time for r in rows],
    })
