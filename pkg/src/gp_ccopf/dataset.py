"""Synthetic operating-point datasets.

Loads and renewables are drawn as ``reference * corr * uncorr`` with one
log-normal ``corr`` factor per row shared by all elements of a kind and an
independent log-normal ``uncorr`` factor per element. Controllable generation
is then jittered around the reference dispatch and rescaled so that
``sum(u) + sum(p_rs) = rho * sum(p_l)`` holds exactly. Each row is labelled
with the AC power-flow outputs plus Gaussian measurement noise.
"""

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import pandas as pd

from gp_ccopf.errors import (
    ConfigError,
    DegenerateCase,
    NonConvergence,
    SingularJacobian,
    TooManyFailures,
    ValidationError,
)
from gp_ccopf.grid.case import GridCase
from gp_ccopf.grid.outputs import OutputSpec, extract_outputs
from gp_ccopf.grid.powerflow import BusInjections, PfOptions, solve_ac_pf
from gp_ccopf.guards.balance import BalanceGuard

logger = logging.getLogger("gp_ccopf.dataset")

DEFAULT_NOISE_SIGMA = 1e-4
MAX_FAILURE_RATE = 0.2
MAX_ATTEMPTS_PER_ROW = 50
CSV_FLOAT_FORMAT = "%.17g"


@dataclass(frozen=True)
class LogNormal:
    """Log-normal factor given by the mean and std-dev of its underlying normal."""

    mu: float = 0.0
    sigma: float = 0.0


@dataclass(frozen=True)
class SamplingConfig:
    load_corr: LogNormal = LogNormal(-1.0, 0.1)
    load_uncorr: LogNormal = LogNormal(1.0, 0.05)
    res_corr: LogNormal = LogNormal(-1.0, 0.4)
    res_uncorr: LogNormal = LogNormal(1.0, 0.3)
    psi_range: tuple[float, float] = (0.8, 1.2)
    loss_factor: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.psi_range
        if not hi >= lo > 0:
            raise ConfigError("psi_range must satisfy hi >= lo > 0", {"psi_range": [lo, hi]})
        for name in ("load_corr", "load_uncorr", "res_corr", "res_uncorr"):
            if getattr(self, name).sigma < 0:
                raise ConfigError(f"{name}.sigma must be >= 0", {"field": name})
        if self.loss_factor is not None and self.loss_factor <= 0:
            raise ConfigError("loss_factor must be > 0", {"loss_factor": self.loss_factor})

    def to_document(self) -> dict[str, Any]:
        doc = asdict(self)
        doc["psi_range"] = list(self.psi_range)
        return doc

    @classmethod
    def from_document(cls, doc: dict[str, Any]) -> "SamplingConfig":
        kwargs = dict(doc)
        for name in ("load_corr", "load_uncorr", "res_corr", "res_uncorr"):
            if name in kwargs:
                kwargs[name] = LogNormal(**kwargs[name])
        if "psi_range" in kwargs:
            kwargs["psi_range"] = tuple(kwargs["psi_range"])
        return cls(**kwargs)


def input_labels(case: GridCase) -> list[str]:
    """Column annotations ``u_<bus>``, ``pl_<bus>``, ``prs_<bus>`` (suffixed when repeated)."""
    raw = (
        [f"u_{case.generators[k].bus}" for k in case.controllable]
        + [f"pl_{ld.bus}" for ld in case.loads]
        + [f"prs_{rs.bus}" for rs in case.renewables]
    )
    seen: dict[str, int] = {}
    labels = []
    for label in raw:
        count = seen.get(label, 0)
        seen[label] = count + 1
        labels.append(label if count == 0 else f"{label}_{count}")
    return labels


def row_fingerprints(X: np.ndarray) -> set[str]:
    """One sha256 per input row; used to check that two datasets share no rows."""
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    return {hashlib.sha256(row.tobytes()).hexdigest() for row in X}


# -- sampling ---------------------------------------------------------------

def sample_injections(
    case: GridCase,
    cfg: SamplingConfig,
    n: int,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """
    Draw load and renewable active powers.

    Args:
        case: Network with reference injections
        cfg: Log-normal factor parameters
        n: Number of rows
        rng: Random generator; defaults to one seeded with ``cfg.seed``

    Returns:
        ``(n, n_L + n_R)`` matrix ordered ``[loads, renewables]``
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    n_l, n_r = len(case.loads), len(case.renewables)

    eta_corr = rng.lognormal(cfg.load_corr.mu, cfg.load_corr.sigma, size=(n, 1))
    eta_uncorr = rng.lognormal(cfg.load_uncorr.mu, cfg.load_uncorr.sigma, size=(n, n_l))
    nu_corr = rng.lognormal(cfg.res_corr.mu, cfg.res_corr.sigma, size=(n, 1))
    nu_uncorr = rng.lognormal(cfg.res_uncorr.mu, cfg.res_uncorr.sigma, size=(n, n_r))

    loads = eta_corr * eta_uncorr * case.p_load_ref
    res = nu_corr * nu_uncorr * case.p_res_ref
    return np.hstack([loads, res])


def sample_generation(
    case: GridCase,
    cfg: SamplingConfig,
    load_row: np.ndarray,
    res_row: np.ndarray,
    rng: Optional[np.random.Generator] = None,
    psi: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Draw controllable generation for one row of loads and renewables.

    Step one jitters the reference dispatch by ``psi ~ U[lo, hi]`` per unit and
    scales it to the loss-adjusted load; step two rescales so that the balance
    identity holds exactly.

    Raises:
        DegenerateCase: the jittered dispatch sums to zero
    """
    rho = cfg.loss_factor if cfg.loss_factor is not None else case.loss_factor
    u_ref = case.u_ref
    total_ref = float(u_ref.sum()) + case.fixed_generation
    if total_ref == 0:
        raise DegenerateCase("Reference generation sums to zero", {"case": case.name})

    if psi is None:
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        lo, hi = cfg.psi_range
        psi = rng.uniform(lo, hi, size=case.n_u)
    load_total = float(np.sum(load_row))

    draft = psi * rho * (load_total / total_ref) * u_ref
    draft_total = float(draft.sum())
    if draft_total == 0:
        raise DegenerateCase("Jittered generation sums to zero", {"load_total": load_total})

    target = rho * load_total - float(np.sum(res_row)) - case.fixed_generation
    return draft * (target / draft_total)


# -- dataset ----------------------------------------------------------------

@dataclass
class Dataset:
    """Input/output samples with column annotations and provenance."""

    X: np.ndarray
    Y: np.ndarray
    x_labels: list[str]
    y_labels: list[str]
    seed: int
    case_fingerprint: str
    config: dict = field(default_factory=dict)
    output_spec: list = field(default_factory=list)
    report: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValidationError(
                "X and Y row counts differ",
                {"x_rows": self.X.shape[0], "y_rows": self.Y.shape[0]},
            )

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.X, dtype=np.float64).tobytes())
        digest.update(np.ascontiguousarray(self.Y, dtype=np.float64).tobytes())
        return digest.hexdigest()

    def subset(self, rows: np.ndarray) -> "Dataset":
        return replace(self, X=self.X[rows], Y=self.Y[rows], report=dict(self.report))

    def split(self, n_train: int, seed: int = 0) -> tuple["Dataset", "Dataset"]:
        """Random disjoint (train, validation) split."""
        if not 0 < n_train < self.n:
            raise ValueError(f"n_train must lie in (0, {self.n})")
        order = np.random.default_rng(seed).permutation(self.n)
        return self.subset(np.sort(order[:n_train])), self.subset(np.sort(order[n_train:]))

    def save(self, directory: Union[str, Path], stem: str = "dataset") -> Path:
        """Write ``<stem>.csv`` and the ``<stem>.json`` sidecar; returns the CSV path."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        csv_path = directory / f"{stem}.csv"
        frame = pd.DataFrame(np.hstack([self.X, self.Y]), columns=self.x_labels + self.y_labels)
        frame.to_csv(csv_path, index=False, float_format=CSV_FLOAT_FORMAT)
        meta = {
            "seed": self.seed,
            "case_fingerprint": self.case_fingerprint,
            "n_x": len(self.x_labels),
            "n_y": len(self.y_labels),
            "rows": self.n,
            "config": self.config,
            "output_spec": self.output_spec,
            "report": self.report,
        }
        csv_path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        return csv_path

    @classmethod
    def load(cls, csv_path: Union[str, Path]) -> "Dataset":
        csv_path = Path(csv_path)
        meta = json.loads(csv_path.with_suffix(".json").read_text())
        frame = pd.read_csv(csv_path, float_precision="round_trip")
        values = frame.to_numpy(dtype=float)
        n_x = meta["n_x"]
        labels = list(frame.columns)
        return cls(
            X=values[:, :n_x],
            Y=values[:, n_x:],
            x_labels=labels[:n_x],
            y_labels=labels[n_x:],
            seed=meta["seed"],
            case_fingerprint=meta["case_fingerprint"],
            config=meta.get("config", {}),
            output_spec=meta.get("output_spec", []),
            report=meta.get("report", {}),
        )


@dataclass(frozen=True)
class _RowResult:
    x: np.ndarray
    y: np.ndarray
    failures: int


def _label_row(
    case: GridCase,
    cfg: SamplingConfig,
    row: int,
    spec: OutputSpec,
    noise_sigma: float,
    pf_options: PfOptions,
) -> _RowResult:
    n_l = len(case.loads)
    failures = 0
    for attempt in range(MAX_ATTEMPTS_PER_ROW):
        rng = np.random.default_rng([cfg.seed, row, attempt])
        injections = sample_injections(case, cfg, 1, rng)[0]
        load_row, res_row = injections[:n_l], injections[n_l:]
        u = sample_generation(case, cfg, load_row, res_row, rng)
        try:
            sol = solve_ac_pf(case, BusInjections.from_case(case, u, load_row, res_row), pf_options)
        except (NonConvergence, SingularJacobian) as e:
            failures += 1
            logger.warning("Row %d attempt %d: power flow failed (%s); resampling", row, attempt, e.message)
            continue
        y = extract_outputs(case, sol, spec)
        y = y + rng.normal(0.0, noise_sigma, size=y.shape)
        return _RowResult(np.concatenate([u, injections]), y, failures)
    raise TooManyFailures(
        f"Row {row}: power flow failed on {MAX_ATTEMPTS_PER_ROW} consecutive draws",
        {"row": row, "failures": failures},
    )


def build_dataset(
    case: GridCase,
    cfg: SamplingConfig,
    n: int,
    output_spec: Optional[OutputSpec] = None,
    noise_sigma: float = DEFAULT_NOISE_SIGMA,
    workers: int = 1,
    pf_options: Optional[PfOptions] = None,
) -> Dataset:
    """
    Sample and label ``n`` operating points.

    Each row draws from its own stream seeded with ``(seed, row, attempt)``, so
    the dataset does not depend on ``workers``. Rows whose power flow fails
    are redrawn.

    Raises:
        TooManyFailures: more than 20% of attempted draws failed
        DegenerateCase: the case has no generation to scale
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    spec = output_spec or OutputSpec.default(case)
    pf_options = pf_options or PfOptions()
    logger.info("Generating %d samples for %s (%d inputs, %d outputs)", n, case.name, case.n_x, spec.n_y)

    def label(row: int) -> _RowResult:
        return _label_row(case, cfg, row, spec, noise_sigma, pf_options)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(label, range(n)))
    else:
        results = [label(row) for row in range(n)]

    dropped = sum(r.failures for r in results)
    attempted = n + dropped
    if dropped > MAX_FAILURE_RATE * attempted:
        raise TooManyFailures(
            f"{dropped} of {attempted} sampled points failed to solve",
            {"attempted": attempted, "dropped": dropped},
        )

    X = np.vstack([r.x for r in results])
    Y = np.vstack([r.y for r in results])

    rho = cfg.loss_factor if cfg.loss_factor is not None else case.loss_factor
    check = BalanceGuard().verify(case, X, rho)
    if not check.verified:
        raise ValidationError(check.error, check.details)

    report = {"attempted": attempted, "accepted": n, "dropped": dropped}
    logger.info("Dataset ready: %d rows, %d resampled after power-flow failures", n, dropped)
    return Dataset(
        X=X,
        Y=Y,
        x_labels=input_labels(case),
        y_labels=spec.labels,
        seed=cfg.seed,
        case_fingerprint=case.fingerprint,
        config={**cfg.to_document(), "noise_sigma": noise_sigma},
        output_spec=spec.to_document(),
        report=report,
    )
