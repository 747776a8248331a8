"""Fitted Gaussian-process models.

One independent GP per output. Inputs are standardized per column and
targets centered before fitting; predictions and derivatives are reported in
the original units.
"""

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from gp_ccopf.errors import AllRestartsFailed, FactorizationFailure
from gp_ccopf.gp.kernel import NOISE_FLOOR, KernelParams, factorize, kernel_matrix, nll

logger = logging.getLogger("gp_ccopf.gp")

LOG_ELL_BOUNDS = (np.log(1e-3), np.log(1e3))
LOG_SF2_BOUNDS = (np.log(1e-12), np.log(1e4))
LOG_SN2_BOUNDS = (np.log(NOISE_FLOOR), np.log(1e4))


@dataclass(frozen=True)
class FitOptions:
    restarts: int = 5
    max_evals: int = 500
    init_spread: float = 1.0
    seed: int = 0


@dataclass(eq=False)
class GpModel:
    """Single-output GP with a cached Cholesky factor.

    ``X`` and ``y`` are the raw training data; ``params`` act on standardized
    inputs ``(x - x_mean) / x_scale`` and centered targets ``y - y_mean``.
    """

    params: KernelParams
    X: np.ndarray
    y: np.ndarray
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    nll: float = float("nan")
    jitter: float = 0.0
    L: np.ndarray = field(init=False, repr=False)
    beta: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.x_mean = np.asarray(self.x_mean, dtype=float)
        self.x_scale = np.asarray(self.x_scale, dtype=float)
        self.Xs = self.standardize(self.X)
        Ky = kernel_matrix(self.params, self.Xs, self.Xs) + self.params.sn2 * np.eye(self.n)
        (factor, _), self.jitter = factorize(Ky)
        self.L = np.tril(factor)
        self.beta = cho_solve((self.L, True), self.y - self.y_mean)

    # -- construction -----------------------------------------------------------

    @classmethod
    def from_params(
        cls,
        X: np.ndarray,
        y: np.ndarray,
        params: KernelParams,
        standardize: bool = False,
        center: bool = False,
    ) -> "GpModel":
        """Model with given hyperparameters, no fitting."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        x_mean, x_scale = _standardization(X) if standardize else (np.zeros(X.shape[1]), np.ones(X.shape[1]))
        y_mean = float(np.mean(y)) if center else 0.0
        return cls(params=params, X=X, y=y, x_mean=x_mean, x_scale=x_scale, y_mean=y_mean)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.x_mean) / self.x_scale

    # -- prediction -------------------------------------------------------------

    def predict(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """
        Predictive mean and variance at one point or a batch of points.

        Returns:
            ``(mean, variance)``; scalars for a 1-D ``x``, arrays for 2-D
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xs = self.standardize(np.atleast_2d(x))
        k = kernel_matrix(self.params, self.Xs, xs)
        mean = k.T @ self.beta + self.y_mean
        v = solve_triangular(self.L, k, lower=True)
        var = np.maximum(self.params.sf2 - np.sum(v * v, axis=0), 0.0)
        if single:
            return float(mean[0]), float(var[0])
        return mean, var

    def _local(self, x: np.ndarray):
        xs = self.standardize(x)
        k = kernel_matrix(self.params, self.Xs, xs[None, :])[:, 0]
        U = (self.Xs - xs) / self.params.lam
        return k, U

    def mean_gradient(self, x: np.ndarray) -> np.ndarray:
        k, U = self._local(np.asarray(x, dtype=float))
        return (U.T @ (k * self.beta)) / self.x_scale

    def variance_gradient(self, x: np.ndarray) -> np.ndarray:
        k, U = self._local(np.asarray(x, dtype=float))
        c = cho_solve((self.L, True), k)
        J = k[:, None] * U
        return (-2.0 * J.T @ c) / self.x_scale

    def mean_hessian(self, x: np.ndarray) -> np.ndarray:
        k, U = self._local(np.asarray(x, dtype=float))
        w = self.beta * k
        H = U.T @ (w[:, None] * U) - np.sum(w) * np.diag(1.0 / self.params.lam)
        return H / np.outer(self.x_scale, self.x_scale)

    def variance_hessian(self, x: np.ndarray) -> np.ndarray:
        k, U = self._local(np.asarray(x, dtype=float))
        c = cho_solve((self.L, True), k)
        J = k[:, None] * U
        A_J = cho_solve((self.L, True), J)
        w = c * k
        H = -2.0 * (J.T @ A_J + U.T @ (w[:, None] * U) - np.sum(w) * np.diag(1.0 / self.params.lam))
        return H / np.outer(self.x_scale, self.x_scale)

    # -- serialization ----------------------------------------------------------

    def to_document(self) -> dict:
        return {
            "params": self.params.to_document(),
            "y_mean": self.y_mean,
            "nll": self.nll,
        }


def _standardization(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    return mean, scale


def _objective(theta: np.ndarray, Xs: np.ndarray, yc: np.ndarray) -> tuple[float, np.ndarray]:
    try:
        value, grad = nll(KernelParams.from_log(theta), Xs, yc)
    except FactorizationFailure:
        return 1e25, np.zeros_like(theta)
    if not np.isfinite(value):
        return 1e25, np.zeros_like(theta)
    return value, grad


def fit(X: np.ndarray, y: np.ndarray, options: Optional[FitOptions] = None) -> GpModel:
    """
    Fit hyperparameters by multi-restart L-BFGS-B on the NLL.

    The first start uses unit length scales (inputs are standardized), the
    target variance as signal variance and 1e-4 of it as noise; further
    starts perturb that point uniformly by ``init_spread`` in log space.

    Raises:
        AllRestartsFailed: no start reached a finite likelihood
    """
    options = options or FitOptions()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    x_mean, x_scale = _standardization(X)
    Xs = (X - x_mean) / x_scale
    y_mean = float(np.mean(y))
    yc = y - y_mean

    variance = max(float(np.var(yc)), 1e-12)
    dim = X.shape[1]
    theta0 = np.concatenate([np.zeros(dim), [np.log(variance), np.log(max(1e-4 * variance, NOISE_FLOOR))]])
    bounds = [LOG_ELL_BOUNDS] * dim + [LOG_SF2_BOUNDS, LOG_SN2_BOUNDS]
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])

    rng = np.random.default_rng(options.seed)
    best_theta, best_value = None, np.inf
    for restart in range(max(options.restarts, 1)):
        start = theta0 if restart == 0 else theta0 + rng.uniform(-options.init_spread, options.init_spread, theta0.size)
        start = np.clip(start, lo, hi)
        result = minimize(
            _objective,
            start,
            args=(Xs, yc),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxfun": options.max_evals},
        )
        value = float(result.fun)
        logger.debug("Restart %d: nll %.6g (%s)", restart, value, result.message)
        if np.isfinite(value) and value < 1e25 and value < best_value:
            best_theta, best_value = result.x, value

    if best_theta is None:
        raise AllRestartsFailed(
            f"All {options.restarts} restarts failed", {"restarts": options.restarts, "n": len(y)}
        )

    params = KernelParams.from_log(best_theta)
    return GpModel(params=params, X=X, y=y, x_mean=x_mean, x_scale=x_scale, y_mean=y_mean, nll=best_value)


def training_fingerprint(X: np.ndarray, Y: np.ndarray) -> str:
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(X, dtype=np.float64).tobytes())
    digest.update(np.ascontiguousarray(Y, dtype=np.float64).tobytes())
    return digest.hexdigest()


@dataclass(eq=False)
class MultiGpModel:
    """Independent GPs sharing one training input matrix."""

    models: list[GpModel]
    x_labels: list[str] = field(default_factory=list)
    y_labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.models:
            X0 = self.models[0].X
            for m in self.models[1:]:
                if m.X.shape != X0.shape or not np.array_equal(m.X, X0):
                    raise ValueError("All output models must share the same training inputs")

    @property
    def n_y(self) -> int:
        return len(self.models)

    @property
    def n_x(self) -> int:
        return self.models[0].dim

    @property
    def X(self) -> np.ndarray:
        return self.models[0].X

    @property
    def Y(self) -> np.ndarray:
        return np.column_stack([m.y for m in self.models])

    @property
    def fingerprint(self) -> str:
        return training_fingerprint(self.X, self.Y)

    def predict(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Means and (diagonal) variances, one entry per output, at a single point."""
        x = np.asarray(x, dtype=float).ravel()
        moments = [m.predict(x) for m in self.models]
        return np.array([mu for mu, _ in moments]), np.array([var for _, var in moments])

    def predict_batch(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``(n_points, n_y)`` means and variances."""
        X = np.atleast_2d(X)
        moments = [m.predict(X) for m in self.models]
        return np.column_stack([mu for mu, _ in moments]), np.column_stack([var for _, var in moments])

    def to_document(self) -> dict:
        first = self.models[0]
        return {
            "format": "gp-ccopf-model/1",
            "x_labels": self.x_labels,
            "y_labels": self.y_labels,
            "x_mean": first.x_mean.tolist(),
            "x_scale": first.x_scale.tolist(),
            "training_fingerprint": self.fingerprint,
            "X": self.X.tolist(),
            "Y": self.Y.tolist(),
            "outputs": [m.to_document() for m in self.models],
        }

    @classmethod
    def from_document(cls, doc: dict) -> "MultiGpModel":
        X = np.array(doc["X"], dtype=float)
        Y = np.array(doc["Y"], dtype=float).reshape(X.shape[0], -1)
        x_mean = np.array(doc["x_mean"], dtype=float)
        x_scale = np.array(doc["x_scale"], dtype=float)
        models = [
            GpModel(
                params=KernelParams.from_document(out["params"]),
                X=X,
                y=Y[:, a],
                x_mean=x_mean,
                x_scale=x_scale,
                y_mean=float(out["y_mean"]),
                nll=float(out.get("nll", float("nan"))),
            )
            for a, out in enumerate(doc["outputs"])
        ]
        return cls(models=models, x_labels=list(doc.get("x_labels", [])), y_labels=list(doc.get("y_labels", [])))

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_document(), indent=1))
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "MultiGpModel":
        return cls.from_document(json.loads(Path(path).read_text()))


def fit_multi(
    X: np.ndarray,
    Y: np.ndarray,
    options: Optional[FitOptions] = None,
    workers: int = 1,
    x_labels: Sequence[str] = (),
    y_labels: Sequence[str] = (),
) -> MultiGpModel:
    """
    Fit one GP per column of ``Y``.

    Outputs are fitted independently (in a thread pool when ``workers > 1``)
    and collected in column order.

    Raises:
        AllRestartsFailed: lists every output that failed in ``details["outputs"]``
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1)
    labels = list(y_labels) or [f"y{a}" for a in range(Y.shape[1])]
    logger.info("Fitting %d output GPs on %d samples x %d inputs", Y.shape[1], X.shape[0], X.shape[1])

    def fit_one(a: int):
        try:
            return fit(X, Y[:, a], options)
        except AllRestartsFailed as e:
            return e

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(fit_one, range(Y.shape[1])))
    else:
        results = [fit_one(a) for a in range(Y.shape[1])]

    failed = [labels[a] for a, r in enumerate(results) if isinstance(r, Exception)]
    if failed:
        raise AllRestartsFailed(f"{len(failed)} output(s) failed to fit", {"outputs": failed})
    return MultiGpModel(models=list(results), x_labels=list(x_labels), y_labels=labels)
