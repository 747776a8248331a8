"""Squared-exponential ARD kernel and the negative log marginal likelihood."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.spatial.distance import cdist

from gp_ccopf.errors import FactorizationFailure

logger = logging.getLogger("gp_ccopf.gp.kernel")

NOISE_FLOOR = 1e-10
JITTER_STEPS = (1e-10, 1e-8, 1e-6)


@dataclass(frozen=True)
class KernelParams:
    """Signal variance, per-dimension length scales and noise variance.

    The kernel is ``sf2 * exp(-0.5 * (a - b)' diag(lengthscales**2)^-1 (a - b))``.
    """

    sf2: float
    lengthscales: np.ndarray
    sn2: float

    @property
    def lam(self) -> np.ndarray:
        """Diagonal of the length-scale matrix (squared length scales)."""
        return np.asarray(self.lengthscales, dtype=float) ** 2

    @property
    def dim(self) -> int:
        return len(self.lengthscales)

    def to_log(self) -> np.ndarray:
        """Log-parameters ``[log l_1..l_D, log sf2, log sn2]``."""
        return np.concatenate([np.log(self.lengthscales), [np.log(self.sf2), np.log(self.sn2)]])

    @classmethod
    def from_log(cls, theta: np.ndarray) -> "KernelParams":
        theta = np.asarray(theta, dtype=float)
        return cls(sf2=float(np.exp(theta[-2])), lengthscales=np.exp(theta[:-2]), sn2=float(np.exp(theta[-1])))

    def to_document(self) -> dict:
        return {"sf2": self.sf2, "lengthscales": [float(v) for v in self.lengthscales], "sn2": self.sn2}

    @classmethod
    def from_document(cls, doc: dict) -> "KernelParams":
        return cls(sf2=float(doc["sf2"]), lengthscales=np.array(doc["lengthscales"], dtype=float), sn2=float(doc["sn2"]))


def kernel_eval(params: KernelParams, x_i: np.ndarray, x_j: np.ndarray) -> float:
    diff = np.asarray(x_i, dtype=float) - np.asarray(x_j, dtype=float)
    return float(params.sf2 * np.exp(-0.5 * np.sum(diff**2 / params.lam)))


def kernel_matrix(params: KernelParams, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Cross-covariance between the rows of ``A`` and ``B``."""
    ell = np.asarray(params.lengthscales, dtype=float)
    sq = cdist(np.atleast_2d(A) / ell, np.atleast_2d(B) / ell, "sqeuclidean")
    return params.sf2 * np.exp(-0.5 * sq)


def factorize(K: np.ndarray) -> tuple[tuple[np.ndarray, bool], float]:
    """
    Cholesky factor of ``K``, escalating diagonal jitter on failure.

    Jitter steps are 1e-10, 1e-8 and 1e-6 times the mean diagonal.

    Returns:
        ``(cho_factor result, jitter added)``

    Raises:
        FactorizationFailure: the matrix stays indefinite after the last step
    """
    try:
        return cho_factor(K, lower=True), 0.0
    except LinAlgError:
        pass
    scale = float(np.mean(np.diag(K))) if K.size else 1.0
    scale = scale if np.isfinite(scale) and scale > 0 else 1.0
    for step in JITTER_STEPS:
        jitter = step * scale
        try:
            factor = cho_factor(K + jitter * np.eye(K.shape[0]), lower=True)
        except LinAlgError:
            continue
        logger.warning("Gram matrix needed jitter %.1e to factorize", jitter)
        return factor, jitter
    raise FactorizationFailure(
        "Gram matrix is not positive definite after jitter escalation",
        {"size": K.shape[0], "max_jitter": JITTER_STEPS[-1] * scale},
    )


def nll(params: KernelParams, X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """
    Negative log marginal likelihood and its gradient in log-parameter space.

    Args:
        params: Kernel hyperparameters
        X: ``(N, D)`` inputs
        y: ``(N,)`` targets (zero prior mean)

    Returns:
        ``(nll, grad)`` with ``grad`` ordered like :meth:`KernelParams.to_log`

    Raises:
        FactorizationFailure: ``K + sn2 I`` could not be factorized
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n = X.shape[0]

    K = kernel_matrix(params, X, X)
    Ky = K + params.sn2 * np.eye(n)
    (L, lower), _ = factorize(Ky)
    alpha = cho_solve((L, lower), y)

    value = 0.5 * y @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * n * np.log(2 * np.pi)

    W = cho_solve((L, lower), np.eye(n)) - np.outer(alpha, alpha)
    grad = np.empty(params.dim + 2)
    for d in range(params.dim):
        r2 = (X[:, d, None] - X[None, :, d]) ** 2
        grad[d] = 0.5 * np.sum(W * K * r2 / params.lam[d])
    grad[-2] = 0.5 * np.sum(W * K)
    grad[-1] = 0.5 * params.sn2 * np.trace(W)
    return float(value), grad
