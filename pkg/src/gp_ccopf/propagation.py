"""Propagation of Gaussian inputs through fitted GPs.

Three approximations of the output moments under ``x ~ N(mu, Sigma)``:

* ``ta1``: predictive mean at ``mu``; variance plus ``g' Sigma g`` with ``g``
  the gradient of the predictive mean.
* ``ta2``: ``ta1`` plus half the trace of (variance Hessian x Sigma).
* ``em``: exact first and second moments for the SE-ARD kernel.

All three coincide with the plain prediction when ``Sigma = 0``.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.linalg import solve_triangular

from gp_ccopf.errors import IllConditioned, InvalidAlpha, PropagationFailure
from gp_ccopf.gp.model import GpModel, MultiGpModel

logger = logging.getLogger("gp_ccopf.propagation")

METHODS = ("ta1", "ta2", "em")

ALPHA_SUM_TOL = 1e-8
ALPHA_NEG_TOL = 1e-10
SYMMETRY_TOL = 1e-12
PSD_TOL = 1e-10
MAX_LOG_MOMENT = 700.0

Model = Union[GpModel, MultiGpModel]


def _members(model: Model) -> list[GpModel]:
    return model.models if isinstance(model, MultiGpModel) else [model]


@dataclass(frozen=True)
class InputDistribution:
    """Gaussian input ``N(mean, cov)`` with ``mean = [u, p_l, p_rs]``."""

    mean: np.ndarray
    cov: np.ndarray
    n_u: Optional[int] = None

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        if cov.shape != (mean.size, mean.size):
            raise PropagationFailure(
                "Covariance shape does not match the mean",
                {"mean": mean.size, "cov": list(cov.shape)},
            )
        scale = max(1.0, float(np.max(np.abs(cov)))) if cov.size else 1.0
        if np.max(np.abs(cov - cov.T), initial=0.0) > SYMMETRY_TOL * scale:
            raise PropagationFailure("Input covariance is not symmetric")
        if cov.size and np.linalg.eigvalsh(cov).min() < -PSD_TOL * scale:
            raise PropagationFailure("Input covariance is not positive semidefinite")


@dataclass(frozen=True)
class PropagatedOutput:
    mean: np.ndarray
    var: np.ndarray
    method: str
    fallback: bool = False
    details: dict = field(default_factory=dict)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var)


def assemble_input_cov(
    alpha: np.ndarray,
    sigma_w: np.ndarray,
    signs: Optional[np.ndarray] = None,
    check: bool = True,
) -> np.ndarray:
    """
    Covariance of ``(u + alpha * Omega, omega)`` for independent fluctuations.

    ``Omega = sum(signs * omega)``; with ``T = sum(sigma_w**2)`` the blocks are
    ``T alpha alpha'``, ``alpha (signs * sigma_w**2)'`` and ``diag(sigma_w**2)``.

    The blocks are a valid covariance for any alpha; ``check=False`` skips
    the simplex test for optimizer iterates that are not yet on it.

    Raises:
        InvalidAlpha: alpha has negative entries or does not sum to one
    """
    alpha = np.asarray(alpha, dtype=float).ravel()
    sigma_w = np.asarray(sigma_w, dtype=float).ravel()
    if check and (np.any(alpha < -ALPHA_NEG_TOL) or abs(alpha.sum() - 1.0) > ALPHA_SUM_TOL):
        raise InvalidAlpha(
            "Participation factors must be nonnegative and sum to one",
            {"alpha": alpha.tolist(), "sum": float(alpha.sum())},
        )
    if np.any(sigma_w < 0):
        raise ValueError("sigma_w must be nonnegative")
    signs = np.ones_like(sigma_w) if signs is None else np.asarray(signs, dtype=float).ravel()

    var_w = sigma_w**2
    total = var_w.sum()
    n_u = alpha.size
    cov = np.zeros((n_u + var_w.size, n_u + var_w.size))
    cov[:n_u, :n_u] = total * np.outer(alpha, alpha)
    cross = np.outer(alpha, signs * var_w)
    cov[:n_u, n_u:] = cross
    cov[n_u:, :n_u] = cross.T
    cov[n_u:, n_u:] = np.diag(var_w)
    return cov


def ta_mean(model: Model, mu: np.ndarray) -> np.ndarray:
    mu = np.asarray(mu, dtype=float).ravel()
    return np.array([m.predict(mu)[0] for m in _members(model)])


def ta1_variance(model: Model, mu: np.ndarray, cov: np.ndarray) -> np.ndarray:
    mu = np.asarray(mu, dtype=float).ravel()
    out = []
    for m in _members(model):
        g = m.mean_gradient(mu)
        out.append(m.predict(mu)[1] + g @ cov @ g)
    return np.maximum(np.array(out), 0.0)


def ta2_variance(model: Model, mu: np.ndarray, cov: np.ndarray) -> np.ndarray:
    mu = np.asarray(mu, dtype=float).ravel()
    first = ta1_variance(model, mu, cov)
    curvature = np.array([0.5 * np.sum(m.variance_hessian(mu) * cov) for m in _members(model)])
    return np.maximum(first + curvature, 0.0)


def _em_single(model: GpModel, mu: np.ndarray, cov: np.ndarray) -> tuple[float, float]:
    # Cov[k(x)] = Q - q q' is formed entrywise as q_i q_j expm1(s_ij).
    params = model.params
    lam = params.lam
    mu_s = model.standardize(mu)
    cov_s = cov / np.outer(model.x_scale, model.x_scale)
    nu = model.Xs - mu_s
    dim = lam.size

    sign_b, logdet_b = np.linalg.slogdet(cov_s / lam[None, :] + np.eye(dim))
    R = 2.0 * cov_s / lam[None, :] + np.eye(dim)
    sign_r, logdet_r = np.linalg.slogdet(R)
    if sign_b <= 0 or sign_r <= 0 or not np.isfinite(logdet_b + logdet_r):
        raise IllConditioned(
            "Moment-matching determinant factor is not positive",
            {"logdet_b": float(logdet_b), "logdet_r": float(logdet_r)},
        )

    a = nu / lam
    spread = np.linalg.solve(cov_s + np.diag(lam), nu.T).T
    # nu' (Lambda^-1 - (Sigma + Lambda)^-1) nu = a' Sigma (Sigma + Lambda)^-1 nu
    t = np.sum((a @ cov_s) * spread, axis=1)
    log_k = np.log(params.sf2) - 0.5 * np.sum(nu * a, axis=1)
    log_q = log_k - 0.5 * logdet_b + 0.5 * t
    q = np.exp(log_q)
    mean_c = float(q @ model.beta)

    M = np.linalg.solve(R, cov_s)
    G = a @ (0.5 * (M + M.T)) @ a.T
    d = np.diag(G)
    s = (logdet_b - 0.5 * logdet_r) + 0.5 * (d[:, None] + d[None, :]) + G - 0.5 * (t[:, None] + t[None, :])
    if not np.all(np.isfinite(s)) or np.max(log_q[:, None] + log_q[None, :] + s) > MAX_LOG_MOMENT:
        raise IllConditioned("Moment-matching cross term overflowed", {"max_s": float(np.max(s))})
    E = np.expm1(s)

    w = model.beta * q
    mean_var = float(w @ E @ w)
    v = solve_triangular(model.L, q, lower=True)
    W = solve_triangular(model.L, np.outer(q, q) * E, lower=True)
    W = solve_triangular(model.L, W.T, lower=True)
    expected_var = params.sf2 - float(v @ v) - float(np.trace(W))
    variance = max(expected_var + mean_var, 0.0)
    return mean_c + model.y_mean, variance


def em_moments(model: Model, mu: np.ndarray, cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Exact moments of the GP output under Gaussian input.

    Raises:
        IllConditioned: a determinant factor under- or overflowed
    """
    mu = np.asarray(mu, dtype=float).ravel()
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    moments = [_em_single(m, mu, cov) for m in _members(model)]
    return np.array([mean for mean, _ in moments]), np.array([var for _, var in moments])


def propagate(model: Model, dist: InputDistribution, method: str = "ta1") -> PropagatedOutput:
    """
    Output moments by the named method.

    ``em`` falls back to ``ta2`` (with ``fallback=True``) when ill-conditioned.

    Raises:
        PropagationFailure: unknown method or non-finite moments
    """
    method = method.lower()
    fallback = False
    details: dict = {}
    if method == "ta1":
        mean, var = ta_mean(model, dist.mean), ta1_variance(model, dist.mean, dist.cov)
    elif method == "ta2":
        mean, var = ta_mean(model, dist.mean), ta2_variance(model, dist.mean, dist.cov)
    elif method == "em":
        try:
            mean, var = em_moments(model, dist.mean, dist.cov)
        except IllConditioned as e:
            logger.warning("Moment matching ill-conditioned (%s); using second-order Taylor", e.message)
            mean, var = ta_mean(model, dist.mean), ta2_variance(model, dist.mean, dist.cov)
            fallback = True
            details = dict(e.details)
    else:
        raise PropagationFailure(f"Unknown propagation method '{method}'", {"methods": list(METHODS)})

    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(var))):
        raise PropagationFailure("Propagated moments are not finite", {"method": method})
    return PropagatedOutput(mean=mean, var=var, method=method, fallback=fallback, details=details)


@dataclass(frozen=True)
class MonteCarloMoments:
    mean: np.ndarray
    var: np.ndarray
    mean_se: np.ndarray
    var_se: np.ndarray


def mc_moments(model: Model, dist: InputDistribution, n: int = 100_000, seed: int = 0) -> MonteCarloMoments:
    """
    Monte-Carlo estimate of the output moments under Gaussian input.

    Combines the sampled predictive means and variances by the law of total
    variance; the standard errors refer to those estimates.
    """
    rng = np.random.default_rng(seed)
    draws = rng.multivariate_normal(dist.mean, dist.cov, size=n, method="eigh")
    means, var_se, mean_se, variances = [], [], [], []
    for m in _members(model):
        mu, var = m.predict(draws)
        m_hat = mu.mean()
        w = var + (mu - m_hat) ** 2
        means.append(m_hat)
        mean_se.append(mu.std(ddof=1) / np.sqrt(n))
        variances.append(w.mean())
        var_se.append(w.std(ddof=1) / np.sqrt(n))
    return MonteCarloMoments(np.array(means), np.array(variances), np.array(mean_se), np.array(var_se))
