"""Moment covariance estimators and GMM weighting matrices."""

from dataclasses import dataclass

import numpy as np

from .errors import ConditioningError, InsufficientDataError, ParameterError

__all__ = [
    "CovarianceEstimate",
    "covariance_iid",
    "covariance_hac",
    "newey_west_lags",
    "estimate_covariance",
    "theoretical_iid_sigma",
    "efficient_weight",
    "instrument_weight",
]


def _sym(a):
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class CovarianceEstimate:
    """Estimated covariance of the per-observation moment vector.

    Attributes
    ----------
    sigma : ndarray
        Symmetric (k, k) matrix.
    method : {"iid", "bartlett_hac"}
    lags : int
        Bartlett truncation lag; 0 for the iid estimator.
    """

    sigma: np.ndarray
    method: str = "iid"
    lags: int = 0


def _per_obs(g):
    g = np.asarray(g, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    if g.shape[0] < 2:
        raise InsufficientDataError(f"need at least 2 observations, got {g.shape[0]}")
    return g


def covariance_iid(per_obs_moments):
    """Uncentred outer-product average ``(1/n) sum_i g_i g_i'``."""
    g = _per_obs(per_obs_moments)
    return CovarianceEstimate(_sym(g.T @ g / g.shape[0]), "iid", 0)


def newey_west_lags(n):
    """Default truncation lag floor(4 (n/100)^(2/9))."""
    return int(np.floor(4.0 * (n / 100.0) ** (2.0 / 9.0)))


def covariance_hac(per_obs_moments, lags=None):
    """Bartlett-kernel long-run covariance of the moment sequence.

    Rows of ``per_obs_moments`` are taken to be in time order. With
    ``lags=0`` this is identical to :func:`covariance_iid`.
    """
    g = _per_obs(per_obs_moments)
    n = g.shape[0]
    if lags is None:
        lags = newey_west_lags(n)
    lags = int(lags)
    if not 0 <= lags < n:
        raise ParameterError(f"lags must lie in [0, {n}), got {lags}")
    sigma = g.T @ g / n
    for lag in range(1, lags + 1):
        gamma = g[lag:].T @ g[:-lag] / n
        sigma = sigma + (1.0 - lag / (lags + 1.0)) * (gamma + gamma.T)
    return CovarianceEstimate(_sym(sigma), "bartlett_hac", lags)


def estimate_covariance(per_obs_moments, method="iid", lags=None):
    """Dispatch on ``method`` ("iid" or "hac"/"bartlett_hac")."""
    if method == "iid":
        return covariance_iid(per_obs_moments)
    if method in ("hac", "bartlett_hac"):
        return covariance_hac(per_obs_moments, lags)
    raise ParameterError(f"unknown covariance method {method!r}")


def theoretical_iid_sigma(tau, data):
    """tau (1 - tau) times the sample second moment of the stacked instruments.

    This is the moment covariance implied by a correctly specified
    conditional quantile restriction with iid data; it serves as an oracle.
    """
    if not 0.0 < tau < 1.0:
        raise ParameterError(f"tau must lie in (0, 1), got {tau}")
    z = data.stacked_instruments()
    return _sym(tau * (1.0 - tau) * (z.T @ z) / data.n)


def instrument_weight(data):
    """Block-diagonal inverse instrument second-moment matrix.

    Divided by tau (1 - tau) this is the inverse of the moment covariance
    when each choice satisfies its quantile restriction and the choices'
    indicators are independent. The initial estimator uses it so that the
    objective does not favour extreme tau, where the moment variance
    shrinks.
    """
    k = data.n_moments
    out = np.zeros((k, k))
    d = data.d_z
    for j, b in enumerate(data.choices):
        zz = b.Z.T @ b.Z / data.n
        try:
            out[j * d:(j + 1) * d, j * d:(j + 1) * d] = np.linalg.inv(zz)
        except np.linalg.LinAlgError:
            raise ConditioningError(f"choice {j}: instrument second-moment matrix is singular") from None
    return _sym(out)


def efficient_weight(cov, ridge=None, max_condition=1e9):
    """Inverse of ``sigma + ridge * I`` via a symmetric eigendecomposition.

    Parameters
    ----------
    cov : CovarianceEstimate or ndarray
    ridge : float, optional
        Diagonal loading added before inversion. Defaults to
        ``1e-10 * trace(sigma) / dim``.
    max_condition : float
        Largest tolerated condition number after ridging. The default ridge
        alone caps the condition number near 1e10 * dim, so an exactly
        singular covariance always fails this test.

    Raises
    ------
    ConditioningError
        If the ridged matrix is not safely positive definite. The smallest
        eigenvalue is attached to the exception.
    """
    sigma = cov.sigma if isinstance(cov, CovarianceEstimate) else np.asarray(cov, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ParameterError(f"covariance must be square, got shape {sigma.shape}")
    k = sigma.shape[0]
    if ridge is None:
        ridge = 1e-10 * np.trace(sigma) / k
    evals, evecs = np.linalg.eigh(_sym(sigma) + ridge * np.eye(k))
    lo, hi = evals[0], evals[-1]
    if not (lo > 0 and hi / lo < max_condition):
        raise ConditioningError(
            f"moment covariance is numerically singular (smallest eigenvalue {lo:.3e}, "
            f"largest {hi:.3e})",
            min_eigenvalue=float(lo),
        )
    return _sym((evecs / evals) @ evecs.T)
