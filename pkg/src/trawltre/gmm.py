"""Method-of-moments baseline: ACF matching for the kernel, moment matching for the marginal.

Both fits use identity weights. The kernel parameters minimize the squared
distance between empirical and model autocorrelations at lags ``1..K``; the
marginal NIG parameters minimize the squared distance between the empirical
and model (mean, sd, skewness, excess kurtosis).
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize, minimize_scalar
from sklearn.base import BaseEstimator

from .distributions import Nig3Params, nig3_moments
from .exceptions import ConvergenceError, DegenerateError, DomainError, ParameterError
from .trawl import KernelFamily, TimeSeries, _acf_raw

__all__ = [
    "GmmConfig",
    "empirical_acf",
    "empirical_moments",
    "fit_acf_params",
    "fit_marginal_params",
    "GMMEstimator",
    "DEFAULT_KERNEL_BOUNDS",
]

DEFAULT_KERNEL_BOUNDS = {
    KernelFamily.INVERSE_GAUSSIAN: ((10.0, 20.0), (10.0, 20.0)),
    KernelFamily.EXPONENTIAL: ((1e-3, 10.0),),
}
_BETA_BOUNDS = (-5.0, 5.0)


@dataclass(frozen=True)
class GmmConfig:
    """Lag count ``K`` and moment count ``J`` of the identity-weight objectives."""

    K: int = 35
    J: int = 4
    weight: str = "identity"

    def __post_init__(self):
        if self.K < 1 or not 2 <= self.J <= 4:
            raise ParameterError("need K >= 1 and 2 <= J <= 4")
        if self.weight != "identity":
            raise ParameterError("only identity weighting is supported")


def _values(series):
    x = series.values if isinstance(series, TimeSeries) else np.asarray(series, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise DomainError("series has non-finite values")
    return x


def empirical_acf(series, K):
    """Sample autocorrelations at lags ``1..K`` with the biased (``1/n``) denominator.

    Examples
    --------
    >>> float(empirical_acf([1.0, -1.0] * 50, 1)[0]) < -0.98
    True
    """
    x = _values(series)
    K = int(K)
    if x.size <= K + 1:
        raise DomainError(f"series of length {x.size} is too short for {K} lags")
    xc = x - x.mean()
    c0 = xc @ xc
    if not c0 > 0:
        raise DegenerateError("series has zero variance")
    return np.array([xc[:-h] @ xc[h:] for h in range(1, K + 1)]) / c0


def empirical_moments(series, J=4):
    """Mean, sd (``1/n``), skewness and excess kurtosis, truncated to ``J`` entries."""
    x = _values(series)
    if x.size < 2:
        raise DomainError("need at least two observations")
    m = x.mean()
    sd = x.std()
    if not sd > 0:
        raise DegenerateError("series has zero variance")
    z = (x - m) / sd
    return np.array([m, sd, np.mean(z**3), np.mean(z**4) - 3.0])[:J]


def _multistart_nm(obj, bounds, n_grid=3):
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    fracs = (np.arange(n_grid) + 0.5) / n_grid
    starts = np.stack(np.meshgrid(*[lo[j] + fracs * (hi[j] - lo[j]) for j in range(lo.size)], indexing="ij"),
                      axis=-1).reshape(-1, lo.size)
    best = None
    for x0 in starts:
        step = 0.1 * (hi - lo)
        simplex = np.vstack([x0, x0 + np.diag(np.where(x0 + step <= hi, step, -step))])
        res = minimize(obj, x0, method="Nelder-Mead", bounds=list(zip(lo, hi)),
                       options={"initial_simplex": simplex, "xatol": 1e-10, "fatol": 1e-14, "maxiter": 5000})
        if best is None or res.fun < best.fun:
            best = res
    if best is None or not np.isfinite(best.fun):
        raise ConvergenceError("ACF matching failed")
    return np.clip(best.x, lo, hi), float(best.fun)


def fit_acf_params(series, kernel_family="inverse_gaussian", config=GmmConfig(), bounds=None, return_loss=False):
    """Kernel parameters minimizing ``sum_k (acf_hat(k) - acf(k; theta))^2``.

    Parameters
    ----------
    series : TimeSeries or array_like
    kernel_family : {"inverse_gaussian", "exponential"}
    config : GmmConfig
    bounds : sequence of (lo, hi), optional
        Search box; defaults to the simulation-study box for the family.
    return_loss : bool

    Returns
    -------
    params : ndarray
    loss : float, only if ``return_loss``
    """
    fam = KernelFamily(kernel_family)
    bounds = DEFAULT_KERNEL_BOUNDS[fam] if bounds is None else tuple(tuple(b) for b in bounds)
    target = empirical_acf(series, config.K)
    lags = np.arange(1, config.K + 1, dtype=float)

    def obj(p):
        r = _acf_raw(fam, list(p), lags) - target
        return float(r @ r)

    params, loss = _multistart_nm(obj, bounds)
    return (params, loss) if return_loss else params


def _beta_objective(target_skew, target_kurt, J):
    def obj(beta):
        _, _, sk, ku = nig3_moments(0.0, 1.0, beta)
        r = float(sk) - target_skew
        out = r * r
        if J >= 4:
            out += (float(ku) - target_kurt) ** 2
        return out

    return obj


def fit_marginal_params(series, config=GmmConfig(), beta=None):
    """NIG marginal parameters matching the first ``J`` moments with identity weights.

    The model mean and sd equal ``mu`` and ``sigma`` and its skewness and
    excess kurtosis depend on ``beta`` only, so the objective separates:
    ``mu`` and ``sigma`` match the sample mean and sd exactly and ``beta``
    solves a bounded one-dimensional problem on ``[-5, 5]`` (fixed at 0, or
    at the given value, when ``J = 2``).

    Parameters
    ----------
    series : TimeSeries or array_like
    config : GmmConfig
    beta : float, optional
        Hold ``beta`` fixed instead of fitting it.

    Returns
    -------
    Nig3Params
    """
    mom = empirical_moments(series, 4)
    mu, sd = float(mom[0]), float(mom[1])
    if beta is not None or config.J == 2:
        return Nig3Params(mu, sd, 0.0 if beta is None else float(beta))
    obj = _beta_objective(float(mom[2]), float(mom[3]), config.J)
    grid = np.linspace(*_BETA_BOUNDS, 201)
    vals = np.array([obj(b) for b in grid])
    j = int(np.argmin(vals))
    lo = grid[max(j - 1, 0)]
    hi = grid[min(j + 1, grid.size - 1)]
    res = minimize_scalar(obj, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    b = float(res.x) if res.fun <= vals[j] else float(grid[j])
    return Nig3Params(mu, sd, b)


class GMMEstimator(BaseEstimator):
    """Two-step identity-weight moment estimator of a NIG trawl process.

    Parameters
    ----------
    K : int, default=35
    J : int, default=4
    kernel_family : {"inverse_gaussian", "exponential"}, default="inverse_gaussian"
    kernel_bounds : sequence of (lo, hi), optional

    Attributes
    ----------
    kernel_params_ : ndarray
    marginal_ : Nig3Params
    names_ : tuple of str
    params_ : ndarray
        Kernel parameters followed by ``(mu, sigma, beta)``.
    """

    def __init__(self, K=35, J=4, kernel_family="inverse_gaussian", kernel_bounds=None):
        self.K = K
        self.J = J
        self.kernel_family = kernel_family
        self.kernel_bounds = kernel_bounds

    def fit(self, X, y=None):
        cfg = GmmConfig(int(self.K), int(self.J))
        fam = KernelFamily(self.kernel_family)
        self.kernel_params_ = fit_acf_params(X, fam, cfg, self.kernel_bounds)
        self.marginal_ = fit_marginal_params(X, cfg)
        kn = ("gamma_acf", "eta_acf") if fam is KernelFamily.INVERSE_GAUSSIAN else ("lambda_acf",)
        self.names_ = kn + ("mu", "sigma", "beta")
        self.params_ = np.concatenate([self.kernel_params_, [self.marginal_.mu, self.marginal_.sigma,
                                                             self.marginal_.beta]])
        return self

    def predict(self, X=None):
        return self.params_
