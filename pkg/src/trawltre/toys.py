"""Tractable models with exact log ratios, used as oracles for the ratio machinery."""

import itertools

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_ndtr, logsumexp, roots_hermitenorm, roots_legendre
from scipy.stats import multivariate_normal

from .box import SamplingBox
from .classifier import AnalyticRatioModel
from .exceptions import ParameterError

__all__ = [
    "GaussianLinearToy",
    "ConjugateGaussianToy",
    "gaussian_kl",
    "gauss_hermite_expectation",
    "identity_ratio_model",
    "log_ndtr_diff",
]


def gauss_hermite_expectation(cov, fn, n_nodes=12):
    """``E[fn(z)]`` for ``z ~ N(0, cov)`` by tensor Gauss-Hermite quadrature.

    Exact for polynomials of degree ``<= 2 n_nodes - 1`` in each coordinate.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    d = cov.shape[0]
    u, w = roots_hermitenorm(n_nodes)
    w = w / np.sqrt(2.0 * np.pi)
    U = np.array(list(itertools.product(u, repeat=d)))
    W = np.prod(np.array(list(itertools.product(w, repeat=d))), axis=1)
    Z = U @ np.linalg.cholesky(cov).T
    return float(W @ fn(Z))


def gaussian_kl(P, Q):
    """Closed-form ``KL(N(0, P) || N(0, Q))``."""
    P, Q = np.atleast_2d(P), np.atleast_2d(Q)
    d = P.shape[0]
    Qi = np.linalg.inv(Q)
    return 0.5 * (np.trace(Qi @ P) - d + np.linalg.slogdet(Q)[1] - np.linalg.slogdet(P)[1])


class GaussianLinearToy:
    """Scalar observation ``x = a . theta + noise`` with independent Gaussian priors.

    Parameters
    ----------
    a : sequence of float
        Loadings of the parameter coordinates.
    noise_sd : float
    prior_sd : sequence of float
        Prior standard deviations; the prior is factorized.

    Notes
    -----
    The interpolating density ``q_i`` keeps the joint law of ``x`` and the
    first ``i`` coordinates (in the chosen order) and makes the remaining
    coordinates independent with their prior marginals.
    """

    def __init__(self, a=(1.0, 0.6), noise_sd=0.8, prior_sd=(1.0, 1.5)):
        self.a = np.asarray(a, dtype=float)
        self.noise_sd = float(noise_sd)
        self.prior_sd = np.asarray(prior_sd, dtype=float)
        if self.a.shape != self.prior_sd.shape or self.noise_sd <= 0 or np.any(self.prior_sd <= 0):
            raise ParameterError("need matching a and prior_sd, positive scales")

    @property
    def m(self):
        return self.a.size

    def joint_cov(self, order=None):
        """Covariance of ``(x, theta[order])``."""
        order = list(range(self.m)) if order is None else list(order)
        a, s = self.a[order], self.prior_sd[order]
        C = np.zeros((self.m + 1, self.m + 1))
        C[0, 0] = np.sum(a * a * s * s) + self.noise_sd**2
        C[0, 1:] = C[1:, 0] = a * s * s
        C[1:, 1:] = np.diag(s * s)
        return C

    def stage_cov(self, i, order=None):
        """Covariance of ``q_i`` over ``(x, theta[order])``."""
        C = self.joint_cov(order).copy()
        C[0, 1 + i :] = C[1 + i :, 0] = 0.0
        return C

    def kl_quadrature(self, P, Q, n_nodes=12):
        """``KL(N(0, P) || N(0, Q))`` by Gauss-Hermite quadrature of the log ratio."""
        lp = multivariate_normal(cov=P).logpdf
        lq = multivariate_normal(cov=Q).logpdf
        return gauss_hermite_expectation(P, lambda Z: lp(Z) - lq(Z), n_nodes)

    def kl_stages(self, order=None, n_nodes=12):
        """``KL(q_i || q_{i-1})`` for ``i = 1..m``."""
        return np.array([self.kl_quadrature(self.stage_cov(i, order), self.stage_cov(i - 1, order), n_nodes)
                         for i in range(1, self.m + 1)])

    def kl_total(self, n_nodes=12):
        """``KL(q_m || q_0)``, the mutual information between ``x`` and ``theta``."""
        return self.kl_quadrature(self.stage_cov(self.m), self.stage_cov(0), n_nodes)


def log_ndtr_diff(a, b):
    """``log(Phi(b) - Phi(a))`` for ``a <= b``, accurate in both tails."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    lb = log_ndtr(hi)
    la = log_ndtr(lo)
    with np.errstate(divide="ignore"):
        return lb + np.log1p(-np.exp(la - lb))


class ConjugateGaussianToy:
    """Gaussian linear regression with a uniform box prior on two coefficients.

    ``x = D theta + noise_sd * eps`` with a fixed design ``D`` of shape
    ``(n_obs, 2)`` whose columns are an intercept and a centred-off slope
    regressor, so the two coordinates are correlated a posteriori. The
    posterior is the bivariate normal with mean ``theta_hat`` (least
    squares) and precision ``D'D / noise_sd^2`` truncated to the box.

    Parameters
    ----------
    n_obs : int, default=20
    noise_sd : float, default=1.0
    box : SamplingBox, optional
        Defaults to ``[-2, 2]^2`` with one coordinate per block.
    n_quad : int, default=256
        Gauss-Legendre nodes for the evidence integral.
    """

    def __init__(self, n_obs=20, noise_sd=1.0, box=None, n_quad=256):
        self.n_obs = int(n_obs)
        self.noise_sd = float(noise_sd)
        u = np.linspace(-0.5, 1.5, self.n_obs)
        self.design = np.column_stack([np.ones(self.n_obs), u])
        self.box = box if box is not None else SamplingBox([-2.0, -2.0], [2.0, 2.0], ["loc", "slope"], [1, 1])
        if self.box.m != 2 or self.box.blocks != ((0, 1), (1, 2)):
            raise ParameterError("the toy needs a 2-coordinate box with two 1-D blocks")
        self.precision = self.design.T @ self.design / self.noise_sd**2
        self.covariance = np.linalg.inv(self.precision)
        self._proj = np.linalg.pinv(self.design)
        t, w = roots_legendre(int(n_quad))
        lo, hi = self.box.lo[0], self.box.hi[0]
        self._nodes = 0.5 * (hi + lo) + 0.5 * (hi - lo) * t
        self._log_w = np.log(0.5 * w)  # weights of the mean over [lo, hi]

    # -- simulation ---------------------------------------------------------

    def simulate(self, theta, k, rng):
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        if int(k) != self.n_obs:
            raise ParameterError(f"the toy has fixed length {self.n_obs}")
        return theta @ self.design.T + self.noise_sd * rng.standard_normal((theta.shape[0], self.n_obs))

    def __call__(self, theta, k, rng):
        return self.simulate(theta, k, rng)

    def sufficient(self, x):
        """Least-squares estimate ``theta_hat`` of each series."""
        return np.asarray(x, dtype=float) @ self._proj.T

    # -- exact log ratios ---------------------------------------------------

    def _quad(self, that, theta):
        d = theta - that
        L = self.precision
        return -0.5 * (L[0, 0] * d[..., 0] ** 2 + 2 * L[0, 1] * d[..., 0] * d[..., 1] + L[1, 1] * d[..., 1] ** 2)

    def _log_marg1(self, that, t1):
        """``log`` of the box mean over ``theta_2`` of ``exp(quadratic)``, at ``theta_1 = t1``."""
        L = self.precision
        lam = L[0, 0] - L[0, 1] ** 2 / L[1, 1]
        d1 = t1 - that[..., 0]
        mean2 = that[..., 1] - L[0, 1] / L[1, 1] * d1
        r = np.sqrt(L[1, 1])
        lo, hi = self.box.lo[1], self.box.hi[1]
        return (-0.5 * lam * d1**2 + 0.5 * np.log(2 * np.pi / L[1, 1])
                + log_ndtr_diff((lo - mean2) * r, (hi - mean2) * r) - np.log(hi - lo))

    def _log_evidence(self, that):
        g = self._log_marg1(that[..., None, :], self._nodes)
        return logsumexp(g + self._log_w, axis=-1)

    def log_ratio_block1(self, that, theta):
        return self._log_marg1(that, theta[..., 0]) - self._log_evidence(that)

    def log_ratio_block2(self, that, theta):
        return self._quad(that, theta) - self._log_marg1(that, theta[..., 0])

    def log_ratio(self, x, theta):
        that = self.sufficient(x)
        return self._quad(that, theta) - self._log_evidence(that)

    def ratio_model(self):
        """:class:`AnalyticRatioModel` with the exact per-block log ratios."""
        return AnalyticRatioModel(self.box, [self.log_ratio_block1, self.log_ratio_block2], encoder=self.sufficient)

    # -- exact posterior ----------------------------------------------------

    def sample_posterior(self, x, M, rng):
        """Exact posterior draws by rejection from the untruncated normal."""
        that = self.sufficient(np.asarray(x, dtype=float).reshape(-1))
        chol = np.linalg.cholesky(self.covariance)
        out = np.empty((0, 2))
        while out.shape[0] < M:
            z = that + rng.standard_normal((2 * M, 2)) @ chol.T
            out = np.concatenate([out, z[self.box.contains(z)]])
        return out[:M]

    def posterior_mode(self, x):
        that = self.sufficient(np.asarray(x, dtype=float).reshape(-1))
        if np.all(self.box.contains(that)):
            return that
        res = minimize(lambda t: -self._quad(that, t), np.clip(that, self.box.lo, self.box.hi),
                       jac=lambda t: self.precision @ (t - that), method="L-BFGS-B",
                       bounds=list(zip(self.box.lo, self.box.hi)), options={"ftol": 1e-15, "gtol": 1e-12})
        return res.x


def identity_ratio_model(box):
    """Analytic model whose every head returns 0, so the posterior is the box."""
    zero = lambda s, th: np.zeros(th.shape[:-1])
    return AnalyticRatioModel(box, [zero] * box.n_blocks)
