"""Sequential posterior sampling through per-block conditional densities.

Each block's conditional density ``p(theta_i | x, theta_prefix)`` is
proportional to ``exp(log r_i) * p(theta_i)``; with a uniform box prior it
is the exponentiated head logit on the block's interval. It is interpolated
by a Chebyshev series (a tensor surface for a two-coordinate block) and
sampled by inverting its antiderivative. The first block is fitted once per
series; every later block is fitted once per draw, conditioning on that
draw's prefix.
"""

import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .chebyshev import (
    NEGATIVITY_TOL,
    NegativeDensityError,
    antiderivative_coefficients,
    chebyshev_knots,
    clenshaw,
    coefficients_from_values,
    marginal_x_coefficients,
    negative_rows,
    newton_batch,
    sample2d_batch,
    surface_coefficients,
    surface_negative_rows,
    surface_values,
)
from .exceptions import DegenerateError, ParameterError, UnsupportedError
from .trawl import KernelFamily, TimeSeries, _acf_raw

__all__ = [
    "DEFAULT_DEGREE",
    "PosteriorDraws",
    "BlockFit",
    "fit_block",
    "sample_posterior_batch",
    "sequential_sample",
    "MapResult",
    "map_estimate",
    "AcfBand",
    "posterior_acf_band",
]

#: Chebyshev degree of every conditional fit (64 knots)
DEFAULT_DEGREE = 63
#: largest degree tried when a fit shows negative ripple
MAX_DEGREE = 255
# evaluation points per head call, bounds memory of the MLP activations
_EVAL_CHUNK = 1 << 17


def _series_values(series):
    if isinstance(series, TimeSeries):
        return series.values
    return np.asarray(series, dtype=float)


@dataclass
class BlockFit:
    """Chebyshev fits of one block's conditional density for many rows.

    Attributes
    ----------
    coeffs : ndarray
        ``(R, n)`` for a 1-D block, ``(R, nx, ny)`` for a 2-D block. Values
        are scaled by ``exp(-log_scale)`` per row.
    mass : ndarray of shape (R,)
        Integral of each scaled fit over the block's box.
    log_scale : ndarray of shape (R,)
        Maximum head logit at the knots.
    lo, hi : ndarray
        Block bounds.
    degree : ndarray of shape (R,)
        Degree actually used per row (raised where the default fit rippled
        below zero).
    """

    coeffs: np.ndarray
    mass: np.ndarray
    log_scale: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    degree: np.ndarray

    @property
    def dim(self):
        return self.lo.size

    def _unit(self, v, j):
        return (2.0 * v - (self.lo[j] + self.hi[j])) / (self.hi[j] - self.lo[j])

    def log_density(self, values):
        """Normalized log density of the fitted conditional at ``values``.

        ``values`` has shape ``(R, P, dim)`` (one set of points per row).
        """
        values = np.asarray(values, dtype=float)
        if self.dim == 1:
            t = np.clip(self._unit(values[..., 0], 0), -1.0, 1.0)
            v = clenshaw(self.coeffs, t)
        else:
            tx = np.clip(self._unit(values[..., 0], 0), -1.0, 1.0)
            ty = np.clip(self._unit(values[..., 1], 1), -1.0, 1.0)
            v = surface_values(self.coeffs, tx, ty)
        with np.errstate(divide="ignore"):
            return np.log(np.maximum(v, np.finfo(float).tiny)) - np.log(self.mass)[:, None]

    def sample(self, u):
        """Draws for uniforms ``u`` of shape ``(R, P, dim)``; returns ``(R, P, dim)``."""
        if self.dim == 1:
            anti = antiderivative_coefficients(self.coeffs, 0.5 * (self.hi[0] - self.lo[0]))
            return newton_batch(anti, self.mass, u[..., 0], self.lo[0], self.hi[0])[..., None]
        x, y, _ = sample2d_batch(self.coeffs, (self.lo[0], self.hi[0]), (self.lo[1], self.hi[1]), u)
        return np.stack([x, y], axis=-1)


def _head_logits(model, i, summary, rows, prefix, grid):
    """Head logits at ``grid`` points (G, d) for every row, chunked: shape (R, G)."""
    R = rows.size
    G = grid.shape[0]
    start = prefix.shape[1]
    out = np.empty((R, G))
    step = max(1, _EVAL_CHUNK // G)
    for s in range(0, R, step):
        r = rows[s : s + step]
        n = r.size
        th = np.empty((n, G, start + grid.shape[1]))
        th[..., :start] = prefix[s : s + step, None, :]
        th[..., start:] = grid[None]
        S = np.asarray(summary)[r][:, None, :]
        out[s : s + n] = model.head_log_ratio(i, S, th)
    return out


def _fit_rows(model, i, summary, rows, prefix, degree, neg_tol):
    start, end = model.box.blocks[i]
    lo, hi = model.box.lo[start:end], model.box.hi[start:end]
    dim = end - start
    if dim == 1:
        grid = chebyshev_knots(degree, lo[0], hi[0])[:, None]
    else:
        gx = chebyshev_knots(degree, lo[0], hi[0])
        gy = chebyshev_knots(degree, lo[1], hi[1])
        grid = np.stack(np.meshgrid(gx, gy, indexing="ij"), axis=-1).reshape(-1, 2)
    z = _head_logits(model, i, summary, rows, prefix, grid)
    if not np.all(np.isfinite(z)):
        r = int(np.argmax(~np.all(np.isfinite(z), axis=1)))
        raise DegenerateError(f"block {i}, row {r}: non-finite head logit at a knot")
    log_scale = z.max(axis=1)
    vals = np.exp(z - log_scale[:, None])
    if dim == 1:
        coeffs = coefficients_from_values(vals)
        bad = negative_rows(coeffs, neg_tol, n_grid=max(256, 4 * (degree + 1)))
    else:
        coeffs = surface_coefficients(vals.reshape(-1, degree + 1, degree + 1))
        bad = surface_negative_rows(coeffs, neg_tol)
    return coeffs, log_scale, bad


def fit_block(model, i, summary, rows, prefix, degree=DEFAULT_DEGREE, neg_tol=NEGATIVITY_TOL,
              max_degree=MAX_DEGREE):
    """Fit the conditional density of block ``i`` for many rows.

    Parameters
    ----------
    model : BaseRatioModel
    i : int
        Block index; blocks may have 1 or 2 coordinates.
    summary : ndarray
        Head-``i`` summaries of the series, one row per series.
    rows : ndarray of int
        Series index of each fit.
    prefix : ndarray of shape (len(rows), start)
        Conditioning coordinates of each fit.
    degree : int
        Initial Chebyshev degree; rows whose fit ripples below
        ``-neg_tol * max`` are refitted at doubled degree up to
        ``max_degree``.

    Returns
    -------
    BlockFit

    Raises
    ------
    NegativeDensityError
        If a row still ripples below zero at ``max_degree``.
    DegenerateError
        If a row has no positive mass.
    """
    start, end = model.box.blocks[i]
    if end - start > 2:
        raise UnsupportedError("Chebyshev fits support blocks of at most 2 coordinates")
    rows = np.asarray(rows, dtype=int)
    prefix = np.asarray(prefix, dtype=float).reshape(rows.size, start)
    coeffs, log_scale, bad = _fit_rows(model, i, summary, rows, prefix, degree, neg_tol)
    deg = np.full(rows.size, degree)
    cur = degree
    while np.any(bad):
        cur = 2 * cur + 1
        idx = np.flatnonzero(bad)
        if cur > max_degree:
            raise NegativeDensityError(f"block {i}, row {int(idx[0])}: conditional density fit is negative "
                                       f"even at degree {cur // 2}")
        c2, s2, b2 = _fit_rows(model, i, summary, rows[idx], prefix[idx], cur, neg_tol)
        pad = [(0, 0)] + [(0, cur - (coeffs.shape[ax] - 1)) for ax in range(1, coeffs.ndim)]
        coeffs = np.pad(coeffs, pad)
        coeffs[idx] = c2
        log_scale[idx] = s2
        deg[idx] = cur
        bad = np.zeros(rows.size, dtype=bool)
        bad[idx] = b2
    lo, hi = model.box.lo[start:end], model.box.hi[start:end]
    if end - start == 1:
        mass = clenshaw(antiderivative_coefficients(coeffs, 0.5 * (hi[0] - lo[0])), np.ones(rows.size))
    else:
        marg = marginal_x_coefficients(coeffs, 0.5 * (hi[1] - lo[1]))
        mass = clenshaw(antiderivative_coefficients(marg, 0.5 * (hi[0] - lo[0])), np.ones(rows.size))
    if np.any(~(mass > 0)):
        r = int(np.argmax(~(mass > 0)))
        raise DegenerateError(f"block {i}, row {r}: conditional density has no positive mass")
    return BlockFit(coeffs, mass, log_scale, lo, hi, deg)


def sample_posterior_batch(model, X, M, rng, degree=DEFAULT_DEGREE, truth=None, neg_tol=NEGATIVITY_TOL):
    """Sequential posterior draws for a batch of series.

    Parameters
    ----------
    model : BaseRatioModel
    X : ndarray of shape (S, k)
    M : int
        Draws per series.
    rng : numpy.random.Generator
    degree : int, default=63
    truth : ndarray of shape (S, m), optional
        If given, the log density of the fitted sequential posterior is also
        evaluated at these points, conditioning each block on the true
        prefix.

    Returns
    -------
    draws : ndarray of shape (S, M, m)
    log_density : ndarray of shape (S, M)
        Log density of each draw under the product of normalized fits.
    truth_log_density : ndarray of shape (S,) or None
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    S = X.shape[0]
    M = int(M)
    if M < 1:
        raise ParameterError("M must be >= 1")
    box = model.box
    summaries = model.encode(X)
    draws = np.empty((S, M, box.m))
    logd = np.zeros((S, M))
    has_truth = truth is not None
    if has_truth:
        truth = np.asarray(truth, dtype=float).reshape(S, box.m)
        logd_truth = np.zeros(S)
    for i, (start, end) in enumerate(box.blocks):
        dim = end - start
        if i == 0:
            fit = fit_block(model, i, summaries[i], np.arange(S), np.empty((S, 0)), degree, neg_tol)
            vals = fit.sample(rng.random((S, M, dim)))
            draws[:, :, start:end] = vals
            logd += fit.log_density(vals)
            if has_truth:
                logd_truth += fit.log_density(truth[:, None, start:end])[:, 0]
            continue
        if dim != 1:
            raise UnsupportedError("only the first block may have two coordinates")
        extra = 1 if has_truth else 0
        rows = np.repeat(np.arange(S), M + extra)
        pre = draws[:, :, :start]
        if has_truth:
            pre = np.concatenate([pre, truth[:, None, :start]], axis=1)
        fit = fit_block(model, i, summaries[i], rows, pre.reshape(-1, start), degree, neg_tol)
        u = rng.random((S, M + extra, 1))
        vals = fit.sample(u.reshape(-1, 1, 1)).reshape(S, M + extra, 1)
        if has_truth:
            vals[:, M] = truth[:, None, start:end][:, 0]
        ld = fit.log_density(vals.reshape(-1, 1, 1)).reshape(S, M + extra)
        draws[:, :, start:end] = vals[:, :M]
        logd += ld[:, :M]
        if has_truth:
            logd_truth += ld[:, M]
    return draws, logd, (logd_truth if has_truth else None)


@dataclass
class PosteriorDraws:
    """Posterior draws of one series.

    Attributes
    ----------
    theta : ndarray of shape (M, m)
    log_posterior : ndarray of shape (M,)
        Log density of each draw under the sequential Chebyshev posterior.
    names : tuple of str
    provenance : dict
    """

    theta: np.ndarray
    log_posterior: np.ndarray
    names: tuple
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return self.theta.shape[0]

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([*self.names, "log_posterior"])
            for row, lp in zip(self.theta, self.log_posterior):
                w.writerow([repr(float(v)) for v in row] + [repr(float(lp))])


def _series_id(x):
    return hashlib.sha256(np.ascontiguousarray(x, dtype=float).tobytes()).hexdigest()[:16]


def sequential_sample(model, series, M, rng, degree=DEFAULT_DEGREE, seed=None):
    """Independent posterior draws for one series.

    Parameters
    ----------
    model : BaseRatioModel
    series : TimeSeries or array_like of shape (k,)
    M : int
    rng : numpy.random.Generator
    degree : int, default=63
    seed : int, optional
        Recorded in the provenance only.

    Returns
    -------
    PosteriorDraws
    """
    x = _series_values(series).reshape(-1)
    draws, logd, _ = sample_posterior_batch(model, x[None], M, rng, degree)
    prov = {
        "model_id": getattr(model, "metadata", {}).get("model_id") if hasattr(model, "metadata") else None,
        "series_id": _series_id(x),
        "seed": seed,
        "degree": int(degree),
        "calibrated_for_length": model.calibrated_for_length,
    }
    return PosteriorDraws(draws[0], logd[0], model.box.names, prov)


@dataclass
class MapResult:
    """Posterior mode estimate.

    Attributes
    ----------
    theta : ndarray of shape (m,)
    log_posterior : float
        Model log posterior (log ratio plus box log density) at ``theta``.
    flat : bool
        The objective was constant over the initial draws.
    projected : bool
        The local search proposed a point outside the box that was projected back.
    """

    theta: np.ndarray
    log_posterior: float
    flat: bool
    projected: bool


def map_estimate(model, series, M_init, rng, degree=DEFAULT_DEGREE, xatol=1e-8, fatol=1e-12):
    """Best posterior draw refined by bounded Nelder-Mead on the log ratio.

    Parameters
    ----------
    model : BaseRatioModel
    series : TimeSeries or array_like
    M_init : int
        Number of posterior draws to start from.
    rng : numpy.random.Generator

    Returns
    -------
    MapResult
    """
    x = _series_values(series).reshape(-1)
    box = model.box
    draws, _, _ = sample_posterior_batch(model, x[None], M_init, rng, degree)
    draws = draws[0]
    summaries = model.encode(x[None])

    def objective(th):
        th = np.atleast_2d(th)
        return sum(model.head_log_ratio(i, summaries[i], th) for i in range(model.n_heads))

    vals = objective(draws)
    best = int(np.argmax(vals))
    x0 = draws[best]
    f0 = float(vals[best])
    flat = bool(np.ptp(vals) <= 1e-10 * max(1.0, abs(f0)))
    lp_box = box.log_density()
    if flat:
        return MapResult(x0, f0 + lp_box, True, False)
    projected = False

    def neg(th):
        nonlocal projected
        if not np.all(box.contains(th, rtol=0.0)):
            projected = True
            th = np.clip(th, box.lo, box.hi)
        return -float(objective(th)[0])

    # simplex scaled to the box, pointing inward
    step = 0.05 * box.width
    simplex = [x0]
    for j in range(box.m):
        v = x0.copy()
        v[j] = v[j] + step[j] if v[j] + step[j] <= box.hi[j] else v[j] - step[j]
        simplex.append(v)
    res = minimize(neg, x0, method="Nelder-Mead", bounds=list(zip(box.lo, box.hi)),
                   options={"initial_simplex": np.array(simplex), "xatol": xatol, "fatol": fatol,
                            "maxiter": 4000 * box.m, "maxfev": 8000 * box.m})
    th = np.clip(res.x, box.lo, box.hi)
    f = -neg(th)
    if f < f0:
        th, f = x0, f0
    return MapResult(th, f + lp_box, False, projected)


@dataclass
class AcfBand:
    """Lag-wise summaries of the autocorrelation implied by posterior draws."""

    lags: np.ndarray
    mean: np.ndarray
    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lag", "mean", "median", "lower", "upper"])
            for row in zip(self.lags, self.mean, self.median, self.lower, self.upper):
                w.writerow([repr(float(v)) for v in row])


_KERNEL_COORDS = {
    KernelFamily.INVERSE_GAUSSIAN: ("gamma_acf", "eta_acf"),
    KernelFamily.EXPONENTIAL: ("lambda_acf",),
}


def posterior_acf_band(draws, lags, kernel_family="inverse_gaussian", quantiles=(0.05, 0.95)):
    """Push each draw's kernel parameters through the ACF and summarize per lag.

    Parameters
    ----------
    draws : PosteriorDraws
    lags : array_like
    kernel_family : {"inverse_gaussian", "exponential"}
        Kernel parameters are read from the coordinates named
        ``gamma_acf, eta_acf`` or ``lambda_acf``.
    quantiles : (float, float)

    Returns
    -------
    AcfBand
    """
    fam = KernelFamily(kernel_family)
    if len(draws) == 0:
        raise ParameterError("no draws")
    lags = np.asarray(lags, dtype=float)
    names = list(draws.names)
    params = [draws.theta[:, names.index(n)][:, None] for n in _KERNEL_COORDS[fam]]
    A = _acf_raw(fam, params, lags[None, :])
    lo, hi = np.quantile(A, quantiles, axis=0)
    return AcfBand(lags, A.mean(axis=0), np.median(A, axis=0), lo, hi)
