"""Coverage diagnostics of amortized posteriors.

For each simulated pair ``(theta_j, x_j)`` the posterior density at the true
parameter is compared with its density at ``M`` posterior draws. The truth
lies in the level-``q`` highest-posterior-density region iff fewer than
``ceil(q M)`` draws have a strictly higher density, so one rank per replicate
yields the whole coverage curve.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .calibration import ece
from .exceptions import ParameterError
from .posterior import DEFAULT_DEGREE, fit_block, sample_posterior_batch
from .training import classification_metrics, make_nre_batch

__all__ = [
    "CoverageCurve",
    "DiagnosticsReport",
    "hpd_threshold",
    "coverage_from_ranks",
    "coverage_curve",
    "per_block_coverage",
    "rank_statistic",
    "wasserstein_w",
    "diagnose",
    "default_levels",
]

#: relative tolerance under which two density values count as tied
TIE_RTOL = 1e-10


def default_levels(n=101):
    return np.linspace(0.0, 1.0, n)


def _hpd_rank(level, M):
    """Number of draws in the level-``level`` HPD region, ``ceil(level * M)``."""
    return np.ceil(np.asarray(level) * M - 1e-9).astype(int)


def hpd_threshold(values, alpha):
    """Density threshold of the ``1 - alpha`` HPD region from ``M`` draw densities.

    The values are sorted in descending order and the value at rank
    ``ceil((1 - alpha) M)`` is returned (at least rank 1). Values equal to
    the threshold are inside the region.

    Examples
    --------
    >>> hpd_threshold([0.1, 0.4, 0.3, 0.2], 0.5)
    0.3
    """
    v = np.sort(np.asarray(values, dtype=float).ravel())[::-1]
    if v.size == 0:
        raise ParameterError("need at least one density value")
    if not 0.0 < alpha < 1.0:
        raise ParameterError("alpha must lie in (0, 1)")
    r = max(int(_hpd_rank(1.0 - alpha, v.size)), 1)
    return float(v[r - 1])


@dataclass
class CoverageCurve:
    """Empirical coverage of HPD regions against their nominal level.

    Attributes
    ----------
    levels : ndarray
        Nominal credibility levels ``1 - alpha`` on ``[0, 1]``.
    coverage : ndarray
        Fraction of replicates whose truth is inside its region.
    n_replicates, n_draws : int
    block : str
        ``"all"`` for the joint posterior, otherwise the block label.
    """

    levels: np.ndarray
    coverage: np.ndarray
    n_replicates: int = 0
    n_draws: int = 0
    block: str = "all"

    def standard_error(self):
        n = max(self.n_replicates, 1)
        return np.sqrt(self.levels * (1.0 - self.levels) / n)


def coverage_from_ranks(n_above, M, levels=None, block="all"):
    """Coverage curve from the number of draws above the truth per replicate."""
    levels = default_levels() if levels is None else np.asarray(levels, dtype=float)
    n_above = np.asarray(n_above)
    r = _hpd_rank(levels, M)
    cov = (n_above[:, None] <= r[None, :] - 1).mean(axis=0)
    return CoverageCurve(levels, cov, n_above.size, int(M), block)


def _n_above(logd_draws, logd_truth, rng):
    """Draws with higher density than the truth; ties placed uniformly at random."""
    diff = logd_draws - logd_truth[:, None]
    ties = np.abs(diff) <= TIE_RTOL
    above = np.sum((diff > 0) & ~ties, axis=1)
    n_tie = np.sum(ties, axis=1)
    return above + np.floor(rng.random(above.size) * (n_tie + 1)).astype(int)


def wasserstein_w(curve):
    """``int_0^1 |C(q) - q| dq`` by the trapezoidal rule, ``0 <= W <= 0.5``."""
    q = np.asarray(curve.levels, dtype=float)
    dev = np.abs(np.asarray(curve.coverage, dtype=float) - q)
    return float(np.sum(0.5 * (dev[1:] + dev[:-1]) * np.diff(q)))


def _simulate_pairs(model, simulator, N, k, rng):
    theta = model.box.sample(rng, N)
    return theta, simulator(theta, k, rng)


def _chunks(N, size):
    for s in range(0, N, size):
        yield slice(s, min(s + size, N))


def _series_chunk(M, degree):
    return max(1, int(2_000_000 // (M * (degree + 1))))


def coverage_curve(model, simulator, N, M, rng, k=None, levels=None, degree=DEFAULT_DEGREE, theta=None, X=None):
    """Global HPD coverage of the sequential posterior.

    Parameters
    ----------
    model : BaseRatioModel
    simulator : callable
        ``simulator(theta, k, rng)``.
    N, M : int
        Replicates and posterior draws per replicate.
    rng : numpy.random.Generator
    k : int
        Series length passed to the simulator.
    theta, X : ndarray, optional
        Pre-simulated replicates (used instead of simulating).

    Returns
    -------
    CoverageCurve
    """
    if theta is None:
        theta, X = _simulate_pairs(model, simulator, N, k, rng)
    N = theta.shape[0]
    n_above = np.empty(N, dtype=int)
    for sl in _chunks(N, _series_chunk(M, degree)):
        try:
            _, logd, logt = sample_posterior_batch(model, X[sl], M, rng, degree, truth=theta[sl])
        except Exception as exc:
            raise type(exc)(f"replicates {sl.start}..{sl.stop - 1}: {exc}") from exc
        n_above[sl] = _n_above(logd, logt, rng)
    return coverage_from_ranks(n_above, M, levels)


def per_block_coverage(model, simulator, i, N, M, rng, k=None, levels=None, degree=DEFAULT_DEGREE, theta=None,
                       X=None):
    """HPD coverage of block ``i`` conditioned on the true prefix.

    One Chebyshev fit (1-D) or surface (2-D) per replicate gives
    ``p(theta_i | x_j, theta_j[:start])``; ``M`` draws from it are ranked
    against the truth.
    """
    if theta is None:
        theta, X = _simulate_pairs(model, simulator, N, k, rng)
    N = theta.shape[0]
    start, end = model.box.blocks[i]
    n_above = np.empty(N, dtype=int)
    for sl in _chunks(N, 256):
        summ = model.encode(X[sl])[i]
        n = sl.stop - sl.start
        try:
            fit = fit_block(model, i, summ, np.arange(n), theta[sl, :start], degree)
        except Exception as exc:
            raise type(exc)(f"replicates {sl.start}..{sl.stop - 1}: {exc}") from exc
        vals = fit.sample(rng.random((n, M, end - start)))
        logd = fit.log_density(vals)
        logt = fit.log_density(theta[sl, None, start:end])[:, 0]
        n_above[sl] = _n_above(logd, logt, rng)
    return coverage_from_ranks(n_above, M, levels, block=str(i))


def rank_statistic(model, x, theta, f, M, rng, degree=DEFAULT_DEGREE):
    """Fraction of ``M`` posterior draws ``v`` with ``f(theta) < f(v)``.

    Ties count as not above, so a constant ``f`` gives 0.
    """
    draws, _, _ = sample_posterior_batch(model, np.asarray(x, dtype=float).reshape(1, -1), M, rng, degree)
    fv = np.asarray(f(draws[0]), dtype=float)
    ft = float(np.asarray(f(np.asarray(theta, dtype=float)[None]), dtype=float).ravel()[0])
    return float(np.mean(ft < fv))


@dataclass
class DiagnosticsReport:
    """Coverage curves with their W summaries and holdout classification metrics."""

    curves: list
    w: dict
    metrics: dict = field(default_factory=dict)

    def curve(self, block="all"):
        return next(c for c in self.curves if c.block == block)

    def coverage_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["alpha", "coverage", "block"])
            for c in self.curves:
                for q, cv in zip(c.levels, c.coverage):
                    w.writerow([repr(float(1.0 - q)), repr(float(cv)), c.block])

    def summary_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            keys = ["W", "ece", "bce", "S", "B"]
            w.writerow(["block", *keys])
            for c in self.curves:
                row = [self.w[c.block]] + [self.metrics.get(key, math.nan) if c.block == "all" else math.nan
                                           for key in keys[1:]]
                w.writerow([c.block, *(repr(float(v)) for v in row)])


def diagnose(model, simulator, N, M, rng, k, levels=None, degree=DEFAULT_DEGREE, per_block=True, theta=None,
             X=None):
    """Global and per-block coverage, W values and holdout metrics on ``N`` fresh replicates."""
    if theta is None:
        theta, X = _simulate_pairs(model, simulator, N, k, rng)
    curves = [coverage_curve(model, simulator, N, M, rng, levels=levels, degree=degree, theta=theta, X=X)]
    if per_block:
        for i in range(model.n_heads):
            curves.append(per_block_coverage(model, simulator, i, N, M, rng, levels=levels, degree=degree,
                                             theta=theta, X=X))
    batch = make_nre_batch(X, theta)
    z = model.log_ratio(batch.inputs, batch.theta)
    bce, acc, S, B = classification_metrics(z, batch.labels, model.box.log_density())
    mets = {"bce": bce, "acc": acc, "S": S, "B": B, "ece": ece(expit(z), batch.labels)}
    return DiagnosticsReport(curves, {c.block: wasserstein_w(c) for c in curves}, mets)
