"""Monte-Carlo standard errors shared by the statistical tests."""

import numpy as np


def sample_acf(x, lags):
    """Biased-denominator sample autocorrelations at the given lags."""
    x = np.asarray(x, dtype=float)
    xc = x - x.mean()
    denom = np.dot(xc, xc)
    return np.array([np.dot(xc[: x.size - h], xc[h:]) / denom for h in lags])


def batch_se(x, stat, n_batches=50):
    """Standard error of ``stat(x)`` from the spread over contiguous batches.

    Valid for weakly dependent series whose batches are much longer than
    the correlation range.
    """
    x = np.asarray(x)
    m = x.size // n_batches
    vals = np.array([stat(x[i * m : (i + 1) * m]) for i in range(n_batches)])
    return vals.std(axis=0, ddof=1) / np.sqrt(n_batches)
