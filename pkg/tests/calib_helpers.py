"""Oracles shared by the calibration and acceptance tests."""

import itertools

import numpy as np


def calibrated_set(n, rng):
    s = rng.beta(0.7, 0.7, n)
    return s, (rng.random(n) < s).astype(float)


def brute_force_isotonic(y):
    """Best nondecreasing step fit by enumerating every contiguous partition."""
    n = len(y)
    best, best_fit = np.inf, None
    for cuts in itertools.product([0, 1], repeat=n - 1):
        bounds = [0] + [i + 1 for i, c in enumerate(cuts) if c] + [n]
        means = [np.mean(y[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]
        if np.any(np.diff(means) < 0):
            continue
        fit = np.concatenate([np.full(b - a, m) for a, b, m in zip(bounds[:-1], bounds[1:], means)])
        sse = np.sum((fit - y) ** 2)
        if sse < best - 1e-15:
            best, best_fit = sse, fit
    return best_fit
