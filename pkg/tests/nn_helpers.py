"""Finite-difference gradient checks shared by the classifier and acceptance tests."""

import numpy as np

from trawltre.box import SamplingBox
from trawltre.classifier import RatioModel, head_loss_and_grads
from trawltre.training import TrainBatch


def small_box():
    return SamplingBox([0.0, -1.0, 0.5], [2.0, 1.0, 1.5], ["a", "b", "c"], [2, 1])


def grad_check_batch(model, rng, summary, n=12, k=30):
    """Mixed-label batch; ``summary=False`` keeps raw series for recurrent encoders."""
    theta = model.box.sample(rng, n)
    X = rng.standard_normal((n, k)).cumsum(axis=1) * 0.3
    labels = (np.arange(n) % 2).astype(float)
    return TrainBatch(model.encode(X)[0] if summary else X, theta, labels, summary)


def max_relative_error(model, i, batch, h=1e-6):
    """Largest relative gap between analytic and central-difference gradients.

    The error of each parameter group is ``max|g - g_fd| / max(max|g_fd|, 1e-8)``.
    """
    _, grads, _ = head_loss_and_grads(model, i, batch, train=False)
    params = model.head_parameters(i)
    worst = 0.0
    for p, g in zip(params, grads):
        fd = np.empty_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            lp = head_loss_and_grads(model, i, batch, train=False)[0]
            p[idx] = old - h
            lm = head_loss_and_grads(model, i, batch, train=False)[0]
            p[idx] = old
            fd[idx] = (lp - lm) / (2 * h)
        worst = max(worst, float(np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-8)))
    return worst


def gradient_check_models(seed=0):
    """A two-layer head on summary statistics and a width-4 two-layer recurrent encoder."""
    rng = np.random.default_rng(seed)
    box = small_box()
    mlp = RatioModel.build(box, hidden=(8, 6), dropout=0.0, rng=rng, n_lags=3, n_moments=4)
    mlp.fit_encoders(rng.standard_normal((40, 30)).cumsum(axis=1))
    rec = RatioModel.build(box, encoder="recurrent", hidden=(5, 4), dropout=0.0, rng=rng, hidden_size=4,
                           n_layers=2)
    rec.fit_encoders(rng.standard_normal((40, 30)))
    return rng, mlp, rec
