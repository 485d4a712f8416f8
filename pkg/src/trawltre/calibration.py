"""Post-hoc monotone recalibration of classifier probabilities.

Calibrators follow the scikit-learn estimator API: ``fit(scores, labels)``
then ``transform(scores)``. They also expose ``transform_logit`` which maps a
raw classifier logit to the calibrated logit, the form consumed by ratio
models.
"""

import copy
import warnings

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit, logit
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConvergenceError, DegenerateError, DomainError, ParameterError

__all__ = [
    "EPS",
    "CalibrationWarning",
    "IdentityCalibrator",
    "PlattCalibrator",
    "BetaCalibrator",
    "IsotonicCalibrator",
    "fit_beta",
    "fit_platt",
    "fit_isotonic",
    "pava",
    "ece",
    "calibrate_model",
    "calibrator_to_dict",
    "calibrator_from_dict",
    "is_monotone",
]

#: scores are clipped to ``[EPS, 1 - EPS]`` before fitting and logit conversion
EPS = 1e-7
_MIN_AB = 1e-6


class CalibrationWarning(UserWarning):
    """Calibration data are degenerate; the fitted map is unreliable."""


def _check_scores(s):
    s = np.asarray(s, dtype=float)
    if np.any(~np.isfinite(s)) or np.any((s < 0) | (s > 1)):
        raise DomainError("scores must lie in [0, 1]")
    return s


def _check_set(scores, labels, min_per_class=1):
    s = _check_scores(scores).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ParameterError("scores and labels must have the same length")
    if not np.all((y == 0) | (y == 1)):
        raise ParameterError("labels must be 0 or 1")
    n1 = int(y.sum())
    if min(n1, y.size - n1) < max(min_per_class, 1):
        raise DegenerateError(f"need at least {max(min_per_class, 1)} scores of each class")
    return s, y.astype(float)


class _Calibrator(TransformerMixin, BaseEstimator):
    def transform(self, s):
        """Calibrated probabilities for scores ``s`` in ``[0, 1]``."""
        s = _check_scores(s)
        with np.errstate(divide="ignore"):
            return expit(self.transform_logit(logit(s)))

    def predict_proba(self, s):
        return self.transform(s)


class IdentityCalibrator(_Calibrator):
    """The identity map."""

    kind = "identity"

    def fit(self, scores=None, labels=None):
        return self

    def transform_logit(self, z):
        return np.asarray(z, dtype=float)

    def get_state(self):
        return {}


class PlattCalibrator(_Calibrator):
    """``s -> 1 / (1 + exp(-A s + B))`` with ``A > 0``.

    Parameters
    ----------
    A, B : float
        Initial or fixed parameters; :meth:`fit` overwrites them.
    """

    kind = "platt"

    def __init__(self, A=1.0, B=0.0, max_iter=1000):
        self.A = A
        self.B = B
        self.max_iter = max_iter

    def fit(self, scores, labels):
        s, y = _check_set(scores, labels)
        s = np.clip(s, EPS, 1 - EPS)

        def nll(w):
            z = w[0] * s - w[1]
            p = expit(z)
            return np.sum(np.logaddexp(0.0, z) - y * z), np.array([np.sum((p - y) * s), -np.sum(p - y)])

        res = minimize(nll, [1.0, 0.5], jac=True, method="L-BFGS-B", bounds=[(_MIN_AB, None), (None, None)],
                       options={"maxiter": self.max_iter})
        if not res.success:
            raise ConvergenceError(f"Platt fit did not converge: {res.message}")
        self.A, self.B = float(res.x[0]), float(res.x[1])
        return self

    def transform_logit(self, z):
        return self.A * expit(np.asarray(z, dtype=float)) - self.B

    def get_state(self):
        return {"A": self.A, "B": self.B}


class BetaCalibrator(_Calibrator):
    """Beta calibration ``s -> 1 / (1 + e^{-c} (1 - s)^b s^{-a})``.

    In logit space with ``z = logit(s)`` the calibrated logit is
    ``c - a softplus(-z) + b softplus(z)``, which handles ``s`` in ``{0, 1}``
    through its limits.

    Parameters
    ----------
    a, b : float, default=1.0
    c : float, default=0.0
        ``(1, 1, 0)`` is the identity.

    Examples
    --------
    >>> float(BetaCalibrator(1.0, 1.0, 0.0).transform(0.3))
    0.3
    """

    kind = "beta"

    def __init__(self, a=1.0, b=1.0, c=0.0, max_iter=1000):
        self.a = a
        self.b = b
        self.c = c
        self.max_iter = max_iter

    def fit(self, scores, labels):
        s, y = _check_set(scores, labels)
        s = np.clip(s, EPS, 1 - EPS)
        f1 = np.log(s)
        f2 = -np.log1p(-s)

        def nll(w):
            z = w[0] * f1 + w[1] * f2 + w[2]
            r = expit(z) - y
            return np.sum(np.logaddexp(0.0, z) - y * z), np.array([r @ f1, r @ f2, r.sum()])

        res = minimize(nll, [1.0, 1.0, 0.0], jac=True, method="L-BFGS-B",
                       bounds=[(_MIN_AB, None), (_MIN_AB, None), (None, None)],
                       options={"maxiter": self.max_iter, "ftol": 1e-13, "gtol": 1e-9})
        if not res.success and res.nit >= self.max_iter:
            raise ConvergenceError(f"beta calibration fit did not converge: {res.message}")
        self.a, self.b, self.c = (float(v) for v in res.x)
        return self

    def _is_identity(self):
        return self.a == 1.0 and self.b == 1.0 and self.c == 0.0

    def transform(self, s):
        if self._is_identity():
            return _check_scores(s).copy()
        return super().transform(s)

    def transform_logit(self, z):
        z = np.asarray(z, dtype=float)
        if self._is_identity():
            return z.copy()
        return self.c + self.a * log_expit(z) - self.b * log_expit(-z)

    def get_state(self):
        return {"a": self.a, "b": self.b, "c": self.c}


def pava(y, w=None):
    """Pool-adjacent-violators: weighted least-squares nondecreasing fit.

    Returns
    -------
    fitted : ndarray
        Nondecreasing values, one per input.
    """
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    # blocks keep weighted sums so pooled values are sum / weight, not running means
    sums, wts, sizes = [], [], []
    for yi, wi in zip(y, w):
        sums.append(wi * yi)
        wts.append(wi)
        sizes.append(1)
        while len(sums) > 1 and sums[-2] * wts[-1] > sums[-1] * wts[-2]:
            s_last, w_last, n_last = sums.pop(), wts.pop(), sizes.pop()
            sums[-1] += s_last
            wts[-1] += w_last
            sizes[-1] += n_last
    vals = np.array(sums) / np.array(wts)
    return np.repeat(vals, sizes)


class IsotonicCalibrator(_Calibrator):
    """Nondecreasing step function fitted by pool-adjacent-violators.

    Attributes
    ----------
    breakpoints_ : ndarray
        Left end of each constant piece; scores below the first breakpoint
        take the first value.
    values_ : ndarray
        Calibrated probability on each piece.
    """

    kind = "isotonic"

    def fit(self, scores, labels):
        s, y = _check_set(scores, labels)
        order = np.argsort(s, kind="stable")
        s, y = s[order], y[order]
        ux, start = np.unique(s, return_index=True)
        counts = np.diff(np.append(start, s.size))
        means = np.add.reduceat(y, start) / counts
        fitted = pava(means, counts)
        keep = np.concatenate([[True], np.diff(fitted) != 0])
        self.breakpoints_ = ux[keep]
        self.values_ = fitted[keep]
        return self

    def transform(self, s):
        check_is_fitted(self, ("breakpoints_", "values_"))
        s = _check_scores(s)
        idx = np.clip(np.searchsorted(self.breakpoints_, s, side="right") - 1, 0, self.values_.size - 1)
        return self.values_[idx]

    def transform_logit(self, z):
        p = self.transform(expit(np.asarray(z, dtype=float)))
        return logit(np.clip(p, EPS, 1 - EPS))

    def get_state(self):
        check_is_fitted(self, ("breakpoints_", "values_"))
        return {"breakpoints": self.breakpoints_.tolist(), "values": self.values_.tolist()}


_KINDS = {c.kind: c for c in (IdentityCalibrator, PlattCalibrator, BetaCalibrator, IsotonicCalibrator)}


def calibrator_to_dict(cal):
    return {"kind": cal.kind, **cal.get_state()}


def calibrator_from_dict(d):
    d = dict(d)
    kind = d.pop("kind")
    if kind not in _KINDS:
        raise ParameterError(f"unknown calibration kind {kind!r}")
    if kind == "isotonic":
        cal = IsotonicCalibrator()
        cal.breakpoints_ = np.asarray(d["breakpoints"], dtype=float)
        cal.values_ = np.asarray(d["values"], dtype=float)
        return cal
    return _KINDS[kind](**d)


def fit_beta(scores, labels, min_per_class=50):
    """Maximum-likelihood beta calibration; needs ``min_per_class`` scores per label."""
    _check_set(scores, labels, min_per_class)
    return BetaCalibrator().fit(scores, labels)


def fit_platt(scores, labels, min_per_class=50):
    _check_set(scores, labels, min_per_class)
    return PlattCalibrator().fit(scores, labels)


def fit_isotonic(scores, labels, min_per_class=1):
    _check_set(scores, labels, min_per_class)
    return IsotonicCalibrator().fit(scores, labels)


def is_monotone(cal, n_grid=1024):
    """Grid check that a map is nondecreasing and stays inside ``[0, 1]``."""
    v = cal.transform(np.linspace(0.0, 1.0, n_grid))
    return bool(np.all(np.diff(v) >= -1e-12) and np.all((v >= 0) & (v <= 1)))


def ece(scores, labels, bins=15, scheme="adaptive"):
    """Expected calibration error of binary predictions.

    Predictions are ``y_hat = 1(c >= 0.5)`` with confidence ``max(c, 1 - c)``.
    Pairs are binned on confidence, either into equal-width bins on
    ``[0.5, 1]`` (``"uniform"``) or equal-count bins (``"adaptive"``, edges
    at confidence quantiles, so tied confidences share a bin), and the
    result is ``sum_i |B_i| / N * |acc_i - conf_i|``.

    Parameters
    ----------
    scores : array_like
        Classifier probabilities of label 1.
    labels : array_like of {0, 1}
    bins : int, default=15
    scheme : {"adaptive", "uniform"}, default="adaptive"

    Returns
    -------
    float
    """
    if int(bins) < 1:
        raise ParameterError("bins must be >= 1")
    c = _check_scores(scores).ravel()
    y = np.asarray(labels).ravel()
    if c.size == 0 or c.size != y.size:
        raise ParameterError("need a nonempty set of matching scores and labels")
    yhat = (c >= 0.5).astype(float)
    correct = (yhat == y).astype(float)
    conf = np.where(c >= 0.5, c, 1.0 - c)
    n = c.size
    if scheme == "adaptive":
        inner = np.quantile(conf, np.linspace(0.0, 1.0, int(bins) + 1)[1:-1])
        idx = np.searchsorted(inner, conf, side="left")
    elif scheme == "uniform":
        edges = np.linspace(0.5, 1.0, int(bins) + 1)
        idx = np.clip(np.searchsorted(edges, conf, side="right") - 1, 0, int(bins) - 1)
    else:
        raise ParameterError(f"unknown binning scheme {scheme!r}")
    size = np.bincount(idx, minlength=int(bins))
    used = size > 0
    acc = np.bincount(idx, correct, minlength=int(bins))[used] / size[used]
    cbar = np.bincount(idx, conf, minlength=int(bins))[used] / size[used]
    return float(np.sum(size[used] / n * np.abs(acc - cbar)))


_FITTERS = {"beta": BetaCalibrator, "platt": PlattCalibrator, "isotonic": IsotonicCalibrator,
            "identity": IdentityCalibrator}


def calibrate_model(model, simulator, k, rng, n_pairs=10_000, method="beta"):
    """Fit one calibration map per head on freshly simulated scores.

    For head ``i`` the calibration set holds ``n_pairs`` joint samples
    (label 1) and ``n_pairs`` samples from the previous interpolating
    density (label 0), scored by the uncalibrated head.

    Parameters
    ----------
    model : BaseRatioModel
    simulator : callable
        ``simulator(theta, k, rng)`` returns series of shape ``(n, k)``.
    k : int
        Series length of the calibration set; recorded as
        ``calibrated_for_length``.
    rng : numpy.random.Generator
    n_pairs : int, default=10000
    method : {"beta", "platt", "isotonic", "identity"}

    Returns
    -------
    A calibrated copy of ``model``.
    """
    from .training import make_tre_batch

    if method not in _FITTERS:
        raise ParameterError(f"unknown calibration method {method!r}")
    box = model.box
    theta = box.sample(rng, n_pairs)
    X = simulator(theta, k, rng)
    summaries = model.encode(X)
    out = copy.deepcopy(model)
    maps = []
    for i in range(model.n_heads):
        batch = make_tre_batch(summaries[i], theta, box, i, rng)
        z = model.head_log_ratio(i, batch.inputs, batch.theta, calibrated=False)
        s = expit(z)
        if np.all((s < 1e-6) | (s > 1 - 1e-6)):
            warnings.warn(f"head {i}: all calibration scores are within 1e-6 of 0 or 1; calibration is unreliable",
                          CalibrationWarning, stacklevel=2)
        maps.append(_FITTERS[method]().fit(s, batch.labels))
    out.calibrators = maps
    out.calibrated_for_length = int(k)
    return out
