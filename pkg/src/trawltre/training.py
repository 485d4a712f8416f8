"""Classifier training sets for ratio estimation and the on-the-fly training loop."""

import csv
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.special import expit

from .box import SamplingBox
from .classifier import Adam, RatioModel, RecurrentEncoder, backward_and_step, bce_from_logits
from .distributions import nig3_to_nig4_array
from .exceptions import ParameterError, TrainingError
from .trawl import DEFAULT_TRUNCATION_EPS, KernelFamily, _leb_raw, simulate_batch

__all__ = [
    "SamplingBox",
    "TrainBatch",
    "TrainConfig",
    "MetricTrace",
    "TrawlSimulator",
    "default_box",
    "make_nre_batch",
    "make_tre_batch",
    "cyclic_shift",
    "random_derangement",
    "classification_metrics",
    "metrics",
    "kl_per_stage",
    "train",
]


@dataclass
class TrainBatch:
    """Balanced classification batch.

    Attributes
    ----------
    inputs : ndarray
        Series (``summary=False``) or encoder summaries (``summary=True``),
        one row per pair.
    theta : ndarray of shape (2N, m)
    labels : ndarray of shape (2N,)
        ``1`` for the first ``N`` rows, ``0`` for the rest.
    summary : bool
    """

    inputs: np.ndarray
    theta: np.ndarray
    labels: np.ndarray
    summary: bool = True

    def __len__(self):
        return self.labels.size


def cyclic_shift(n):
    """Permutation ``j -> j + 1 mod n``."""
    return (np.arange(n) + 1) % n


def random_derangement(n, rng):
    """Uniform random cyclic permutation (Sattolo), hence without fixed points."""
    perm = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i))
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def _permutation(n, rng, kind):
    if kind == "shift":
        return cyclic_shift(n)
    if kind == "derangement":
        return random_derangement(n, rng)
    raise ParameterError(f"unknown permutation kind {kind!r}")


def _check_pairs(x, theta):
    x = np.asarray(x, dtype=float)
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    if x.shape[0] != theta.shape[0]:
        raise ParameterError("x and theta need one row per pair")
    if theta.shape[0] < 2:
        raise ParameterError("need at least 2 joint pairs")
    return x, theta


def make_nre_batch(x, theta, rng=None, permutation="shift", summary=False):
    """Joint pairs against pairs with permuted parameters.

    Class 1 holds ``(x_j, theta_j)`` and class 0 holds ``(x_j, theta_sigma(j))``
    with ``sigma`` a cyclic shift or a random derangement.
    """
    x, theta = _check_pairs(x, theta)
    perm = _permutation(theta.shape[0], rng, permutation)
    n = theta.shape[0]
    return TrainBatch(
        np.concatenate([x, x]),
        np.concatenate([theta, theta[perm]]),
        np.concatenate([np.ones(n), np.zeros(n)]),
        summary,
    )


def make_tre_batch(x, theta, box, i, rng, tail="resample", summary=True):
    """Samples of the interpolating densities ``q_i`` (label 1) and ``q_{i-1}`` (label 0).

    With block ``i`` spanning coordinates ``start:end``, class 1 keeps the
    joint prefix ``theta_j[:end]`` and class 0 keeps ``theta_j[:start]``. The
    remaining coordinates are redrawn from the box (``tail="resample"``) or
    taken from cyclically shifted rows (``tail="shift"``).
    """
    x, theta = _check_pairs(x, theta)
    n, m = theta.shape
    start, end = box.blocks[i]
    pos = theta.copy()
    neg = theta.copy()
    if tail == "resample":
        if end < m:
            pos[:, end:] = box.sample(rng, n, end, m)
        neg[:, start:] = box.sample(rng, n, start, m)
    elif tail == "shift":
        perm = cyclic_shift(n)
        pos[:, end:] = theta[perm, end:]
        neg[:, start:] = theta[perm, start:]
    else:
        raise ParameterError(f"unknown tail scheme {tail!r}")
    return TrainBatch(np.concatenate([x, x]), np.concatenate([pos, neg]),
                      np.concatenate([np.ones(n), np.zeros(n)]), summary)


def default_box():
    """The sampling box of the NIG trawl study with the ACF block first."""
    return SamplingBox(
        lo=[10.0, 10.0, -1.0, 0.5, -5.0],
        hi=[20.0, 20.0, 1.0, 1.5, 5.0],
        names=["gamma_acf", "eta_acf", "mu", "sigma", "beta"],
        blocks=[("gamma_acf", "eta_acf"), ("mu",), ("sigma",), ("beta",)],
    )


_KERNEL_NAMES = {
    KernelFamily.INVERSE_GAUSSIAN: ("gamma_acf", "eta_acf"),
    KernelFamily.EXPONENTIAL: ("lambda_acf",),
}
_MARGINAL_NAMES = ("mu", "sigma", "beta")


class TrawlSimulator:
    """Simulator ``(theta, k, rng) -> series`` for NIG-marginal trawl processes.

    Columns of ``theta`` are matched to kernel and marginal parameters by
    the box coordinate names; parameters absent from the box come from
    ``fixed``.

    Parameters
    ----------
    names : sequence of str
        Coordinate names of ``theta``.
    kernel_family : {"inverse_gaussian", "exponential"}
    fixed : dict, optional
    chunk : int, default=256
        Maximum number of series simulated per call of the batch simulator.
    """

    def __init__(self, names, kernel_family="inverse_gaussian", fixed=None, dt=1.0,
                 truncation_eps=DEFAULT_TRUNCATION_EPS, chunk=256):
        self.names = tuple(names)
        self.kernel_family = KernelFamily(kernel_family)
        self.fixed = dict(fixed or {})
        self.dt = dt
        self.truncation_eps = truncation_eps
        self.chunk = int(chunk)
        for n in _KERNEL_NAMES[self.kernel_family] + _MARGINAL_NAMES:
            if n not in self.names and n not in self.fixed:
                raise ParameterError(f"parameter {n!r} is neither a coordinate nor fixed")

    def _column(self, theta, name):
        if name in self.names:
            return theta[:, self.names.index(name)]
        return np.full(theta.shape[0], float(self.fixed[name]))

    def __call__(self, theta, k, rng):
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        kp = np.stack([self._column(theta, n) for n in _KERNEL_NAMES[self.kernel_family]], axis=1)
        mu, sigma, beta = (self._column(theta, n) for n in _MARGINAL_NAMES)
        leb = _leb_raw(self.kernel_family, list(kp.T))
        seed = nig3_to_nig4_array(mu, sigma, beta)
        # marginal NIG(alpha, beta, delta, mu) -> unit-area seed (delta, mu scale with area)
        seed[:, 2] /= leb
        seed[:, 3] /= leb
        out = np.empty((theta.shape[0], int(k)))
        for s in range(0, theta.shape[0], self.chunk):
            sl = slice(s, s + self.chunk)
            out[sl] = simulate_batch(self.kernel_family, kp[sl], "nig", seed[sl], k, rng, self.dt,
                                     self.truncation_eps)
        return out

    def to_dict(self):
        return {"names": list(self.names), "kernel_family": self.kernel_family.value, "fixed": self.fixed,
                "dt": self.dt, "truncation_eps": self.truncation_eps}


@dataclass
class TrainConfig:
    """Training hyperparameters.

    Defaults follow the reference architecture scaled to desk budget:
    Adam at 5e-4 with cosine decay to 0.5%, batch 64, dropout 0.05, 4000
    iterations, summary-statistics encoder.
    """

    k: int = 200
    n_iter: int = 4000
    batch_size: int = 64
    lr: float = 5e-4
    alpha: float = 5e-3
    hidden: tuple = (64, 32, 16)
    activation: str = "tanh"
    dropout: float = 0.05
    encoder: str = "summary_stats"
    n_lags: int = 20
    n_moments: int = 4
    hidden_size: int = 16
    n_layers: int = 1
    eval_every: int = 100
    n_holdout: int = 512
    n_pilot: int = 1024
    tail: str = "resample"
    sim_chunk: int = 8
    divergence_factor: float = 10.0
    divergence_patience: int = 100

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.batch_size < 2 or self.n_iter < 0 or self.eval_every < 1:
            raise ParameterError("need batch_size >= 2, n_iter >= 0, eval_every >= 1")

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ParameterError(f"unknown training options {sorted(unknown)}")
        return cls(**d)


@dataclass
class MetricTrace:
    """Holdout metrics recorded during training, one row per (iteration, head)."""

    rows: list = field(default_factory=list)

    COLUMNS = ("iteration", "head", "bce", "acc", "S", "B")

    def append(self, iteration, head, values):
        self.rows.append((int(iteration), int(head), *map(float, values)))

    def as_array(self):
        return np.array(self.rows, dtype=float).reshape(-1, len(self.COLUMNS))

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([r[0], r[1], *(repr(v) for v in r[2:])])


def classification_metrics(logits, labels, log_prior=0.0):
    """BCE, accuracy, mean log posterior on class 1, and the balancing sum.

    Parameters
    ----------
    logits : array_like
        Classifier logits ``log r``.
    labels : array_like of {0, 1}
    log_prior : float
        Log density of the sampling prior over the scored coordinates.

    Returns
    -------
    bce, accuracy, S, B : float
        ``S`` is the mean of ``logit + log_prior`` over label-1 rows and
        ``B`` the mean probability on label-1 rows plus that on label-0 rows.
    """
    z = np.asarray(logits, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    if z.size == 0:
        raise ParameterError("empty holdout")
    pos, neg = y == 1, y == 0
    if not pos.any() or not neg.any():
        raise ParameterError("holdout needs both classes")
    c = expit(z)
    acc = float(np.mean((c >= 0.5) == pos))
    S = float(np.mean(z[pos]) + log_prior)
    B = float(np.mean(c[pos]) + np.mean(c[neg]))
    return bce_from_logits(z, y), acc, S, B


def metrics(model, holdout, head=None, calibrated=True):
    """Classification metrics of one head or of the whole model.

    For ``head=None`` the holdout holds raw series and the logit is the
    model log ratio; otherwise ``holdout.inputs`` are that head's summaries
    (or series when ``holdout.summary`` is false).
    """
    if len(holdout) == 0:
        raise ParameterError("empty holdout")
    if head is None:
        z = model.log_ratio(holdout.inputs, holdout.theta, calibrated)
        return classification_metrics(z, holdout.labels, model.box.log_density())
    S = holdout.inputs if holdout.summary else model.encode(holdout.inputs)[head]
    z = model.head_log_ratio(head, S, holdout.theta, calibrated)
    return classification_metrics(z, holdout.labels, model.box.block_log_density(head))


def kl_per_stage(model, samples, calibrated=True):
    """Per-stage divergence estimates ``S_i = mean log r_i`` over ``q_i`` samples.

    Parameters
    ----------
    model : BaseRatioModel
    samples : list of (inputs, theta)
        ``samples[i]`` are draws of ``q_i``; ``inputs`` are raw series.
    """
    out = np.empty(model.n_heads)
    for i, (x, th) in enumerate(samples):
        out[i] = np.mean(model.head_log_ratio(i, model.encode(x)[i], th, calibrated))
    return out


def _batch_inputs(model, i, summaries, X):
    return (summaries[i], True) if not isinstance(model.encoders[i], RecurrentEncoder) else (X, False)


def train(box, simulator, config, rng, callback=None, model=None):
    """Train one head per block on freshly simulated batches.

    Parameters
    ----------
    box : SamplingBox
    simulator : callable
        ``simulator(theta, k, rng)`` returning series of shape ``(n, k)``.
    config : TrainConfig
    rng : numpy.random.Generator
    callback : callable, optional
        Called as ``callback(iteration, theta, X)`` with every training batch.
    model : RatioModel, optional
        Continue training this model instead of building a new one.

    Returns
    -------
    model : RatioModel
    trace : MetricTrace
        Holdout metrics every ``eval_every`` iterations, starting at 0.

    Raises
    ------
    TrainingError
        If a head's training loss stays above ``divergence_factor`` times its
        initial loss for ``divergence_patience`` consecutive iterations; the
        partial trace is attached as ``exc.trace``.
    """
    cfg = config
    if model is None:
        model = RatioModel.build(box, cfg.encoder, cfg.hidden, cfg.activation, cfg.dropout, rng,
                                 n_lags=cfg.n_lags, n_moments=cfg.n_moments, hidden_size=cfg.hidden_size,
                                 n_layers=cfg.n_layers)
        pilot = box.sample(rng, cfg.n_pilot)
        model.fit_encoders(simulator(pilot, cfg.k, rng))
    model.metadata.update({"train_config": cfg.to_dict(), "trained_for_length": cfg.k})

    th_h = box.sample(rng, cfg.n_holdout)
    X_h = simulator(th_h, cfg.k, rng)
    summ_h = model.encode(X_h)
    holdouts = []
    for i in range(model.n_heads):
        inp, is_s = _batch_inputs(model, i, summ_h, X_h)
        holdouts.append(make_tre_batch(inp, th_h, box, i, rng, cfg.tail, is_s))

    trace = MetricTrace()

    def record(it):
        for i in range(model.n_heads):
            trace.append(it, i, metrics(model, holdouts[i], head=i, calibrated=False))

    record(0)
    optimizers = [Adam(model.head_parameters(i), cfg.lr, cfg.n_iter, cfg.alpha) for i in range(model.n_heads)]
    initial = [None] * model.n_heads
    streak = [0] * model.n_heads
    chunk = max(int(cfg.sim_chunk), 1)
    buf_theta = buf_X = None
    for it in range(1, cfg.n_iter + 1):
        pos = (it - 1) % chunk
        if pos == 0:
            n_sim = min(chunk, cfg.n_iter - it + 1) * cfg.batch_size
            buf_theta = box.sample(rng, n_sim)
            buf_X = simulator(buf_theta, cfg.k, rng)
        sl = slice(pos * cfg.batch_size, (pos + 1) * cfg.batch_size)
        theta, X = buf_theta[sl], buf_X[sl]
        if callback is not None:
            callback(it, theta, X)
        summaries = model.encode(X)
        for i in range(model.n_heads):
            inp, is_s = _batch_inputs(model, i, summaries, X)
            batch = make_tre_batch(inp, theta, box, i, rng, cfg.tail, is_s)
            loss = backward_and_step(model, i, batch, optimizers[i], rng)
            if initial[i] is None:
                initial[i] = loss
            streak[i] = streak[i] + 1 if loss > cfg.divergence_factor * initial[i] else 0
            if streak[i] >= cfg.divergence_patience:
                exc = TrainingError(f"head {i} diverged at iteration {it}: loss {loss:.4g} vs initial {initial[i]:.4g}")
                exc.trace = trace
                raise exc
        if it % cfg.eval_every == 0 or it == cfg.n_iter:
            record(it)
    model.reset_counters()
    return model, trace
