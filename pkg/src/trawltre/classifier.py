"""Per-block binary classifiers producing log likelihood-ratio estimates.

A ratio model is an ordered list of heads, one per parameter block. Head
``i`` sees an encoder summary of the series, the conditioning prefix of the
parameter vector and its own block, and emits the logit ``log r_i``. The
log ratio of the whole model is the sum of the head logits.
"""

import hashlib
import json
from pathlib import Path

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .box import SamplingBox
from .exceptions import ChecksumError, DomainError, ParameterError, TrainingError

__all__ = [
    "SummaryStatsEncoder",
    "RecurrentEncoder",
    "MLPHead",
    "BaseRatioModel",
    "RatioModel",
    "AnalyticRatioModel",
    "Adam",
    "bce_from_logits",
    "backward_and_step",
    "head_loss_and_grads",
    "CHECKPOINT_FORMAT",
]

CHECKPOINT_FORMAT = "trawltre-ratio-model"
CHECKPOINT_VERSION = 1


def _as_batch(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ParameterError("series input must be 1-D or a 2-D batch (n_series, k)")
    return X


def bce_from_logits(z, y):
    """Mean binary cross-entropy of logits ``z`` against labels ``y``."""
    z = np.asarray(z, dtype=float)
    with np.errstate(invalid="ignore"):
        return float(np.mean(np.logaddexp(0.0, z) - np.asarray(y) * z))


# ---------------------------------------------------------------------------
# Encoders


def summary_statistics(X, n_lags=20, n_moments=4):
    """Raw summary features of each series in ``X``.

    Sample ACF at lags ``1..n_lags`` (biased denominator) followed by the
    mean, standard deviation and standardized central moments ``3..n_moments``
    (the fourth reported as excess kurtosis).

    Parameters
    ----------
    X : array_like of shape (n_series, k) or (k,)

    Returns
    -------
    ndarray of shape (n_series, n_lags + n_moments)
    """
    X = _as_batch(X)
    k = X.shape[1]
    if k < n_lags + 1:
        raise DomainError(f"series of length {k} is shorter than n_lags + 1 = {n_lags + 1}")
    mean = X.mean(axis=1, keepdims=True)
    xc = X - mean
    c0 = np.sum(xc * xc, axis=1)
    safe = np.where(c0 > 0, c0, 1.0)
    feats = [np.sum(xc[:, :-h] * xc[:, h:], axis=1) / safe for h in range(1, n_lags + 1)]
    feats.append(mean[:, 0])
    if n_moments >= 2:
        var = c0 / k
        sd = np.sqrt(var)
        feats.append(sd)
        z = xc / np.where(sd > 0, sd, 1.0)[:, None]
        for j in range(3, n_moments + 1):
            mj = np.mean(z**j, axis=1)
            feats.append(mj - 3.0 if j == 4 else mj)
    return np.stack(feats, axis=1)


class SummaryStatsEncoder(TransformerMixin, BaseEstimator):
    """Empirical ACF and moment features, standardized on a pilot batch.

    Parameters
    ----------
    n_lags : int, default=20
        Number of autocorrelation lags.
    n_moments : int, default=4
        Number of moment features (mean, sd, skewness, excess kurtosis, ...).

    Attributes
    ----------
    shift_, scale_ : ndarray of shape (n_lags + n_moments,)
        Feature standardization fitted by :meth:`fit`.

    Examples
    --------
    >>> import numpy as np
    >>> enc = SummaryStatsEncoder(n_lags=2, n_moments=2).fit(np.random.default_rng(0).normal(size=(5, 50)))
    >>> enc.transform(np.zeros((1, 50)) + np.arange(50)).shape
    (1, 4)
    """

    kind = "summary_stats"

    def __init__(self, n_lags=20, n_moments=4):
        self.n_lags = n_lags
        self.n_moments = n_moments

    @property
    def output_dim(self):
        return self.n_lags + self.n_moments

    def _validate(self):
        if int(self.n_lags) < 1 or int(self.n_moments) < 1:
            raise ParameterError("n_lags and n_moments must be >= 1")

    def raw_features(self, X):
        self._validate()
        return summary_statistics(X, int(self.n_lags), int(self.n_moments))

    def fit(self, X, y=None):
        F = self.raw_features(X)
        self.shift_ = F.mean(axis=0)
        scale = F.std(axis=0)
        self.scale_ = np.where(scale > 1e-12, scale, 1.0)
        return self

    def transform(self, X):
        check_is_fitted(self, ("shift_", "scale_"))
        return (self.raw_features(X) - self.shift_) / self.scale_

    def to_dict(self):
        check_is_fitted(self, ("shift_", "scale_"))
        return {
            "kind": self.kind,
            "n_lags": int(self.n_lags),
            "n_moments": int(self.n_moments),
            "shift": self.shift_.tolist(),
            "scale": self.scale_.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        enc = cls(d["n_lags"], d["n_moments"])
        enc.shift_ = np.asarray(d["shift"], dtype=float)
        enc.scale_ = np.asarray(d["scale"], dtype=float)
        return enc


def _sigmoid(x):
    return expit(x)


class RecurrentEncoder:
    """Gated recurrent unit encoder; the summary is the final hidden state.

    Per layer the update is::

        z = sigmoid(x Wz + h Uz + bz)
        r = sigmoid(x Wr + h Ur + br)
        n = tanh(x Wn + (r * h) Un + bn)
        h' = (1 - z) * n + z * h

    Gates are stored stacked as ``Wx (d_in, 3H)``, ``Wh (H, 3H)``, ``b (3H,)``
    in the order ``z, r, n``. The scalar input is standardized with a shift
    and scale fitted on a pilot batch.

    Parameters
    ----------
    hidden_size : int, default=16
    n_layers : int, default=1
    rng : numpy.random.Generator, optional
        Initializes weights uniformly on ``±1/sqrt(hidden_size)``.
    """

    kind = "recurrent"

    def __init__(self, hidden_size=16, n_layers=1, rng=None, params=None):
        self.hidden_size = int(hidden_size)
        self.n_layers = int(n_layers)
        if self.hidden_size < 1 or self.n_layers < 1:
            raise ParameterError("hidden_size and n_layers must be >= 1")
        self.input_shift = 0.0
        self.input_scale = 1.0
        H = self.hidden_size
        if params is None:
            rng = np.random.default_rng(0) if rng is None else rng
            bound = 1.0 / np.sqrt(H)
            params = []
            for layer in range(self.n_layers):
                d_in = 1 if layer == 0 else H
                params += [
                    rng.uniform(-bound, bound, (d_in, 3 * H)),
                    rng.uniform(-bound, bound, (H, 3 * H)),
                    np.zeros(3 * H),
                ]
        self.params = [np.array(p, dtype=float) for p in params]

    @property
    def output_dim(self):
        return self.hidden_size

    def fit(self, X):
        X = _as_batch(X)
        self.input_shift = float(X.mean())
        sd = float(X.std())
        self.input_scale = sd if sd > 1e-12 else 1.0
        return self

    def forward(self, X):
        """Final hidden state of the top layer, shape (n_series, H), plus a cache."""
        X = _as_batch(X)
        B, k = X.shape
        H = self.hidden_size
        seq = ((X - self.input_shift) / self.input_scale)[:, :, None]
        caches = []
        for layer in range(self.n_layers):
            Wx, Wh, b = self.params[3 * layer : 3 * layer + 3]
            gx = seq @ Wx + b
            h = np.zeros((B, H))
            hs = np.empty((B, k + 1, H))
            hs[:, 0] = 0.0
            zs = np.empty((B, k, H))
            rs = np.empty((B, k, H))
            ns = np.empty((B, k, H))
            for t in range(k):
                ghzr = h @ Wh[:, : 2 * H]
                z = _sigmoid(gx[:, t, :H] + ghzr[:, :H])
                r = _sigmoid(gx[:, t, H : 2 * H] + ghzr[:, H:])
                n = np.tanh(gx[:, t, 2 * H :] + (r * h) @ Wh[:, 2 * H :])
                h = (1.0 - z) * n + z * h
                zs[:, t], rs[:, t], ns[:, t] = z, r, n
                hs[:, t + 1] = h
            caches.append((seq, hs, zs, rs, ns))
            seq = hs[:, 1:]
        return seq[:, -1], caches

    def __call__(self, X):
        return self.forward(X)[0]

    def backward(self, caches, dh_final):
        """Gradients of all parameters given the gradient at the final state."""
        H = self.hidden_size
        grads = [None] * len(self.params)
        dseq = None
        for layer in reversed(range(self.n_layers)):
            Wx, Wh, _ = self.params[3 * layer : 3 * layer + 3]
            seq, hs, zs, rs, ns = caches[layer]
            B, k, _ = zs.shape
            dout = np.zeros((B, k, H)) if dseq is None else dseq
            if dseq is None:
                dout[:, -1] = dh_final
            dg = np.empty((B, k, 3 * H))
            dWh = np.zeros_like(Wh)
            carry = np.zeros((B, H))
            for t in reversed(range(k)):
                dh = dout[:, t] + carry
                h_prev = hs[:, t]
                z, r, n = zs[:, t], rs[:, t], ns[:, t]
                dn_pre = dh * (1.0 - z) * (1.0 - n * n)
                dz_pre = dh * (h_prev - n) * z * (1.0 - z)
                drh = dn_pre @ Wh[:, 2 * H :].T
                dr_pre = drh * h_prev * r * (1.0 - r)
                dzr = np.concatenate([dz_pre, dr_pre], axis=1)
                dWh[:, : 2 * H] += h_prev.T @ dzr
                dWh[:, 2 * H :] += (r * h_prev).T @ dn_pre
                carry = dh * z + drh * r + dzr @ Wh[:, : 2 * H].T
                dg[:, t, : 2 * H] = dzr
                dg[:, t, 2 * H :] = dn_pre
            grads[3 * layer] = np.einsum("bti,btj->ij", seq, dg)
            grads[3 * layer + 1] = dWh
            grads[3 * layer + 2] = dg.sum(axis=(0, 1))
            dseq = dg @ Wx.T
        return grads

    def to_dict(self):
        return {
            "kind": self.kind,
            "hidden_size": self.hidden_size,
            "n_layers": self.n_layers,
            "input_shift": self.input_shift,
            "input_scale": self.input_scale,
            "params": [p.tolist() for p in self.params],
        }

    @classmethod
    def from_dict(cls, d):
        enc = cls(d["hidden_size"], d["n_layers"], params=d["params"])
        enc.input_shift = float(d["input_shift"])
        enc.input_scale = float(d["input_scale"])
        return enc


# ---------------------------------------------------------------------------
# Heads

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
    "relu": (lambda x: np.maximum(x, 0.0), lambda a: (a > 0).astype(float)),
}


class MLPHead:
    """Fully connected head for one parameter block.

    The input is the concatenation of the encoder summary and the parameter
    prefix ``theta[:end]`` mapped onto ``[-1, 1]``. The output is the logit
    ``log r_i = MLP(input) + offset`` with ``offset = -log p(block)``.

    Parameters
    ----------
    block : tuple of int
        ``(start, end)`` coordinate range of the block.
    summary_dim : int
    hidden : sequence of int, default=(64, 32, 16)
    activation : {"tanh", "relu"}, default="tanh"
    dropout : float, default=0.05
        Inverted dropout on hidden activations, training only.
    offset : float, default=0.0
        The constant ``-log p(block)`` of the uniform sampling box.
    rng : numpy.random.Generator, optional
        Weights and hidden biases are drawn from ``U(-1/sqrt(fan_in),
        1/sqrt(fan_in))``; the output bias is set to ``-offset`` so that the
        initial logit is near zero.
    zero : bool, default=False
        Initialize every weight and bias to zero.
    """

    def __init__(self, block, summary_dim, hidden=(64, 32, 16), activation="tanh", dropout=0.05,
                 offset=0.0, rng=None, zero=False, params=None):
        self.block = (int(block[0]), int(block[1]))
        if not 0 <= self.block[0] < self.block[1]:
            raise ParameterError("block must be a nonempty range (start, end)")
        self.summary_dim = int(summary_dim)
        self.hidden = tuple(int(h) for h in hidden)
        if activation not in _ACTIVATIONS:
            raise ParameterError(f"unknown activation {activation!r}")
        self.activation = activation
        if not 0.0 <= dropout < 1.0:
            raise ParameterError("dropout must be in [0, 1)")
        self.dropout = float(dropout)
        self.offset = float(offset)
        sizes = [self.summary_dim + self.block[1], *self.hidden, 1]
        if params is None:
            rng = np.random.default_rng(0) if rng is None else rng
            params = []
            for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
                bound = 1.0 / np.sqrt(fan_in)
                if zero:
                    params += [np.zeros((fan_in, fan_out)), np.zeros(fan_out)]
                else:
                    params += [rng.uniform(-bound, bound, (fan_in, fan_out)), rng.uniform(-bound, bound, fan_out)]
            if not zero:
                params[-1][:] = -self.offset
        self.params = [np.array(p, dtype=float) for p in params]
        shapes = [p.shape for p in self.params]
        expected = [s for a, b in zip(sizes[:-1], sizes[1:]) for s in ((a, b), (b,))]
        if shapes != expected:
            raise ParameterError(f"parameter shapes {shapes} do not match layer sizes {sizes}")

    @property
    def input_dim(self):
        return self.summary_dim + self.block[1]

    def forward(self, S, T, train=False, rng=None):
        """Logits for summaries ``S (..., E)`` and scaled prefixes ``T (..., end)``.

        Leading dimensions of ``S`` and ``T`` broadcast against each other.
        """
        act, _ = _ACTIVATIONS[self.activation]
        E = self.summary_dim
        W0, b0 = self.params[0], self.params[1]
        pre = S @ W0[:E] + T @ W0[E:] + b0
        acts, masks = [], []
        n_layers = len(self.params) // 2
        a = None
        for layer in range(n_layers):
            if layer > 0:
                W, b = self.params[2 * layer], self.params[2 * layer + 1]
                pre = a @ W + b
            if layer == n_layers - 1:
                break
            a = act(pre)
            acts.append(a)
            if train and self.dropout > 0.0:
                mask = (rng.random(a.shape) >= self.dropout) / (1.0 - self.dropout)
                a = a * mask
                masks.append(mask)
            else:
                masks.append(None)
        z = pre[..., 0] + self.offset
        return z, (S, T, acts, masks)

    def __call__(self, S, T):
        return self.forward(S, T)[0]

    def backward(self, cache, dz):
        """Parameter gradients and summary gradient for 2-D inputs."""
        S, T, acts, masks = cache
        _, dact = _ACTIVATIONS[self.activation]
        n_layers = len(self.params) // 2
        grads = [None] * len(self.params)
        d_pre = np.asarray(dz, dtype=float)[:, None]
        for layer in reversed(range(n_layers)):
            W = self.params[2 * layer]
            if layer > 0:
                a_in = acts[layer - 1] if masks[layer - 1] is None else acts[layer - 1] * masks[layer - 1]
            else:
                a_in = np.concatenate([np.broadcast_to(S, (T.shape[0], S.shape[-1])), T], axis=1)
            grads[2 * layer] = a_in.T @ d_pre
            grads[2 * layer + 1] = d_pre.sum(axis=0)
            d_in = d_pre @ W.T
            if layer > 0:
                if masks[layer - 1] is not None:
                    d_in = d_in * masks[layer - 1]
                d_pre = d_in * dact(acts[layer - 1])
        dS = d_in[:, : self.summary_dim]
        return grads, dS

    def to_dict(self):
        return {
            "block": list(self.block),
            "summary_dim": self.summary_dim,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "dropout": self.dropout,
            "offset": self.offset,
            "params": [p.tolist() for p in self.params],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["block"], d["summary_dim"], d["hidden"], d["activation"], d["dropout"], d["offset"],
                   params=d["params"])


# ---------------------------------------------------------------------------
# Ratio models


class BaseRatioModel:
    """Shared logic of learned and analytic ratio models.

    Subclasses implement ``_encode(X)`` returning one summary per head and
    ``_raw_head(i, summary, theta_prefix)`` returning uncalibrated logits.

    Attributes
    ----------
    calibrators : list or None
        Per-head calibration maps exposing ``transform_logit``.
    calibrated_for_length : int or None
        Series length the calibration maps were fitted at.
    n_encoder_evals, n_head_evals : int
        Number of series encoded and of parameter rows passed through heads.
    """

    def __init__(self, box):
        if not isinstance(box, SamplingBox):
            raise ParameterError("box must be a SamplingBox")
        self.box = box
        self.calibrators = None
        self.calibrated_for_length = None
        self.reset_counters()

    @property
    def n_heads(self):
        return self.box.n_blocks

    def reset_counters(self):
        self.n_encoder_evals = 0
        self.n_head_evals = 0

    def encode(self, X):
        """Per-head summaries of a series or a batch of series."""
        X = _as_batch(X)
        self.n_encoder_evals += X.shape[0]
        return self._encode(X)

    def head_log_ratio(self, i, summary, theta, calibrated=True):
        """Logit ``log r_i`` of head ``i``.

        ``summary`` is the ``i``-th entry of :meth:`encode` and must broadcast
        against the leading dimensions of ``theta``. Only coordinates up to
        the end of block ``i`` are read.
        """
        theta = np.asarray(theta, dtype=float)
        end = self.box.blocks[i][1]
        if theta.shape[-1] < end:
            raise ParameterError(f"head {i} needs the first {end} coordinates")
        self.box.check(theta, end)
        z = self._raw_head(i, summary, theta[..., :end])
        self.n_head_evals += int(np.prod(theta.shape[:-1], dtype=int))
        if calibrated and self.calibrators is not None:
            z = self.calibrators[i].transform_logit(z)
        return z

    def head_probability(self, i, summary, theta, calibrated=True):
        return expit(self.head_log_ratio(i, summary, theta, calibrated))

    def log_ratio(self, X, theta, calibrated=True):
        """Sum of head logits, with the series encoded once."""
        summaries = self.encode(X)
        return sum(self.head_log_ratio(i, summaries[i], theta, calibrated) for i in range(self.n_heads))

    def log_posterior(self, X, theta, calibrated=True):
        """Log posterior density under the uniform box prior."""
        return self.log_ratio(X, theta, calibrated) + self.box.log_density()


class RatioModel(BaseRatioModel):
    """Learned ratio model: encoder(s) plus one :class:`MLPHead` per block.

    Parameters
    ----------
    box : SamplingBox
    encoders : list
        One encoder per head. A parameter-free encoder may be shared by
        several heads and is then evaluated once per call.
    heads : list of MLPHead
    """

    def __init__(self, box, encoders, heads):
        super().__init__(box)
        if len(heads) != box.n_blocks or len(encoders) != box.n_blocks:
            raise ParameterError("need one head and one encoder per block")
        for i, (h, e) in enumerate(zip(heads, encoders)):
            if h.block != box.blocks[i]:
                raise ParameterError(f"head {i} covers {h.block}, box block is {box.blocks[i]}")
            if h.summary_dim != e.output_dim:
                raise ParameterError(f"head {i} expects summaries of size {h.summary_dim}")
        self.encoders = list(encoders)
        self.heads = list(heads)
        self.metadata = {}

    @classmethod
    def build(cls, box, encoder="summary_stats", hidden=(64, 32, 16), activation="tanh", dropout=0.05,
              rng=None, zero=False, n_lags=20, n_moments=4, hidden_size=16, n_layers=1):
        """Construct an untrained model with default-initialized heads."""
        rng = np.random.default_rng(0) if rng is None else rng
        if encoder == "summary_stats":
            shared = SummaryStatsEncoder(n_lags, n_moments)
            shared.shift_ = np.zeros(shared.output_dim)
            shared.scale_ = np.ones(shared.output_dim)
            encoders = [shared] * box.n_blocks
        elif encoder == "recurrent":
            encoders = [RecurrentEncoder(hidden_size, n_layers, rng=rng) for _ in range(box.n_blocks)]
        else:
            raise ParameterError(f"unknown encoder kind {encoder!r}")
        heads = [
            MLPHead(blk, encoders[i].output_dim, hidden, activation, dropout, -box.block_log_density(i), rng, zero)
            for i, blk in enumerate(box.blocks)
        ]
        return cls(box, encoders, heads)

    @classmethod
    def identity(cls, box, n_lags=20, n_moments=4):
        """Model whose every head returns logit 0 (ratio identically 1)."""
        model = cls.build(box, hidden=(1,), dropout=0.0, zero=True, n_lags=n_lags, n_moments=n_moments)
        for h in model.heads:
            h.params[-1][:] = -h.offset
        return model

    def _unique_encoders(self):
        seen = {}
        for e in self.encoders:
            seen.setdefault(id(e), e)
        return list(seen.values())

    def fit_encoders(self, X):
        """Fit encoder input/feature standardization on a pilot batch."""
        for e in self._unique_encoders():
            e.fit(X)
        return self

    def _encode(self, X):
        cache = {}
        out = []
        for e in self.encoders:
            if id(e) not in cache:
                cache[id(e)] = e.transform(X) if isinstance(e, SummaryStatsEncoder) else e(X)
            out.append(cache[id(e)])
        return out

    def _raw_head(self, i, summary, theta_prefix):
        T = self.box.to_unit(theta_prefix, self.box.blocks[i][1])
        return self.heads[i](np.asarray(summary, dtype=float), T)

    def head_parameters(self, i):
        """Trainable arrays of head ``i`` including a non-shared encoder."""
        params = list(self.heads[i].params)
        if isinstance(self.encoders[i], RecurrentEncoder):
            params += self.encoders[i].params
        return params

    # -- serialization --------------------------------------------------

    def to_dict(self):
        enc_ids = []
        enc_dicts = []
        for e in self.encoders:
            if not any(e is u for u in enc_ids):
                enc_ids.append(e)
                enc_dicts.append(e.to_dict())
        enc_index = [next(j for j, u in enumerate(enc_ids) if u is e) for e in self.encoders]
        calib = None
        if self.calibrators is not None:
            from .calibration import calibrator_to_dict

            calib = [calibrator_to_dict(c) for c in self.calibrators]
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "box": self.box.to_dict(),
            "encoders": enc_dicts,
            "encoder_index": enc_index,
            "heads": [h.to_dict() for h in self.heads],
            "calibration": calib,
            "calibrated_for_length": self.calibrated_for_length,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
            raise ParameterError("not a ratio-model checkpoint of a supported version")
        encs = []
        for ed in d["encoders"]:
            kind = ed["kind"]
            if kind == SummaryStatsEncoder.kind:
                encs.append(SummaryStatsEncoder.from_dict(ed))
            elif kind == RecurrentEncoder.kind:
                encs.append(RecurrentEncoder.from_dict(ed))
            else:
                raise ParameterError(f"unknown encoder kind {kind!r}")
        model = cls(SamplingBox.from_dict(d["box"]), [encs[j] for j in d["encoder_index"]],
                    [MLPHead.from_dict(h) for h in d["heads"]])
        if d.get("calibration") is not None:
            from .calibration import calibrator_from_dict

            model.calibrators = [calibrator_from_dict(c) for c in d["calibration"]]
        model.calibrated_for_length = d.get("calibrated_for_length")
        model.metadata = dict(d.get("metadata") or {})
        return model

    def save(self, path):
        """Write the checkpoint as JSON with a SHA-256 checksum of the payload."""
        payload = self.to_dict()
        body = _canonical_json(payload)
        doc = {"sha256": hashlib.sha256(body.encode()).hexdigest(), "model": payload}
        Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")

    @classmethod
    def load(cls, path):
        doc = json.loads(Path(path).read_text())
        payload = doc.get("model")
        if payload is None or "sha256" not in doc:
            raise ChecksumError(f"{path} is not a checksummed checkpoint")
        if hashlib.sha256(_canonical_json(payload).encode()).hexdigest() != doc["sha256"]:
            raise ChecksumError(f"checksum mismatch in {path}")
        return cls.from_dict(payload)


def _canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


class AnalyticRatioModel(BaseRatioModel):
    """Ratio model with closed-form head logits, used as an exact oracle.

    Parameters
    ----------
    box : SamplingBox
    head_fns : list of callable
        ``head_fns[i](s, theta_prefix)`` returns ``log r_i`` for summaries
        ``s (..., d)`` and prefixes ``theta_prefix (..., end_i)``, with
        broadcasting over leading dimensions.
    encoder : callable, optional
        Maps a batch of series ``(n, k)`` to summaries ``(n, d)``; the
        identity by default.
    """

    def __init__(self, box, head_fns, encoder=None):
        super().__init__(box)
        if len(head_fns) != box.n_blocks:
            raise ParameterError("need one function per block")
        self.head_fns = list(head_fns)
        self.encoder = encoder

    def _encode(self, X):
        S = X if self.encoder is None else np.asarray(self.encoder(X), dtype=float)
        return [S] * self.n_heads

    def _raw_head(self, i, summary, theta_prefix):
        z = np.asarray(self.head_fns[i](summary, theta_prefix), dtype=float)
        return np.broadcast_to(z, np.broadcast_shapes(z.shape, theta_prefix.shape[:-1])).copy()


# ---------------------------------------------------------------------------
# Optimization


class Adam:
    """Adam with a cosine-decayed learning rate.

    The rate at step ``t`` is ``lr * ((1 - alpha) * (1 + cos(pi * t / n_steps)) / 2 + alpha)``
    and stays at ``lr * alpha`` after ``n_steps``.

    Parameters
    ----------
    params : list of ndarray
        Updated in place.
    lr : float, default=5e-4
    n_steps : int or None
        Decay horizon; ``None`` keeps the rate constant.
    alpha : float, default=5e-3
        Final fraction of the initial rate.
    """

    def __init__(self, params, lr=5e-4, n_steps=None, alpha=5e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = float(lr)
        self.n_steps = n_steps
        self.alpha = float(alpha)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def learning_rate(self, t=None):
        t = self.t if t is None else t
        if not self.n_steps:
            return self.lr
        frac = min(t, self.n_steps) / self.n_steps
        return self.lr * ((1.0 - self.alpha) * 0.5 * (1.0 + np.cos(np.pi * frac)) + self.alpha)

    def step(self, grads):
        lr = self.learning_rate()
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if lr != 0.0:
                p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def head_loss_and_grads(model, i, batch, rng=None, train=True):
    """BCE loss of head ``i`` on ``batch`` and its gradients.

    ``batch`` carries ``inputs``, ``theta``, ``labels`` and ``summary``
    (whether ``inputs`` are already encoded). The returned gradients are
    ordered as :meth:`RatioModel.head_parameters`.
    """
    head = model.heads[i]
    enc = model.encoders[i]
    recurrent = isinstance(enc, RecurrentEncoder)
    enc_cache = None
    if batch.summary:
        S = np.asarray(batch.inputs, dtype=float)
    elif recurrent:
        S, enc_cache = enc.forward(batch.inputs)
    else:
        S = enc.transform(batch.inputs)
    end = head.block[1]
    T = model.box.to_unit(batch.theta, end)
    z, cache = head.forward(S, T, train=train, rng=rng)
    y = np.asarray(batch.labels, dtype=float)
    loss = bce_from_logits(z, y)
    dz = (expit(z) - y) / y.size
    grads, dS = head.backward(cache, dz)
    if recurrent:
        if enc_cache is None:
            raise TrainingError("recurrent encoders need raw series in the batch")
        grads += enc.backward(enc_cache, dS)
    return loss, grads, z


def backward_and_step(model, i, batch, optimizer, rng=None):
    """One Adam step on the BCE of head ``i``; returns the pre-step loss."""
    loss, grads, z = head_loss_and_grads(model, i, batch, rng=rng, train=True)
    if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
        zf = z[np.isfinite(z)]
        rng_txt = f"({zf.min()}, {zf.max()})" if zf.size else "all non-finite"
        raise TrainingError(f"non-finite loss or gradient in head {i} at step {optimizer.t}: loss={loss}, "
                            f"finite logit range={rng_txt}, {zf.size}/{z.size} finite")
    optimizer.step(grads)
    return loss
