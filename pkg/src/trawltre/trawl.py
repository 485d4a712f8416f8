"""Trawl functions, autocorrelations and grid simulation of trawl processes.

A trawl process on the grid ``t_i = i * dt`` is ``X_i = L(A_i)`` where the
trawl sets ``A_i`` are translates of ``A = {(s, y): s <= 0, 0 <= y <= a(s)}``.
On the grid the overlapping sets are cut into slices: slice ``(m, j)`` has
area ``d_j`` and belongs to ``A_i`` for ``i = m, ..., m + j``, so

    X_i = sum_{j=0}^{T} sum_{m=i-j}^{i} Z_{m, j},   Z_{m, j} ~ L(area d_j).

``d_j`` is the second difference of the overlap areas ``c_j = Leb(A) acf(j dt)``
and the last slice ``d_T`` absorbs everything beyond the truncation lag.

Inside a window of ``k`` observations only the clipped interval
``[max(m, 0), min(m + j, k - 1)]`` of a slice matters, and slices sharing a
clipped interval can be merged into one draw because the seed is closed under
convolution. The simulator draws one value per distinct interval, which has
the same law as the slice-by-slice construction at ``O(k * min(T, k))`` cost.
"""

from dataclasses import dataclass
from enum import Enum
import math

import numpy as np

from .distributions import (
    Nig3Params,
    SeedFamily,
    SeedSpec,
    _sample_params,
    moments,
    nig3_to_nig4,
    scale_by_area,
)
from .exceptions import DegenerateError, DomainError, KernelError, MemoryBudgetError, ParameterError

__all__ = [
    "KernelFamily",
    "TrawlKernel",
    "TrawlModel",
    "TimeSeries",
    "acf",
    "leb_A",
    "trawl_function",
    "truncation_lag",
    "slice_areas",
    "implied_acf",
    "simulate",
    "simulate_batch",
    "standardize",
    "destandardize",
]

DEFAULT_TRUNCATION_EPS = 1e-4
MAX_TRUNCATION_LAG = 10_000_000
DEFAULT_CELL_BUDGET = 5_000_000_000


class KernelFamily(str, Enum):
    EXPONENTIAL = "exponential"
    INVERSE_GAUSSIAN = "inverse_gaussian"


_KERNEL_PARAMS = {
    KernelFamily.EXPONENTIAL: ("lam",),
    KernelFamily.INVERSE_GAUSSIAN: ("gamma", "eta"),
}


@dataclass(frozen=True)
class TrawlKernel:
    """Trawl function family and parameters.

    ``exponential``: ``a(s) = exp(lam s)``, acf ``exp(-lam h)``.
    ``inverse_gaussian``: ``a(s) = (1 - 2s/gamma^2)^(-1/2) exp(eta (1 - sqrt(1 - 2s/gamma^2)))``,
    acf ``exp(eta (1 - sqrt(1 + 2h/gamma^2)))``.
    """

    family: KernelFamily
    params: tuple

    def __post_init__(self):
        family = KernelFamily(self.family)
        params = tuple(float(p) for p in np.atleast_1d(self.params))
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "params", params)
        if len(params) != len(_KERNEL_PARAMS[family]):
            raise ParameterError(f"{family.value} kernel expects params {_KERNEL_PARAMS[family]}")
        if not all(math.isfinite(p) and p > 0 for p in params):
            raise ParameterError(f"kernel parameters must be finite and > 0, got {params}")

    @classmethod
    def exponential(cls, lam):
        return cls(KernelFamily.EXPONENTIAL, (lam,))

    @classmethod
    def inverse_gaussian(cls, gamma, eta):
        return cls(KernelFamily.INVERSE_GAUSSIAN, (gamma, eta))

    def acf(self, h):
        return acf(self, h)

    def leb(self):
        return leb_A(self)


def _acf_raw(family, params, h):
    """Vectorised acf; ``params`` entries may be arrays broadcast against ``h``."""
    if family is KernelFamily.EXPONENTIAL:
        (lam,) = params
        return np.exp(-lam * h)
    gamma, eta = params
    return np.exp(eta * (1.0 - np.sqrt(1.0 + 2.0 * h / (gamma * gamma))))


def _leb_raw(family, params):
    if family is KernelFamily.EXPONENTIAL:
        return 1.0 / np.asarray(params[0], dtype=float)
    gamma, eta = (np.asarray(p, dtype=float) for p in params)
    return gamma * gamma / eta


def acf(kernel, h):
    """Autocorrelation ``rho(h)`` of the trawl process, ``h >= 0``.

    Examples
    --------
    >>> round(float(acf(TrawlKernel.exponential(1.0), 1.0)), 6)
    0.367879
    """
    h = np.asarray(h, dtype=float)
    if np.any(h < 0) or not np.all(np.isfinite(h)):
        raise DomainError("acf needs finite h >= 0")
    out = _acf_raw(kernel.family, kernel.params, h)
    return out[()] if out.ndim == 0 else out


def leb_A(kernel):
    """Lebesgue measure of the trawl set, ``int_{-inf}^0 a(s) ds``."""
    return float(_leb_raw(kernel.family, kernel.params))


def trawl_function(kernel, s):
    """Trawl function ``a(s)`` for ``s <= 0``."""
    s = np.asarray(s, dtype=float)
    if np.any(s > 0):
        raise DomainError("trawl function is defined for s <= 0")
    if kernel.family is KernelFamily.EXPONENTIAL:
        out = np.exp(kernel.params[0] * s)
    else:
        gamma, eta = kernel.params
        u = np.sqrt(1.0 - 2.0 * s / (gamma * gamma))
        out = np.exp(eta * (1.0 - u)) / u
    return out[()] if out.ndim == 0 else out


def _truncation_lag_raw(family, params, dt, eps):
    """Smallest j with acf(j dt) < eps (vectorised over parameter arrays)."""
    log_eps = math.log(eps)
    if family is KernelFamily.EXPONENTIAL:
        h = -log_eps / np.asarray(params[0], dtype=float)
    else:
        gamma, eta = (np.asarray(p, dtype=float) for p in params)
        h = 0.5 * gamma * gamma * ((1.0 - log_eps / eta) ** 2 - 1.0)
    j = np.floor(h / dt).astype(np.int64)
    # exact boundary: step up until the strict inequality holds
    j = np.maximum(j - 1, 0)
    for _ in range(3):
        still = _acf_raw(family, params, j * dt) >= eps
        j = j + still
    return j


@dataclass(frozen=True)
class TrawlModel:
    """Trawl kernel, Lévy seed and grid.

    Parameters
    ----------
    kernel : TrawlKernel
    seed : SeedSpec or Nig3Params
        A ``SeedSpec`` is the law of ``L`` on a unit-area set. A
        ``Nig3Params`` describes the marginal law of ``X_i`` instead and is
        converted to the seed ``NIG4`` scaled by ``1 / Leb(A)``.
    dt : float, default=1.0
        Grid spacing.
    truncation_eps : float, default=1e-4
        Slices beyond the first lag with ``acf < truncation_eps`` are merged.
    """

    kernel: TrawlKernel
    seed: SeedSpec
    dt: float = 1.0
    truncation_eps: float = DEFAULT_TRUNCATION_EPS

    def __post_init__(self):
        if isinstance(self.seed, Nig3Params):
            marginal = nig3_to_nig4(self.seed)
            object.__setattr__(self, "seed", scale_by_area(marginal, 1.0 / leb_A(self.kernel)))
        if not isinstance(self.seed, SeedSpec):
            raise ParameterError("seed must be a SeedSpec or Nig3Params")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ParameterError("dt must be > 0")
        if not 0 < self.truncation_eps < 1:
            raise ParameterError("truncation_eps must lie in (0, 1)")
        if self.seed.family is SeedFamily.GH:
            raise ParameterError("GH seeds cannot be simulated (not convolution-closed)")

    @property
    def leb(self):
        return leb_A(self.kernel)

    def marginal(self):
        """Law of each ``X_i``: the seed scaled by ``Leb(A)``."""
        return scale_by_area(self.seed, self.leb)


def truncation_lag(model):
    """``T = min{j : acf(j dt) < truncation_eps}``."""
    T = int(_truncation_lag_raw(model.kernel.family, model.kernel.params, model.dt, model.truncation_eps))
    if T > MAX_TRUNCATION_LAG:
        raise KernelError(f"truncation lag {T} is too large; kernel is close to non-decaying")
    return T


def _slice_areas_raw(family, params, dt, eps, T=None):
    """Slice areas for a batch of kernels, shape (B, Tmax + 1), zero padded."""
    params = [np.atleast_1d(np.asarray(p, dtype=float)) for p in params]
    Ts = np.atleast_1d(_truncation_lag_raw(family, params, dt, eps))
    if np.any(Ts > MAX_TRUNCATION_LAG):
        raise KernelError("truncation lag too large; kernel is close to non-decaying")
    Tmax = int(Ts.max()) if T is None else int(T)
    j = np.arange(Tmax + 3, dtype=float)
    leb = _leb_raw(family, params)[:, None]
    c = leb * _acf_raw(family, [p[:, None] for p in params], j[None, :] * dt)
    d = c[:, :-2] - 2.0 * c[:, 1:-1] + c[:, 2:]
    rows = np.arange(len(Ts))
    d[rows, Ts] = c[rows, Ts] - Ts / (Ts + 1.0) * c[rows, Ts + 1]
    d[j[None, : Tmax + 1] > Ts[:, None]] = 0.0
    if np.any(d < -1e-12):
        raise KernelError("negative slice area; trawl function is not monotone")
    return np.maximum(d, 0.0), Ts


def slice_areas(model):
    """Slice areas ``d_0, ..., d_T``.

    ``d_j = c_j - 2 c_{j+1} + c_{j+2}`` for ``j < T`` with
    ``c_j = Leb(A) acf(j dt)``; the tail ``d_T = c_T - T/(T+1) c_{T+1}``
    makes ``sum_j (j + 1) d_j = c_0`` exact.

    Returns
    -------
    ndarray of shape (T + 1,)
    """
    truncation_lag(model)
    d, _ = _slice_areas_raw(model.kernel.family, model.kernel.params, model.dt, model.truncation_eps)
    return d[0]


@dataclass(frozen=True)
class TimeSeries:
    """Observed or simulated series on a regular grid."""

    values: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise DomainError("a time series needs at least 2 values in a 1-D array")
        if not np.all(np.isfinite(v)):
            raise DomainError("time series values must be finite")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size


def _interval_areas(d, k):
    """Per-series areas of interior, boundary and full-window intervals.

    Returns (interior, boundary, full) with shapes (B, k - 2), (B, k - 1), (B,).
    ``interior[:, l]`` is the area of an interval of length ``l`` not touching
    the window edges; ``boundary[:, l]`` of one touching exactly one edge.
    """
    B, n = d.shape
    dpad = np.zeros((B, max(n, k + 1)))
    dpad[:, :n] = d
    tail = np.cumsum(dpad[:, ::-1], axis=1)[:, ::-1]  # tail[:, l] = sum_{j >= l} d_j
    interior = dpad[:, : max(k - 2, 0)]
    boundary = tail[:, : k - 1]
    j = np.arange(dpad.shape[1])
    weights = np.where(j >= k - 1, j - k + 2, 0)
    full = dpad @ weights
    return interior, boundary, full


def simulate_batch(
    kernel_family,
    kernel_params,
    seed_family,
    seed_params,
    k,
    rng,
    dt=1.0,
    truncation_eps=DEFAULT_TRUNCATION_EPS,
    cell_budget=DEFAULT_CELL_BUDGET,
):
    """Simulate a batch of trawl paths with per-path parameters.

    Parameters
    ----------
    kernel_family : KernelFamily or str
    kernel_params : array_like of shape (B, n_kernel_params)
    seed_family : SeedFamily or str
    seed_params : array_like of shape (B, n_seed_params)
        Unit-area seed parameters (NIG in four-parameter form).
    k : int
        Path length, ``k >= 2``.
    rng : numpy.random.Generator

    Returns
    -------
    ndarray of shape (B, k)
    """
    kernel_family = KernelFamily(kernel_family)
    seed_family = SeedFamily(seed_family)
    if seed_family is SeedFamily.GH:
        raise ParameterError("GH seeds cannot be simulated (not convolution-closed)")
    k = int(k)
    if k < 2:
        raise DomainError("k must be >= 2")
    kp = np.atleast_2d(np.asarray(kernel_params, dtype=float))
    sp = np.atleast_2d(np.asarray(seed_params, dtype=float))
    B = kp.shape[0]
    if sp.shape[0] != B:
        raise ParameterError("kernel_params and seed_params need the same number of rows")

    d, Ts = _slice_areas_raw(kernel_family, list(kp.T), dt, truncation_eps)
    L = int(min(Ts.max(), k - 1))
    if B * k * (L + 1) > cell_budget:
        raise MemoryBudgetError(f"simulation needs ~{B * k * (L + 1):.3g} cells, over the budget {cell_budget:.3g}")
    interior, boundary, full = _interval_areas(d, k)
    p = [sp[:, i : i + 1] for i in range(sp.shape[1])]

    # difference array: an interval [a, b] adds Z at a and removes it at b + 1
    diff = np.zeros((B, k + 1))
    # one edge: [0, l] and [k-1-l, k-1] for l = 0..k-2
    lb = min(L, k - 2)
    areas = boundary[:, : lb + 1]
    z_left = _sample_params(seed_family, p, areas, rng)
    z_right = _sample_params(seed_family, p, areas, rng)
    diff[:, 0] += z_left.sum(axis=1)
    diff[:, 1 : lb + 2] -= z_left
    diff[:, k - 1 - lb : k] += z_right[:, ::-1]
    # interior intervals [a, a + l], a = 1..k-2-l
    for ell in range(0, min(L, k - 3) + 1):
        n = k - 2 - ell
        area = np.broadcast_to(interior[:, ell : ell + 1], (B, n))
        z = _sample_params(seed_family, p, area, rng)
        diff[:, 1 : 1 + n] += z
        diff[:, ell + 2 : ell + 2 + n] -= z
    # the full window
    z_full = _sample_params(seed_family, p, full[:, None], rng)[:, 0]
    diff[:, 0] += z_full
    return np.cumsum(diff[:, :k], axis=1)


def simulate(model, k, rng):
    """Simulate ``k`` consecutive observations of a trawl process.

    Parameters
    ----------
    model : TrawlModel
    k : int
    rng : numpy.random.Generator

    Returns
    -------
    TimeSeries
    """
    truncation_lag(model)
    x = simulate_batch(
        model.kernel.family,
        [model.kernel.params],
        model.seed.family,
        [model.seed.params],
        k,
        rng,
        dt=model.dt,
        truncation_eps=model.truncation_eps,
    )
    return TimeSeries(x[0], dt=model.dt)


def implied_acf(model, lags):
    """Exact autocorrelation of the truncated slice construction.

    ``sum_{j >= h} (j + 1 - h) d_j / sum_j (j + 1) d_j``; differs from
    :func:`acf` only through truncation.
    """
    d = slice_areas(model)
    j = np.arange(d.size)
    lags = np.atleast_1d(np.asarray(lags, dtype=int))
    num = np.array([np.sum(np.clip(j + 1 - h, 0, None) * d) for h in lags])
    return num / np.sum((j + 1) * d)


def marginal_moments(model):
    """Mean and variance of ``X_i`` (``Leb(A)``-scaled seed moments)."""
    m, v = moments(model.seed)
    return m * model.leb, v * model.leb


def standardize(series):
    """Centre and scale a series by its mean and sample standard deviation.

    Returns
    -------
    standardized : TimeSeries
    mean : float
    sd : float
        Sample standard deviation (``ddof=1``).
    """
    if not isinstance(series, TimeSeries):
        series = TimeSeries(series)
    x = series.values
    mean = float(x.mean())
    sd = float(x.std(ddof=1))
    if not sd > 0:
        raise DegenerateError("series has zero variance")
    return TimeSeries((x - mean) / sd, dt=series.dt), mean, sd


def destandardize(series, mean, sd):
    """Invert :func:`standardize`."""
    if not isinstance(series, TimeSeries):
        series = TimeSeries(series)
    return TimeSeries(series.values * sd + mean, dt=series.dt)
