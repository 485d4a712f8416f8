"""Chebyshev interpolation of black-box densities and inverse-transform sampling.

A function on ``[lo, hi]`` is interpolated at the ``N + 1`` Chebyshev points
of the second kind ``cos(k pi / N)`` (mapped to the interval). The
coefficients of ``sum_n a_n T_n`` come from a type-I discrete cosine
transform, evaluation uses Clenshaw's recurrence, and integration is exact
on the coefficients. Sampling inverts the normalised antiderivative by a
fixed number of bisection steps, which vectorises over many draws and over
many independent series at once.

Batched helpers (``*_batch`` / leading axes on coefficient arrays) are used
by the posterior sampler, where every draw carries its own conditional
density.
"""

from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

from .exceptions import DegenerateError, DomainError, EvaluationError

__all__ = [
    "ChebSeries",
    "ChebCdf",
    "ChebSurface",
    "NegativeDensityError",
    "chebyshev_knots",
    "coefficients_from_values",
    "clenshaw",
    "antiderivative_coefficients",
    "fit",
    "evaluate",
    "antiderivative",
    "cdf",
    "invert",
    "fit2d",
    "sample2d",
    "bisect_batch",
    "newton_batch",
    "derivative_coefficients",
    "chebyshev_basis",
    "surface_coefficients",
    "marginal_x_coefficients",
    "values_on_grid",
    "negative_rows",
    "surface_values",
    "surface_negative_rows",
    "sample2d_batch",
]

BISECTION_STEPS = 52
NEGATIVITY_GRID = 1024
NEGATIVITY_TOL = 1e-8


class NegativeDensityError(DegenerateError):
    """Interpolated density dips below zero by more than the tolerance."""


def chebyshev_knots(N, lo=-1.0, hi=1.0):
    """Knots ``cos(k pi / N)``, ``k = 0..N``, mapped to ``[lo, hi]`` (descending)."""
    t = np.cos(np.pi * np.arange(N + 1) / N)
    return 0.5 * (hi + lo) + 0.5 * (hi - lo) * t


def coefficients_from_values(values, axis=-1):
    """Chebyshev coefficients of the interpolant through knot values.

    ``values`` are ordered like :func:`chebyshev_knots` along ``axis``.
    """
    values = np.asarray(values, dtype=float)
    N = values.shape[axis] - 1
    if N < 1:
        raise ValueError("need at least 2 knots")
    c = dct(values, type=1, axis=axis) / N
    c = np.moveaxis(c, axis, -1)
    c[..., 0] *= 0.5
    c[..., -1] *= 0.5
    return np.moveaxis(c, -1, axis)


def clenshaw(coeffs, t):
    """Evaluate ``sum_n c_n T_n(t)`` for ``t`` in ``[-1, 1]``.

    ``coeffs`` has shape ``batch + (N + 1,)``; ``t`` has shape ``batch`` or
    ``batch + extra`` and each series is evaluated at its own points.
    """
    c = np.asarray(coeffs, dtype=float)
    t = np.asarray(t, dtype=float)
    batch = c.shape[:-1]
    extra = t.ndim - len(batch)
    if extra < 0:
        t = np.broadcast_to(t, batch)
        extra = 0
    col = lambda k: c[..., k].reshape(batch + (1,) * extra)
    b1 = np.zeros(np.broadcast_shapes(batch + (1,) * extra, t.shape))
    b2 = np.zeros_like(b1)
    tt = 2.0 * t
    for k in range(c.shape[-1] - 1, 0, -1):
        b1, b2 = col(k) + tt * b1 - b2, b1
    return col(0) + t * b1 - b2


def antiderivative_coefficients(coeffs, scale=1.0):
    """Coefficients (one longer) of the antiderivative vanishing at ``t = -1``.

    Uses ``b_k = (c_{k-1} a_{k-1} - a_{k+1}) / (2k)`` with ``c_0 = 2`` and
    ``c_k = 1`` otherwise, then multiplies by ``scale`` (the interval
    half-width for a mapped series).
    """
    a = np.asarray(coeffs, dtype=float)
    n = a.shape[-1]
    ap = np.zeros(a.shape[:-1] + (n + 2,))
    ap[..., :n] = a
    ap[..., 0] *= 2.0
    k = np.arange(1, n + 1)
    b = np.zeros(a.shape[:-1] + (n + 1,))
    b[..., 1:] = (ap[..., k - 1] - ap[..., k + 1]) / (2.0 * k)
    sign = (-1.0) ** np.arange(n + 1)
    b[..., 0] = -np.sum(b[..., 1:] * sign[1:], axis=-1)
    return b * scale


@dataclass(frozen=True)
class ChebSeries:
    """Chebyshev series ``sum_n a_n T_n`` on ``[lo, hi]``."""

    coeffs: np.ndarray
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float, ndmin=1)
        if c.ndim != 1:
            raise ValueError("coeffs must be 1-D")
        if not self.lo < self.hi:
            raise DomainError("need lo < hi")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "hi", float(self.hi))

    @property
    def degree(self):
        return self.coeffs.size - 1

    def to_unit(self, x):
        return (2.0 * np.asarray(x, dtype=float) - (self.lo + self.hi)) / (self.hi - self.lo)

    def __call__(self, x):
        return evaluate(self, x)


def fit(f, interval, N):
    """Interpolate ``f`` at ``N + 1`` Chebyshev knots on ``interval``.

    Parameters
    ----------
    f : callable
        Vectorised function of one array argument.
    interval : (float, float)
    N : int
        Degree of the interpolant.

    Returns
    -------
    ChebSeries

    Raises
    ------
    EvaluationError
        If ``f`` is not finite at some knot.
    """
    lo, hi = map(float, interval)
    N = int(N)
    if N < 1:
        raise ValueError("N must be >= 1")
    x = chebyshev_knots(N, lo, hi)
    y = np.asarray(f(x), dtype=float)
    bad = ~np.isfinite(y)
    if np.any(bad):
        raise EvaluationError(f"f is not finite at knot {x[np.argmax(bad)]}")
    return ChebSeries(coefficients_from_values(y), lo, hi)


def evaluate(s, x):
    """Value of the series at ``x`` (Clenshaw).

    Raises
    ------
    DomainError
        If ``x`` lies outside the interval.
    """
    x = np.asarray(x, dtype=float)
    slack = 1e-12 * (s.hi - s.lo)
    if np.any(x < s.lo - slack) or np.any(x > s.hi + slack):
        raise DomainError(f"x outside [{s.lo}, {s.hi}]")
    out = clenshaw(s.coeffs, np.clip(s.to_unit(x), -1.0, 1.0))
    return out[()] if np.ndim(out) == 0 else out


def antiderivative(s):
    """Series of ``int_lo^x s``; degree grows by one."""
    return ChebSeries(antiderivative_coefficients(s.coeffs, 0.5 * (s.hi - s.lo)), s.lo, s.hi)


def _check_negativity(values, tol, where=""):
    vmax = np.max(np.abs(values))
    vmin = np.min(values)
    if vmin < -tol * max(vmax, np.finfo(float).tiny):
        raise NegativeDensityError(f"interpolated density reaches {vmin:.3g} (max {vmax:.3g}){where}")


@dataclass(frozen=True)
class ChebCdf:
    """Normalised antiderivative of a nonnegative series."""

    antiderivative: ChebSeries
    total_mass: float

    @property
    def lo(self):
        return self.antiderivative.lo

    @property
    def hi(self):
        return self.antiderivative.hi

    def __call__(self, x):
        out = np.clip(evaluate(self.antiderivative, x) / self.total_mass, 0.0, 1.0)
        return out[()] if np.ndim(out) == 0 else out

    def invert(self, u):
        return invert(self, u)


def cdf(s, neg_tol=NEGATIVITY_TOL):
    """Cumulative distribution function of the (unnormalised) density ``s``.

    Ripple below zero of relative size ``neg_tol`` on a 1024-point grid is
    tolerated; larger negativity raises :class:`NegativeDensityError`.
    """
    grid = np.linspace(s.lo, s.hi, NEGATIVITY_GRID)
    _check_negativity(evaluate(s, grid), neg_tol)
    F = antiderivative(s)
    mass = float(evaluate(F, s.hi))
    if not mass > 0 or not np.isfinite(mass):
        raise DegenerateError(f"total mass {mass} is not positive")
    return ChebCdf(F, mass)


def bisect_batch(anti_coeffs, mass, u, lo, hi, steps=BISECTION_STEPS):
    """Solve ``F_i(x_i) = u_i mass_i`` for many antiderivative series at once.

    Parameters
    ----------
    anti_coeffs : ndarray of shape batch + (n,)
        Antiderivative coefficients on ``[lo, hi]`` (value 0 at ``lo``).
    mass : ndarray of shape batch
    u : ndarray of shape batch or batch + extra
    lo, hi : float

    Returns
    -------
    ndarray shaped like ``u``
    """
    anti_coeffs = np.asarray(anti_coeffs, dtype=float)
    batch = anti_coeffs.shape[:-1]
    u = np.asarray(u, dtype=float)
    extra = u.ndim - len(batch)
    target = u * np.asarray(mass, dtype=float).reshape(batch + (1,) * max(extra, 0))
    a = np.full(target.shape, -1.0)
    b = np.full(target.shape, 1.0)
    for _ in range(steps):
        m = 0.5 * (a + b)
        below = clenshaw(anti_coeffs, m) < target
        a = np.where(below, m, a)
        b = np.where(below, b, m)
    t = 0.5 * (a + b)
    return 0.5 * (hi + lo) + 0.5 * (hi - lo) * t


def derivative_coefficients(coeffs, scale=1.0):
    """Coefficients of the derivative in ``t``, divided by ``scale``.

    Uses ``d_{k-1} = d_{k+1} + 2 k a_k`` with ``d_0`` halved at the end.
    """
    a = np.asarray(coeffs, dtype=float)
    n = a.shape[-1]
    d = np.zeros(a.shape[:-1] + (n + 1,))
    for k in range(n - 1, 0, -1):
        d[..., k - 1] = d[..., k + 1] + 2.0 * k * a[..., k]
    d[..., 0] *= 0.5
    return d[..., : max(n - 1, 1)] / scale


def newton_batch(anti_coeffs, mass, u, lo, hi, n_grid=512, steps=8, chunk=1 << 22):
    """Same contract as :func:`bisect_batch`, by grid bracketing and safeguarded Newton.

    The antiderivative is tabulated at ``n_grid`` Chebyshev points to bracket
    each root, then ``steps`` Newton iterations run inside the bracket, with a
    bisection step whenever Newton leaves it. The bracket only shrinks, so the
    result lies within one grid cell of the root even for flat stretches.
    Rows with fewer than 64 targets use the coarsest grid and two extra steps.
    """
    anti_coeffs = np.asarray(anti_coeffs, dtype=float)
    batch = anti_coeffs.shape[:-1]
    u = np.asarray(u, dtype=float)
    if u.ndim < len(batch):
        u = np.broadcast_to(u, batch)
    shape = u.shape
    n = anti_coeffs.shape[-1]
    R = int(np.prod(batch))
    A = anti_coeffs.reshape(R, n)
    m = np.broadcast_to(np.asarray(mass, dtype=float), batch).reshape(R)
    U = u.reshape(R, -1)
    # a fine bracketing grid pays off only when many targets share a row
    G, steps = (max(int(n_grid), n), steps) if U.shape[1] >= 64 else (n, steps + 2)
    out = np.empty(U.shape)
    step = max(1, chunk // max(G, U.shape[1]))
    for s in range(0, R, step):
        sl = slice(s, min(s + step, R))
        out[sl] = _newton_rows(A[sl], m[sl], U[sl], G, steps)
    return 0.5 * (hi + lo) + 0.5 * (hi - lo) * out.reshape(shape)


def _newton_rows(A, m, U, G, steps):
    R = A.shape[0]
    tg = np.cos(np.pi * np.arange(G) / (G - 1))[::-1]
    Fg = np.maximum.accumulate(values_on_grid(A, G)[:, ::-1] / m[:, None], axis=1)
    # one global sorted array: row r occupies keys near [4r, 4r + 1]
    off = 4.0 * np.arange(R)[:, None]
    j = np.searchsorted((Fg + off).ravel(), (U + off).ravel()).reshape(U.shape)
    j = np.clip(j - G * np.arange(R)[:, None], 1, G - 1)
    a, b = tg[j - 1], tg[j]
    target = U * m[:, None]
    dens = derivative_coefficients(A)
    x = 0.5 * (a + b)
    for _ in range(steps):
        F = clenshaw(A, x) - target
        f = clenshaw(dens, x)
        a = np.where(F < 0, x, a)
        b = np.where(F < 0, b, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = x - F / f
        ok = (f > 0) & (xn >= a) & (xn <= b)
        x = np.where(ok, xn, 0.5 * (a + b))
    return x


def invert(c, u):
    """Quantile of a :class:`ChebCdf` by 52 bisection steps (no early exit)."""
    u = np.asarray(u, dtype=float)
    if np.any(u < 0) or np.any(u > 1):
        raise DomainError("u must lie in [0, 1]")
    out = bisect_batch(c.antiderivative.coeffs, c.total_mass, u, c.lo, c.hi)
    return out[()] if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# bivariate


@dataclass(frozen=True)
class ChebSurface:
    """Tensor Chebyshev series ``sum_ij c_ij T_i(x) T_j(y)`` on a rectangle."""

    coeffs: np.ndarray
    x_interval: tuple
    y_interval: tuple

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float, ndmin=2)
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "x_interval", tuple(map(float, self.x_interval)))
        object.__setattr__(self, "y_interval", tuple(map(float, self.y_interval)))

    def __call__(self, x, y):
        (xl, xh), (yl, yh) = self.x_interval, self.y_interval
        tx = (2.0 * np.asarray(x, dtype=float) - (xl + xh)) / (xh - xl)
        ty = (2.0 * np.asarray(y, dtype=float) - (yl + yh)) / (yh - yl)
        tx, ty = np.broadcast_arrays(tx, ty)
        nx, ny = self.coeffs.shape
        vals = np.einsum("pi,ij,pj->p", chebyshev_basis(tx.ravel(), nx), self.coeffs, chebyshev_basis(ty.ravel(), ny))
        return vals.reshape(tx.shape)[()] if tx.ndim == 0 else vals.reshape(tx.shape)


def chebyshev_basis(t, n):
    """Matrix ``T_j(t_p)`` of shape (len(t), n) by the three-term recurrence."""
    t = np.asarray(t, dtype=float)
    out = np.empty(t.shape + (n,))
    out[..., 0] = 1.0
    if n > 1:
        out[..., 1] = t
    for j in range(2, n):
        out[..., j] = 2.0 * t * out[..., j - 1] - out[..., j - 2]
    return out


def fit2d(f, rectangle, Nx, Ny):
    """Tensor-product interpolant of ``f(x, y)`` on ``rectangle``.

    Parameters
    ----------
    f : callable
        Vectorised ``f(X, Y)`` on meshgrid arrays.
    rectangle : ((float, float), (float, float))
    Nx, Ny : int
    """
    (xl, xh), (yl, yh) = rectangle
    xk = chebyshev_knots(Nx, xl, xh)
    yk = chebyshev_knots(Ny, yl, yh)
    X, Y = np.meshgrid(xk, yk, indexing="ij")
    V = np.asarray(f(X, Y), dtype=float)
    if not np.all(np.isfinite(V)):
        raise EvaluationError("f is not finite at some knot")
    return ChebSurface(surface_coefficients(V), (xl, xh), (yl, yh))


def surface_coefficients(values):
    """2-D coefficients from knot values of shape (..., Nx + 1, Ny + 1)."""
    return coefficients_from_values(coefficients_from_values(values, axis=-2), axis=-1)


def _t_integrals(n):
    """``int_{-1}^{1} T_j``: ``2 / (1 - j^2)`` for even j, 0 for odd j."""
    j = np.arange(n)
    out = np.zeros(n)
    even = j % 2 == 0
    out[even] = 2.0 / (1.0 - j[even] ** 2)
    return out


def marginal_x_coefficients(coeffs, y_halfwidth):
    """Coefficients in x of ``int f(x, y) dy`` for coefficient arrays (..., nx, ny)."""
    return np.asarray(coeffs) @ _t_integrals(np.shape(coeffs)[-1]) * y_halfwidth


def values_on_grid(coeffs, n_grid):
    """Values of each series at the ``n_grid`` points ``cos(j pi / (n_grid - 1))``.

    Uses one type-I DCT of the zero-padded coefficients, so a batch of
    series is checked in ``O(n_grid log n_grid)`` each.
    """
    c = np.asarray(coeffs, dtype=float)
    n = c.shape[-1]
    N = n_grid - 1
    if n > n_grid:
        raise ValueError("grid must have at least as many points as coefficients")
    pad = np.zeros(c.shape[:-1] + (n_grid,))
    pad[..., :n] = c
    out = dct(pad, type=1, axis=-1) + pad[..., :1] + pad[..., N : N + 1] * (-1.0) ** np.arange(n_grid)
    return 0.5 * out


def negative_rows(coeffs, neg_tol=NEGATIVITY_TOL, n_grid=NEGATIVITY_GRID, chunk=8192):
    """Boolean mask of series (rows) whose values dip below ``-neg_tol * max|value|``."""
    c = np.asarray(coeffs, dtype=float)
    flat = c.reshape(-1, c.shape[-1])
    bad = np.zeros(flat.shape[0], dtype=bool)
    # rows whose trailing quarter of coefficients is far below the tolerance are
    # resolved: the interpolant sits within that tail of a positive function.
    # max|p| is bounded below by |a_0| and by the end values |p(1)|, |p(-1)|.
    n = flat.shape[1]
    tail = np.sum(np.abs(flat[:, n - max(n // 4, 1) :]), axis=1)
    alt = (-1.0) ** np.arange(n)
    floor = np.maximum(np.abs(flat[:, 0]), np.maximum(np.abs(flat.sum(axis=1)), np.abs(flat @ alt)))
    todo = np.flatnonzero(~(tail < 0.1 * neg_tol * floor) | (flat[:, 0] <= 0))
    for s in range(0, todo.size, chunk):
        rows = todo[s : s + chunk]
        v = values_on_grid(flat[rows], max(n_grid, n))
        vmax = np.max(np.abs(v), axis=1)
        bad[rows] = np.min(v, axis=1) < -neg_tol * np.maximum(vmax, np.finfo(float).tiny)
    return bad.reshape(c.shape[:-1])


def surface_values(coeffs, tx, ty):
    """Evaluate surfaces ``coeffs (S, nx, ny)`` at unit-square points ``tx, ty (S, P)``."""
    nx, ny = coeffs.shape[-2:]
    return np.einsum("spi,sij,spj->sp", chebyshev_basis(tx, nx), coeffs, chebyshev_basis(ty, ny))


def surface_negative_rows(coeffs, neg_tol=NEGATIVITY_TOL, n_grid=128):
    """Per-surface negativity check on an ``n_grid`` x ``n_grid`` uniform grid."""
    g = np.linspace(-1.0, 1.0, n_grid)
    Bx = chebyshev_basis(g, coeffs.shape[-2])
    By = chebyshev_basis(g, coeffs.shape[-1])
    v = np.einsum("pi,sij,qj->spq", Bx, coeffs, By).reshape(coeffs.shape[0], -1)
    vmax = np.max(np.abs(v), axis=1)
    return np.min(v, axis=1) < -neg_tol * np.maximum(vmax, np.finfo(float).tiny)


def sample2d_batch(coeffs, x_interval, y_interval, u):
    """Draws from many surfaces at once.

    Parameters
    ----------
    coeffs : ndarray of shape (S, nx, ny)
        Nonnegative surfaces (negativity is the caller's check).
    x_interval, y_interval : (float, float)
    u : ndarray of shape (S, P, 2)
        Uniform variates.

    Returns
    -------
    x, y : ndarray of shape (S, P)
    marginal_mass : ndarray of shape (S,)
        Integral of each surface over the rectangle.
    """
    (xl, xh), (yl, yh) = x_interval, y_interval
    marg = marginal_x_coefficients(coeffs, 0.5 * (yh - yl))
    anti_x = antiderivative_coefficients(marg, 0.5 * (xh - xl))
    mass = clenshaw(anti_x, np.ones(coeffs.shape[0]))
    if np.any(~(mass > 0)):
        raise DegenerateError(f"surface {int(np.argmax(~(mass > 0)))} has no positive mass")
    x = newton_batch(anti_x, mass, u[..., 0], xl, xh)
    tx = (2.0 * x - (xl + xh)) / (xh - xl)
    slice_coeffs = np.einsum("spi,sij->spj", chebyshev_basis(tx, coeffs.shape[-2]), coeffs)
    anti_y = antiderivative_coefficients(slice_coeffs, 0.5 * (yh - yl))
    smass = clenshaw(anti_y, np.ones(x.shape))
    if np.any(~(smass > 0)):
        raise DegenerateError("zero-mass conditional slice")
    y = newton_batch(anti_y, smass, u[..., 1], yl, yh)
    return x, y, mass


def sample2d(surf, rng, size=None, neg_tol=NEGATIVITY_TOL):
    """Draw from the density proportional to a nonnegative surface.

    The y-direction is integrated exactly, x is drawn from the marginal by
    bisection, then y from the one-dimensional slice at that x.

    Returns
    -------
    x, y : ndarray
    """
    n = 1 if size is None else int(np.prod(size))
    c = surf.coeffs[None]
    if surface_negative_rows(c, neg_tol)[0]:
        raise NegativeDensityError("interpolated density is negative on the surface")
    marg = ChebSeries(marginal_x_coefficients(surf.coeffs, 0.5 * (surf.y_interval[1] - surf.y_interval[0])),
                      *surf.x_interval)
    try:
        cdf(marg, neg_tol)
    except DegenerateError as exc:
        raise DegenerateError(f"degenerate x-marginal: {exc}") from exc
    x, y, _ = sample2d_batch(c, surf.x_interval, surf.y_interval, rng.random((1, n, 2)))
    if size is None:
        return float(x[0, 0]), float(y[0, 0])
    return x[0].reshape(size), y[0].reshape(size)
