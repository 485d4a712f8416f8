"""Lévy seed families: densities, moments, samplers and area scaling.

Parameterisations (canonical order of ``SeedSpec.params``):

=================  ==========================  ==================
family             params                      support
=================  ==========================  ==================
poisson            (lam,)                      {0, 1, 2, ...}
gamma              (alpha, beta)  [rate beta]  (0, inf)
gaussian           (mu, sigma2)   [variance]   R
inverse_gaussian   (gamma, delta)              (0, inf)
nig                (alpha, beta, delta, mu)    R
vg                 (alpha, beta, lam, mu)      R
gh                 (lam, alpha, beta, delta, mu)  R
=================  ==========================  ==================

For the NIG, VG and GH families ``gamma = sqrt(alpha^2 - beta^2)``.
"""

from dataclasses import dataclass
from enum import Enum
import math

import numpy as np
from scipy.special import gammaln

from .exceptions import DomainError, ParameterError, UnsupportedError
from .special import log_besselk

__all__ = [
    "SeedFamily",
    "SeedSpec",
    "Nig3Params",
    "density",
    "logpdf",
    "scale_by_area",
    "sample",
    "moments",
    "nig_moments",
    "nig_cumulants",
    "nig3_to_nig4",
    "nig3_to_nig4_array",
    "nig3_moments",
]


class SeedFamily(str, Enum):
    POISSON = "poisson"
    GAMMA = "gamma"
    GAUSSIAN = "gaussian"
    INVERSE_GAUSSIAN = "inverse_gaussian"
    NIG = "nig"
    VG = "vg"
    GH = "gh"


PARAM_NAMES = {
    SeedFamily.POISSON: ("lam",),
    SeedFamily.GAMMA: ("alpha", "beta"),
    SeedFamily.GAUSSIAN: ("mu", "sigma2"),
    SeedFamily.INVERSE_GAUSSIAN: ("gamma", "delta"),
    SeedFamily.NIG: ("alpha", "beta", "delta", "mu"),
    SeedFamily.VG: ("alpha", "beta", "lam", "mu"),
    SeedFamily.GH: ("lam", "alpha", "beta", "delta", "mu"),
}


@dataclass(frozen=True)
class SeedSpec:
    """Law of a Lévy seed, i.e. of ``L(A)`` for a set of unit area.

    Parameters
    ----------
    family : SeedFamily or str
    params : tuple of float
        Parameters in the order listed in the module docstring.
    """

    family: SeedFamily
    params: tuple

    def __post_init__(self):
        family = SeedFamily(self.family)
        params = tuple(float(p) for p in np.atleast_1d(self.params))
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "params", params)
        names = PARAM_NAMES[family]
        if len(params) != len(names):
            raise ParameterError(f"{family.value} expects {len(names)} params {names}, got {len(params)}")
        if not all(math.isfinite(p) for p in params):
            raise ParameterError(f"non-finite parameters {params}")
        _check_domain(family, params)

    def as_dict(self):
        return dict(zip(PARAM_NAMES[self.family], self.params))


def _check_domain(family, p):
    # Poisson lam = 0 is kept as the degenerate point mass at 0
    if family is SeedFamily.POISSON and p[0] < 0:
        raise ParameterError("Poisson needs lam >= 0")
    if family is SeedFamily.GAMMA and not (p[0] > 0 and p[1] > 0):
        raise ParameterError("Gamma needs alpha > 0 and beta > 0")
    if family is SeedFamily.GAUSSIAN and not p[1] > 0:
        raise ParameterError("Gaussian needs sigma2 > 0")
    if family is SeedFamily.INVERSE_GAUSSIAN and not (p[0] > 0 and p[1] > 0):
        raise ParameterError("inverse Gaussian needs gamma > 0 and delta > 0")
    if family is SeedFamily.NIG and not (p[0] > abs(p[1]) and p[2] > 0):
        raise ParameterError("NIG needs alpha > |beta| and delta > 0")
    if family is SeedFamily.VG and not (p[0] > abs(p[1]) and p[2] > 0):
        raise ParameterError("VG needs alpha > |beta| and lam > 0")
    if family is SeedFamily.GH:
        lam, alpha, beta, delta, _ = p
        if not delta >= 0 or not alpha >= abs(beta):
            raise ParameterError("GH needs delta >= 0 and alpha >= |beta|")
        if delta == 0 and not (lam > 0 and alpha > abs(beta)):
            raise ParameterError("GH with delta = 0 needs lam > 0 and alpha > |beta|")
        if alpha == abs(beta) and not (lam < 0 and delta > 0):
            raise ParameterError("GH with alpha = |beta| needs lam < 0 and delta > 0")


def _gamma_of(alpha, beta):
    return math.sqrt(alpha * alpha - beta * beta)


# ---------------------------------------------------------------------------
# densities


def logpdf(spec, x):
    """Log density (log pmf for Poisson) of ``spec`` at ``x``.

    Raises
    ------
    DomainError
        If any ``x`` lies outside the support of the family.
    """
    x = np.asarray(x, dtype=float)
    fam, p = spec.family, spec.params
    if not np.all(np.isfinite(x)):
        raise DomainError("x must be finite")

    if fam is SeedFamily.POISSON:
        if np.any(x < 0) or np.any(x != np.round(x)):
            raise DomainError("Poisson support is the nonnegative integers")
        lam = p[0]
        if lam == 0:
            out = np.where(x == 0, 0.0, -np.inf)
        else:
            out = x * math.log(lam) - lam - gammaln(x + 1)
    elif fam is SeedFamily.GAMMA:
        if np.any(x < 0):
            raise DomainError("Gamma support is x >= 0")
        a, b = p
        with np.errstate(divide="ignore"):
            out = a * math.log(b) - math.lgamma(a) + (a - 1) * np.log(x) - b * x
        if a == 1:
            out = np.where(x == 0, math.log(b), out)
    elif fam is SeedFamily.GAUSSIAN:
        mu, s2 = p
        out = -0.5 * math.log(2 * math.pi * s2) - 0.5 * (x - mu) ** 2 / s2
    elif fam is SeedFamily.INVERSE_GAUSSIAN:
        if np.any(x < 0):
            raise DomainError("inverse Gaussian support is x >= 0")
        g, d = p
        xs = np.where(x > 0, x, 1.0)
        out = (
            math.log(d) - 0.5 * math.log(2 * math.pi) + d * g - 1.5 * np.log(xs) - 0.5 * (d * d / xs + g * g * xs)
        )
        out = np.where(x > 0, out, -np.inf)
    elif fam is SeedFamily.NIG:
        a, b, d, mu = p
        g = _gamma_of(a, b)
        q = np.sqrt(d * d + (x - mu) ** 2)
        out = math.log(a * d / math.pi) + log_besselk(1.0, a * q) - np.log(q) + d * g + b * (x - mu)
    elif fam is SeedFamily.VG:
        out = _vg_logpdf(p, x)
    elif fam is SeedFamily.GH:
        lam, a, b, d, mu = p
        if d == 0:
            return _vg_logpdf((a, b, lam, mu), x)
        g = _gamma_of(a, b)
        q = np.sqrt(d * d + (x - mu) ** 2)
        if g == 0:
            lognorm = _gh_log_norm_limit(lam, d)
        else:
            lognorm = lam * math.log(g / d) - 0.5 * math.log(2 * math.pi) - float(log_besselk(lam, d * g))
        out = (
            lognorm
            + log_besselk(lam - 0.5, a * q)
            - (0.5 - lam) * (np.log(q) - math.log(a))
            + b * (x - mu)
        )
    else:  # pragma: no cover
        raise UnsupportedError(fam)
    return out[()] if np.ndim(out) == 0 else out


def _gh_log_norm_limit(lam, d):
    # (gamma/delta)^lam / K_lam(delta gamma) as gamma -> 0 with lam < 0:
    # K_lam(z) ~ Gamma(-lam) 2^{-lam-1} z^{lam}, so the ratio -> delta^{-2 lam} 2^{lam+1} / Gamma(-lam)
    return (-2 * lam) * math.log(d) + (lam + 1) * math.log(2.0) - math.lgamma(-lam) - 0.5 * math.log(2 * math.pi)


def _vg_logpdf(p, x):
    a, b, lam, mu = p
    g = _gamma_of(a, b)
    nu = lam - 0.5
    z = np.abs(x - mu)
    lognorm = 2 * lam * math.log(g) - 0.5 * math.log(math.pi) - math.lgamma(lam) - nu * math.log(2 * a)
    zs = np.where(z > 0, z, 1.0)
    out = lognorm + nu * np.log(zs) + log_besselk(nu, a * zs) + b * (x - mu)
    if np.any(z == 0):
        if nu > 0:
            # |x|^nu K_nu(a|x|) -> Gamma(nu) 2^(nu-1) a^(-nu)
            at_mode = lognorm + math.lgamma(nu) + (nu - 1) * math.log(2.0) - nu * math.log(a)
        else:
            at_mode = np.inf
        out = np.where(z == 0, at_mode, out)
    return out


def density(spec, x):
    """Density (pmf for Poisson) of ``spec`` at ``x``.

    Parameters
    ----------
    spec : SeedSpec
    x : float or array_like

    Returns
    -------
    float or ndarray

    Examples
    --------
    >>> round(float(density(SeedSpec("gaussian", (0.0, 1.0)), 0.0)), 6)
    0.398942
    """
    out = np.exp(logpdf(spec, x))
    return out[()] if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# area scaling, moments


def scale_by_area(spec, leb):
    """Law of ``L(A)`` for a set with Lebesgue measure ``leb``.

    Raises
    ------
    UnsupportedError
        For the GH family, which is not closed under convolution.
    """
    leb = float(leb)
    if not leb > 0:
        raise ParameterError(f"leb must be > 0, got {leb}")
    fam, p = spec.family, spec.params
    if fam is SeedFamily.POISSON:
        new = (p[0] * leb,)
    elif fam is SeedFamily.GAMMA:
        new = (p[0] * leb, p[1])
    elif fam is SeedFamily.GAUSSIAN:
        new = (p[0] * leb, p[1] * leb)
    elif fam is SeedFamily.INVERSE_GAUSSIAN:
        new = (p[0], p[1] * leb)
    elif fam is SeedFamily.NIG:
        new = (p[0], p[1], p[2] * leb, p[3] * leb)
    elif fam is SeedFamily.VG:
        new = (p[0], p[1], p[2] * leb, p[3] * leb)
    else:
        raise UnsupportedError("GH laws are not convolution-closed; area scaling is undefined")
    return SeedSpec(fam, new)


def nig_moments(spec):
    """Mean and variance of an NIG law: ``mu + delta beta/gamma`` and ``delta alpha^2/gamma^3``."""
    if spec.family is not SeedFamily.NIG:
        raise ParameterError("nig_moments needs an NIG spec")
    a, b, d, mu = spec.params
    g = _gamma_of(a, b)
    return mu + d * b / g, d * a * a / g**3


def nig_cumulants(spec):
    """First four cumulants of an NIG law."""
    a, b, d, mu = spec.params
    g = _gamma_of(a, b)
    k1 = mu + d * b / g
    k2 = d * a * a / g**3
    k3 = 3 * d * a * a * b / g**5
    k4 = 3 * d * a * a * (a * a + 4 * b * b) / g**7
    return k1, k2, k3, k4


def moments(spec):
    """Mean and variance for every convolution-closed family."""
    fam, p = spec.family, spec.params
    if fam is SeedFamily.POISSON:
        return p[0], p[0]
    if fam is SeedFamily.GAMMA:
        return p[0] / p[1], p[0] / p[1] ** 2
    if fam is SeedFamily.GAUSSIAN:
        return p[0], p[1]
    if fam is SeedFamily.INVERSE_GAUSSIAN:
        g, d = p
        return d / g, d / g**3
    if fam is SeedFamily.NIG:
        return nig_moments(spec)
    if fam is SeedFamily.VG:
        a, b, lam, mu = p
        g2 = a * a - b * b
        return mu + 2 * b * lam / g2, 2 * lam / g2 * (1 + 2 * b * b / g2)
    raise UnsupportedError("moments are not implemented for GH")


# ---------------------------------------------------------------------------
# three-parameter NIG


@dataclass(frozen=True)
class Nig3Params:
    """NIG law indexed by mean, standard deviation and tilt ``beta in [-5, 5]``."""

    mu: float
    sigma: float
    beta: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ParameterError("sigma must be > 0")
        if not -5.0 <= self.beta <= 5.0:
            raise ParameterError("beta must lie in [-5, 5]")


def _nig3_shape(beta):
    g = 1.0 + abs(beta) / 5.0
    a = math.sqrt(g * g + beta * beta)
    return g, a


def nig3_to_nig4(p):
    """Convert (mu, sigma, beta) to the four-parameter NIG law.

    The standardised law NIG(alpha, beta, -beta gamma^2/alpha^2, gamma^3/alpha^2)
    with ``gamma = 1 + |beta|/5`` has mean 0 and variance 1; it is then
    shifted by ``mu`` and scaled by ``sigma``.
    """
    if not isinstance(p, Nig3Params):
        p = Nig3Params(*p)
    g, a = _nig3_shape(p.beta)
    s = p.sigma
    return SeedSpec(
        SeedFamily.NIG,
        (a / s, p.beta / s, s * g**3 / a**2, p.mu - s * p.beta * g**2 / a**2),
    )


def nig3_to_nig4_array(mu, sigma, beta):
    """Vectorised :func:`nig3_to_nig4`; returns an array of shape (..., 4)."""
    mu, sigma, beta = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (mu, sigma, beta)))
    g = 1.0 + np.abs(beta) / 5.0
    a2 = g * g + beta * beta
    a = np.sqrt(a2)
    return np.stack(
        [a / sigma, beta / sigma, sigma * g**3 / a2, mu - sigma * beta * g**2 / a2],
        axis=-1,
    )


def nig3_moments(mu, sigma, beta):
    """Mean, sd, skewness and excess kurtosis of the three-parameter NIG.

    Vectorised over array arguments. Skewness and kurtosis depend on
    ``beta`` only.
    """
    beta = np.asarray(beta, dtype=float)
    g = 1.0 + np.abs(beta) / 5.0
    a2 = g * g + beta * beta
    # standardised law: delta = g^3/a^2, so delta*g = g^4/a^2
    skew = 3.0 * beta / g**2
    exkurt = 3.0 * (a2 + 4 * beta * beta) / g**4
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    return mu, sigma, skew, exkurt


# ---------------------------------------------------------------------------
# sampling


def sample(spec, leb, rng, size=None):
    """Draw ``L(A)`` for sets of area ``leb``.

    ``leb`` may be an array of areas (one independent draw per entry, the
    vectorised path used by the trawl simulator). Zero areas give 0.

    Parameters
    ----------
    spec : SeedSpec
        Unit-area law.
    leb : float or array_like
        Nonnegative areas.
    rng : numpy.random.Generator
    size : int or tuple, optional
        Number of draws when ``leb`` is a scalar.

    Returns
    -------
    float or ndarray
    """
    leb = np.asarray(leb, dtype=float)
    if np.any(leb < 0) or not np.all(np.isfinite(leb)):
        raise ParameterError("areas must be finite and >= 0")
    if size is not None:
        leb = np.broadcast_to(leb, size)
    out = _sample_params(spec.family, spec.params, leb, rng)
    return out[()] if out.ndim == 0 else out


def _wald(mean, shape_par, rng, shape):
    """Inverse Gaussian draws (Michael, Schucany and Haas) without cancellation.

    The smaller root ``mean * (1 + phi - sqrt(phi^2 + 2 phi))`` with
    ``phi = mean * nu^2 / (2 shape_par)`` is evaluated in the equivalent form
    ``mean / (1 + phi + sqrt(phi^2 + 2 phi))``, which stays positive when
    ``mean / shape_par`` is extreme (tiny slice areas).
    """
    mean = np.broadcast_to(np.asarray(mean, dtype=float), shape)
    phi = mean * rng.standard_normal(shape) ** 2 / (2.0 * np.broadcast_to(shape_par, shape))
    x = mean / (1.0 + phi + np.sqrt(phi * (phi + 2.0)))
    keep = rng.random(shape) * (mean + x) <= mean
    return np.where(keep, x, mean * mean / x)


def _sample_params(family, p, leb, rng, param_arrays=False):
    """Vectorised sampler. ``p`` entries may be arrays broadcastable to ``leb``."""
    shape = np.shape(leb)
    pos = leb > 0
    if family is SeedFamily.POISSON:
        out = rng.poisson(p[0] * leb).astype(float)
    elif family is SeedFamily.GAMMA:
        shape_par = np.where(pos, p[0] * leb, 1.0)
        out = rng.standard_gamma(shape_par) / p[1]
    elif family is SeedFamily.GAUSSIAN:
        out = p[0] * leb + np.sqrt(p[1] * leb) * rng.standard_normal(shape)
    elif family is SeedFamily.INVERSE_GAUSSIAN:
        d = np.where(pos, p[1] * leb, 1.0)
        out = _wald(d / p[0], d * d, rng, shape)
    elif family is SeedFamily.NIG:
        a, b, d, mu = (np.asarray(v, dtype=float) for v in p)
        g = np.sqrt(a * a - b * b)
        dl = np.where(pos, d * leb, 1.0)
        v = _wald(dl / g, dl * dl, rng, shape)
        out = mu * leb + b * v + np.sqrt(v) * rng.standard_normal(shape)
    elif family is SeedFamily.VG:
        a, b, lam, mu = (np.asarray(v, dtype=float) for v in p)
        g2 = a * a - b * b
        v = rng.standard_gamma(np.where(pos, lam * leb, 1.0)) * (2.0 / g2)
        out = mu * leb + b * v + np.sqrt(v) * rng.standard_normal(shape)
    else:
        raise UnsupportedError(f"sampling is not supported for {family.value}")
    return np.where(pos, out, 0.0)
