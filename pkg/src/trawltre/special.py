"""Modified Bessel function of the second kind.

The seed densities of the NIG, VG and GH families need ``K_nu(x)`` for real
order and positive argument. The routine follows the classic Temme / Steed
scheme: reduce the order to ``|mu| <= 1/2``, evaluate ``K_mu`` and
``K_{mu+1}`` by Temme's series for small ``x`` or by Steed's continued
fraction for large ``x``, then recur upward in the order (stable for K).
"""

import math

import numpy as np

__all__ = ["besselk", "besselk_scaled", "log_besselk"]

_EPS = 1e-16
_MAXIT = 10000
_XMIN = 2.0

# Taylor coefficients of 1/Gamma(z) about 0 (Abramowitz & Stegun 6.1.34).
# 1/Gamma(1 + z) = sum_k _RGAMMA[k] z^k.
_RGAMMA = (
    1.0,
    0.5772156649015329,
    -0.6558780715202538,
    -0.0420026350340952,
    0.1665386113822915,
    -0.0421977345555443,
    -0.0096219715278770,
    0.0072189432466630,
    -0.0011651675918591,
    -0.0002152416741149,
    0.0001280502823882,
    -0.0000201348547807,
    -0.0000012504934821,
    0.0000011330272320,
    -0.0000002056338417,
    0.0000000061160950,
    0.0000000050020075,
    -0.0000000011812746,
    0.0000000001043427,
    0.0000000000077823,
    -0.0000000000036968,
    0.0000000000005100,
    -0.0000000000000206,
    -0.0000000000000054,
    0.0000000000000014,
    0.0000000000000001,
)


def _gamma_terms(mu):
    """Return (gam1, gam2, 1/Gamma(1+mu), 1/Gamma(1-mu)) for |mu| <= 1/2."""
    gampl = 0.0
    gammi = 0.0
    gam1 = 0.0
    p = 1.0
    for k, c in enumerate(_RGAMMA):
        gampl += c * p
        gammi += c * p * (-1.0 if k % 2 else 1.0)
        p *= mu
    # gam1 = (gammi - gampl) / (2 mu) = -sum over odd k of c_k mu^(k-1)
    p = 1.0
    for k in range(1, len(_RGAMMA), 2):
        gam1 -= _RGAMMA[k] * p
        p *= mu * mu
    gam2 = 0.5 * (gammi + gampl)
    return gam1, gam2, gampl, gammi


def _kmu_pair_scaled(mu, x):
    """e^x K_mu(x) and e^x K_{mu+1}(x) for |mu| <= 1/2, x > 0."""
    mu2 = mu * mu
    if x < _XMIN:
        x2 = 0.5 * x
        pimu = math.pi * mu
        fact = 1.0 if abs(pimu) < _EPS else pimu / math.sin(pimu)
        d = -math.log(x2)
        e = mu * d
        fact2 = 1.0 if abs(e) < _EPS else math.sinh(e) / e
        gam1, gam2, gampl, gammi = _gamma_terms(mu)
        ff = fact * (gam1 * math.cosh(e) + gam2 * fact2 * d)
        total = ff
        e = math.exp(e)
        p = 0.5 * e / gampl
        q = 0.5 / (e * gammi)
        c = 1.0
        d = x2 * x2
        total1 = p
        for i in range(1, _MAXIT):
            ff = (i * ff + p + q) / (i * i - mu2)
            c *= d / i
            p /= i - mu
            q /= i + mu
            delta = c * ff
            total += delta
            total1 += c * (p - i * ff)
            if abs(delta) < abs(total) * _EPS:
                break
        else:
            raise ArithmeticError("Bessel K series did not converge")
        scale = math.exp(x)
        return total * scale, total1 * (2.0 / x) * scale

    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = delh = d
    q1, q2 = 0.0, 1.0
    a1 = 0.25 - mu2
    q = c = a1
    a = -a1
    s = 1.0 + q * delh
    for i in range(2, _MAXIT):
        a -= 2 * (i - 1)
        c = -a * c / i
        qnew = (q1 - b * q2) / a
        q1, q2 = q2, qnew
        q += c * qnew
        b += 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        h += delh
        dels = q * delh
        s += dels
        if abs(dels / s) < _EPS:
            break
    else:
        raise ArithmeticError("Bessel K continued fraction did not converge")
    h = a1 * h
    kmu = math.sqrt(math.pi / (2.0 * x)) / s
    k1 = kmu * (mu + x + 0.5 - h) / x
    return kmu, k1


def _besselk_scaled_scalar(nu, x):
    nu = abs(float(nu))  # K_{-nu} = K_nu
    x = float(x)
    if not x > 0.0:
        raise ValueError(f"Bessel K needs x > 0, got {x}")
    if math.isinf(x):
        return 0.0
    nl = int(nu + 0.5)
    mu = nu - nl
    kmu, k1 = _kmu_pair_scaled(mu, x)
    for i in range(1, nl + 1):
        kmu, k1 = k1, (mu + i) * (2.0 / x) * k1 + kmu
    return kmu


_vec_scaled = np.vectorize(_besselk_scaled_scalar, otypes=[float])


def besselk_scaled(nu, x):
    """Exponentially scaled Bessel function ``e^x K_nu(x)``.

    Parameters
    ----------
    nu : float or array_like
        Real order.
    x : float or array_like
        Positive argument.

    Returns
    -------
    float or ndarray
    """
    out = _vec_scaled(nu, x)
    return out[()] if out.ndim == 0 else out


def besselk(nu, x):
    """Modified Bessel function of the second kind ``K_nu(x)``, ``x > 0``."""
    x = np.asarray(x, dtype=float)
    out = besselk_scaled(nu, x) * np.exp(-x)
    return out[()] if np.ndim(out) == 0 else out


def log_besselk(nu, x):
    """``log K_nu(x)``, finite even where ``K_nu(x)`` underflows."""
    x = np.asarray(x, dtype=float)
    out = np.log(besselk_scaled(nu, x)) - x
    return out[()] if np.ndim(out) == 0 else out
