import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special, stats

from trawltre.distributions import (
    Nig3Params,
    SeedSpec,
    density,
    moments,
    nig3_moments,
    nig3_to_nig4,
    nig3_to_nig4_array,
    nig_cumulants,
    nig_moments,
    sample,
    scale_by_area,
)
from trawltre.exceptions import DomainError, ParameterError, UnsupportedError

CONTINUOUS = [
    SeedSpec("gaussian", (0.3, 2.0)),
    SeedSpec("gamma", (2.5, 1.5)),
    SeedSpec("gamma", (0.7, 3.0)),
    SeedSpec("inverse_gaussian", (2.0, 3.0)),
    SeedSpec("nig", (1.0, 0.0, 1.0, 0.0)),
    SeedSpec("nig", (3.0, -2.0, 0.5, 1.0)),
    SeedSpec("vg", (2.0, 0.5, 1.3, 0.0)),
    SeedSpec("vg", (2.0, -0.5, 3.0, 0.4)),
    SeedSpec("gh", (0.7, 2.0, 0.5, 1.2, 0.3)),
    SeedSpec("gh", (-2.0, 1.5, 0.3, 0.8, -0.2)),
]


class TestDensity:
    def test_gaussian_at_zero(self):
        assert density(SeedSpec("gaussian", (0.0, 1.0)), 0.0) == pytest.approx(0.398942, abs=1e-6)

    def test_nig_at_zero(self):
        value = density(SeedSpec("nig", (1.0, 0.0, 1.0, 0.0)), 0.0)
        # tabulated value 0.52079 is K_1(1) e / pi rounded
        assert value == pytest.approx(0.52079, abs=2e-5)
        assert value == pytest.approx(special.kv(1, 1.0) * math.e / math.pi, rel=1e-12)

    def test_poisson_at_zero(self):
        assert density(SeedSpec("poisson", (2.0,)), 0) == pytest.approx(math.exp(-2), rel=1e-12)

    def test_poisson_pmf_sums_to_one(self):
        k = np.arange(0, 80)
        assert density(SeedSpec("poisson", (7.3,)), k).sum() == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("spec", CONTINUOUS, ids=lambda s: f"{s.family.value}{s.params}")
    def test_integrates_to_one(self, spec):
        f = lambda x: float(density(spec, x))
        if spec.family.value in ("gamma", "inverse_gaussian"):
            mass = integrate.quad(f, 0, 1)[0] + integrate.quad(f, 1, np.inf)[0]
        else:
            loc = spec.params[-1]
            mass = sum(integrate.quad(f, a, b, limit=500)[0] for a, b in [(-np.inf, loc), (loc, np.inf)])
        assert mass == pytest.approx(1.0, abs=1e-6)

    def test_gh_with_lambda_minus_half_is_nig(self):
        x = np.linspace(-3, 4, 17)
        gh = density(SeedSpec("gh", (-0.5, 3.0, -2.0, 0.5, 1.0)), x)
        nig = density(SeedSpec("nig", (3.0, -2.0, 0.5, 1.0)), x)
        np.testing.assert_allclose(gh, nig, rtol=1e-12)

    def test_gh_with_zero_delta_is_vg(self):
        x = np.array([-1.0, 0.2, 2.5])
        gh = density(SeedSpec("gh", (1.3, 2.0, 0.5, 0.0, 0.0)), x)
        vg = density(SeedSpec("vg", (2.0, 0.5, 1.3, 0.0)), x)
        np.testing.assert_allclose(gh, vg, rtol=1e-12)

    def test_vg_continuous_at_location(self):
        spec = SeedSpec("vg", (2.0, 0.5, 1.3, 0.4))
        assert density(spec, 0.4) == pytest.approx(density(spec, 0.4 + 1e-7), rel=1e-5)

    def test_inverse_gaussian_is_nig_subordinator(self):
        # mean delta/gamma and variance delta/gamma^3, checked by quadrature
        g, d = 2.0, 3.0
        f = lambda x: float(density(SeedSpec("inverse_gaussian", (g, d)), x))
        m1 = integrate.quad(lambda x: x * f(x), 0, np.inf)[0]
        m2 = integrate.quad(lambda x: x * x * f(x), 0, np.inf)[0]
        assert m1 == pytest.approx(d / g, rel=1e-8)
        assert m2 - m1**2 == pytest.approx(d / g**3, rel=1e-7)

    def test_nig_matches_scipy(self):
        a, b, d, mu = 3.0, -2.0, 0.5, 1.0
        x = np.linspace(-4, 5, 31)
        ref = stats.norminvgauss(a * d, b * d, loc=mu, scale=d).pdf(x)
        np.testing.assert_allclose(density(SeedSpec("nig", (a, b, d, mu)), x), ref, rtol=1e-10)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            density(SeedSpec("gamma", (2.0, 1.0)), -1.0)
        with pytest.raises(DomainError):
            density(SeedSpec("poisson", (2.0,)), 1.5)
        with pytest.raises(ParameterError):
            SeedSpec("nig", (1.0, 1.0, 1.0, 0.0))
        with pytest.raises(ParameterError):
            SeedSpec("gamma", (0.0, 1.0))
        with pytest.raises(ParameterError):
            SeedSpec("poisson", (-1.0,))
        with pytest.raises(ParameterError):
            SeedSpec("nig", (1.0, 0.0, 1.0))


class TestScaleByArea:
    def test_poisson(self):
        assert scale_by_area(SeedSpec("poisson", (2.0,)), 3.0) == SeedSpec("poisson", (6.0,))

    def test_gaussian(self):
        assert scale_by_area(SeedSpec("gaussian", (1.0, 4.0)), 0.25) == SeedSpec("gaussian", (0.25, 1.0))

    @pytest.mark.parametrize("spec", [s for s in CONTINUOUS if s.family.value != "gh"], ids=str)
    def test_unit_area_is_identity(self, spec):
        assert scale_by_area(spec, 1.0) == spec

    def test_gh_unsupported(self):
        with pytest.raises(UnsupportedError):
            scale_by_area(SeedSpec("gh", (0.7, 2.0, 0.5, 1.2, 0.3)), 2.0)

    @settings(max_examples=100, deadline=None)
    @given(
        st.sampled_from([s for s in CONTINUOUS if s.family.value != "gh"] + [SeedSpec("poisson", (1.5,))]),
        st.floats(0.01, 50.0),
        st.floats(0.01, 50.0),
    )
    def test_composition(self, spec, a, b):
        lhs = scale_by_area(scale_by_area(spec, a), b)
        rhs = scale_by_area(spec, a * b)
        assert lhs.family == rhs.family
        np.testing.assert_allclose(lhs.params, rhs.params, rtol=1e-13)

    def test_moments_scale_linearly(self):
        for spec in [s for s in CONTINUOUS if s.family.value != "gh"]:
            m1, v1 = moments(spec)
            m3, v3 = moments(scale_by_area(spec, 3.0))
            assert m3 == pytest.approx(3 * m1, rel=1e-12, abs=1e-14)
            assert v3 == pytest.approx(3 * v1, rel=1e-12)


class TestSample:
    def test_zero_area_gives_zero(self):
        rng = np.random.default_rng(0)
        for spec in [SeedSpec("poisson", (2.0,)), SeedSpec("nig", (2.0, 0.5, 1.0, 0.3))]:
            assert np.all(sample(spec, np.zeros(100), rng) == 0.0)
        assert np.all(sample(SeedSpec("poisson", (0.0,)), 5.0, rng, size=100) == 0.0)

    def test_nig_mean(self):
        rng = np.random.default_rng(1)
        spec = SeedSpec("nig", (2.0, 0.0, 1.0, 0.0))
        x = sample(spec, 1.0, rng, size=10**6)
        mean, var = nig_moments(spec)
        assert abs(x.mean() - mean) < 3 * math.sqrt(var / x.size)

    def test_gamma_variance(self):
        rng = np.random.default_rng(2)
        x = sample(SeedSpec("gamma", (2.0, 1.0)), 1.0, rng, size=10**6)
        # var of the sample variance: (mu4 - sigma^4) / n, Gamma(2, 1): mu4 = 3 a (a + 2) = 24
        se = math.sqrt((24.0 - 4.0) / x.size)
        assert abs(x.var() - 2.0) < 3 * se

    @pytest.mark.parametrize(
        "spec, leb",
        [
            (SeedSpec("poisson", (2.0,)), 1.7),
            (SeedSpec("gamma", (2.5, 1.5)), 0.4),
            (SeedSpec("gaussian", (0.3, 2.0)), 2.5),
            (SeedSpec("inverse_gaussian", (2.0, 3.0)), 0.8),
            (SeedSpec("nig", (3.0, -2.0, 0.5, 1.0)), 1.3),
            (SeedSpec("vg", (2.0, 0.5, 1.3, 0.0)), 0.6),
        ],
        ids=lambda v: str(v),
    )
    def test_empirical_moments(self, spec, leb):
        rng = np.random.default_rng(3)
        x = sample(spec, leb, rng, size=10**6)
        mean, var = moments(scale_by_area(spec, leb))
        n = x.size
        assert abs(x.mean() - mean) < 4 * math.sqrt(var / n)
        mu4 = np.mean((x - x.mean()) ** 4)
        assert abs(x.var() - var) < 4 * math.sqrt((mu4 - var**2) / n)

    def test_deterministic(self):
        spec = SeedSpec("nig", (3.0, -2.0, 0.5, 1.0))
        a = sample(spec, 1.0, np.random.default_rng(5), size=10)
        b = sample(spec, 1.0, np.random.default_rng(5), size=10)
        assert np.array_equal(a, b)

    def test_gh_unsupported(self):
        with pytest.raises(UnsupportedError):
            sample(SeedSpec("gh", (0.7, 2.0, 0.5, 1.2, 0.3)), 1.0, np.random.default_rng(0))


class TestNig:
    def test_moments_examples(self):
        assert nig_moments(SeedSpec("nig", (1.0, 0.0, 1.0, 0.0))) == (0.0, 1.0)
        assert nig_moments(SeedSpec("nig", (2.0, 0.0, 3.0, 1.0))) == pytest.approx((1.0, 1.5))
        assert nig_moments(SeedSpec("nig", (100.0, 0.0, 1.0, 0.0)))[1] == pytest.approx(0.01)

    def test_moments_need_nig(self):
        with pytest.raises(ParameterError):
            nig_moments(SeedSpec("gaussian", (0.0, 1.0)))

    def test_nig3_examples(self):
        assert nig3_to_nig4(Nig3Params(0.0, 1.0, 0.0)) == SeedSpec("nig", (1.0, 0.0, 1.0, 0.0))
        # location-scale version of the standardised law; see ledger
        assert nig3_to_nig4(Nig3Params(0.5, 2.0, 0.0)) == SeedSpec("nig", (0.5, 0.0, 2.0, 0.5))
        mean, var = nig_moments(nig3_to_nig4(Nig3Params(0.0, 1.0, 5.0)))
        assert mean == pytest.approx(0.0, abs=1e-12)
        assert var == pytest.approx(1.0, rel=1e-12)

    @settings(max_examples=300, deadline=None)
    @given(st.floats(-10, 10), st.floats(0.05, 20), st.floats(-5, 5))
    def test_nig3_round_trip(self, mu, sigma, beta):
        mean, var = nig_moments(nig3_to_nig4(Nig3Params(mu, sigma, beta)))
        assert mean == pytest.approx(mu, abs=1e-10 * max(1.0, sigma))
        assert var == pytest.approx(sigma**2, rel=1e-10)

    def test_nig3_vectorised_matches_scalar(self):
        rng = np.random.default_rng(0)
        p = np.column_stack([rng.uniform(-1, 1, 20), rng.uniform(0.5, 1.5, 20), rng.uniform(-5, 5, 20)])
        arr = nig3_to_nig4_array(p[:, 0], p[:, 1], p[:, 2])
        for row, q in zip(arr, p):
            np.testing.assert_allclose(row, nig3_to_nig4(Nig3Params(*q)).params, rtol=1e-14)

    @pytest.mark.parametrize("beta", [-5.0, -1.3, 0.0, 2.2, 5.0])
    def test_nig3_shape_moments_match_cumulants(self, beta):
        k1, k2, k3, k4 = nig_cumulants(nig3_to_nig4(Nig3Params(0.2, 1.4, beta)))
        _, _, skew, exkurt = nig3_moments(0.2, 1.4, beta)
        assert skew == pytest.approx(k3 / k2**1.5, rel=1e-12, abs=1e-14)
        assert exkurt == pytest.approx(k4 / k2**2, rel=1e-12)

    def test_nig3_shape_moments_monte_carlo(self):
        rng = np.random.default_rng(11)
        x = sample(nig3_to_nig4(Nig3Params(0.0, 1.0, 1.5)), 1.0, rng, size=10**6)
        _, _, skew, exkurt = nig3_moments(0.0, 1.0, 1.5)
        assert stats.skew(x) == pytest.approx(skew, abs=0.05)
        assert stats.kurtosis(x) == pytest.approx(exkurt, rel=0.1)

    def test_nig3_validation(self):
        with pytest.raises(ParameterError):
            Nig3Params(0.0, 0.0, 0.0)
        with pytest.raises(ParameterError):
            Nig3Params(0.0, 1.0, 6.0)
