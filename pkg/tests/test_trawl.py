import math

import numpy as np
import pytest
from scipy import integrate

from stat_helpers import batch_se, sample_acf
from trawltre.distributions import Nig3Params, SeedSpec
from trawltre.exceptions import DegenerateError, DomainError, KernelError, ParameterError
from trawltre.trawl import (
    TimeSeries,
    TrawlKernel,
    TrawlModel,
    _interval_areas,
    acf,
    destandardize,
    implied_acf,
    leb_A,
    simulate,
    simulate_batch,
    slice_areas,
    standardize,
    trawl_function,
    truncation_lag,
)

FITTED_KERNEL = TrawlKernel.inverse_gaussian(13.36, 15.52)


class TestKernel:
    def test_acf_at_zero(self):
        assert acf(TrawlKernel.exponential(0.3), 0.0) == 1.0
        assert acf(FITTED_KERNEL, 0.0) == 1.0

    def test_acf_values(self):
        assert acf(TrawlKernel.exponential(1.0), 1.0) == pytest.approx(0.367879, abs=1e-6)
        assert acf(FITTED_KERNEL, 1.0) == pytest.approx(0.9169, abs=1e-4)

    def test_acf_negative_lag(self):
        with pytest.raises(DomainError):
            acf(FITTED_KERNEL, -0.1)

    def test_acf_decreasing(self):
        h = np.linspace(0, 200, 2001)
        for kern in [FITTED_KERNEL, TrawlKernel.exponential(0.2)]:
            assert np.all(np.diff(acf(kern, h)) < 0)

    @pytest.mark.parametrize(
        "kernel, expected",
        [
            (TrawlKernel.exponential(2.0), 0.5),
            (TrawlKernel.inverse_gaussian(2.0, 4.0), 1.0),
            (FITTED_KERNEL, 13.36**2 / 15.52),
        ],
    )
    def test_leb_closed_form_vs_quadrature(self, kernel, expected):
        quad = integrate.quad(lambda s: trawl_function(kernel, s), -np.inf, 0.0, epsabs=1e-13, epsrel=1e-13)[0]
        assert leb_A(kernel) == pytest.approx(expected, rel=1e-12)
        assert quad == pytest.approx(leb_A(kernel), rel=1e-8)

    def test_fitted_kernel_leb(self):
        assert leb_A(FITTED_KERNEL) == pytest.approx(11.501, abs=1e-3)

    def test_acf_is_normalised_tail_area(self):
        # rho(h) = int_{-inf}^{-h} a / Leb(A)
        for h in [0.5, 3.0, 17.0]:
            tail = integrate.quad(lambda s: trawl_function(FITTED_KERNEL, s), -np.inf, -h, epsrel=1e-12)[0]
            assert tail / leb_A(FITTED_KERNEL) == pytest.approx(acf(FITTED_KERNEL, h), rel=1e-8)

    def test_invalid_params(self):
        with pytest.raises(ParameterError):
            TrawlKernel.exponential(0.0)
        with pytest.raises(ParameterError):
            TrawlKernel.inverse_gaussian(1.0, -1.0)


class TestSliceAreas:
    def test_exponential_closed_form(self):
        model = TrawlModel(TrawlKernel.exponential(1.0), SeedSpec("gaussian", (0.0, 1.0)))
        d = slice_areas(model)
        j = np.arange(d.size - 1)
        np.testing.assert_allclose(d[:-1], np.exp(-j) * (1 - np.exp(-1)) ** 2, rtol=1e-12)

    @pytest.mark.parametrize(
        "kernel", [TrawlKernel.exponential(0.3), FITTED_KERNEL, TrawlKernel.inverse_gaussian(2.0, 0.5)]
    )
    @pytest.mark.parametrize("dt", [0.5, 1.0, 2.0])
    def test_identity_and_sign(self, kernel, dt):
        model = TrawlModel(kernel, SeedSpec("gaussian", (0.0, 1.0)), dt=dt)
        d = slice_areas(model)
        assert np.all(d >= 0)
        assert np.sum((np.arange(d.size) + 1) * d) == pytest.approx(leb_A(kernel), rel=1e-10)

    def test_truncation_lag_definition(self):
        model = TrawlModel(FITTED_KERNEL, SeedSpec("gaussian", (0.0, 1.0)))
        T = truncation_lag(model)
        assert acf(FITTED_KERNEL, T) < 1e-4 <= acf(FITTED_KERNEL, T - 1)

    def test_non_decaying_kernel_rejected(self):
        model = TrawlModel(TrawlKernel.exponential(1e-9), SeedSpec("gaussian", (0.0, 1.0)))
        with pytest.raises(KernelError):
            slice_areas(model)

    def test_truncation_bias_shrinks_with_eps(self):
        biases = []
        for eps in [1e-2, 1e-3, 1e-4]:
            model = TrawlModel(FITTED_KERNEL, SeedSpec("gaussian", (0.0, 1.0)), truncation_eps=eps)
            T = truncation_lag(model)
            biases.append(abs(implied_acf(model, [T])[0] - acf(FITTED_KERNEL, T)))
        assert biases[0] > biases[1] > biases[2]


def _literal_covariance(d, k):
    """Covariance of the slice-by-slice construction with unit-variance-per-area seeds."""
    C = np.zeros((k, k))
    for j, area in enumerate(d):
        for m in range(-j, k):
            lo, hi = max(m, 0), min(m + j, k - 1)
            if lo <= hi:
                C[lo : hi + 1, lo : hi + 1] += area
    return C


def _merged_covariance(d, k):
    interior, boundary, full = _interval_areas(d[None, :], k)
    C = np.zeros((k, k))
    for ell in range(k - 2):
        for a in range(1, k - 1 - ell):
            C[a : a + ell + 1, a : a + ell + 1] += interior[0, ell]
    for ell in range(k - 1):
        C[: ell + 1, : ell + 1] += boundary[0, ell]
        C[k - 1 - ell :, k - 1 - ell :] += boundary[0, ell]
    C += full[0]
    return C


class TestSimulate:
    @pytest.mark.parametrize("k", [2, 3, 7, 40])
    @pytest.mark.parametrize("kernel", [TrawlKernel.exponential(0.8), TrawlKernel.inverse_gaussian(3.0, 2.0)])
    def test_interval_merge_is_exact(self, kernel, k):
        d = slice_areas(TrawlModel(kernel, SeedSpec("gaussian", (0.0, 1.0))))
        np.testing.assert_allclose(_merged_covariance(d, k), _literal_covariance(d, k), rtol=1e-12, atol=1e-13)

    def test_gaussian_covariance_monte_carlo(self):
        rng = np.random.default_rng(0)
        k, B = 12, 100_000
        x = simulate_batch("inverse_gaussian", np.tile([3.0, 2.0], (B, 1)), "gaussian", np.tile([0.0, 1.0], (B, 1)), k, rng)
        d = slice_areas(TrawlModel(TrawlKernel.inverse_gaussian(3.0, 2.0), SeedSpec("gaussian", (0.0, 1.0))))
        C = _literal_covariance(d, k)
        se = np.sqrt((C**2 + np.outer(np.diag(C), np.diag(C))) / B)
        assert np.all(np.abs(np.cov(x.T) - C) < 5 * se)

    def test_short_memory_pairs_are_independent(self):
        rng = np.random.default_rng(1)
        B = 200_000
        x = simulate_batch("exponential", np.full((B, 1), 50.0), "gamma", np.tile([2.0, 1.0], (B, 1)), 2, rng)
        assert abs(np.corrcoef(x[:, 0], x[:, 1])[0, 1]) < 3 / math.sqrt(B)
        # marginal Gamma(2 Leb, 1) with Leb = 1/50
        assert abs(x.mean() - 0.04) < 4 * math.sqrt(0.04 / x.size)

    def test_nig3_marginal_and_lag_one(self):
        rng = np.random.default_rng(2)
        model = TrawlModel(TrawlKernel.inverse_gaussian(15.0, 15.0), Nig3Params(0.0, 1.0, 0.0))
        x = simulate(model, 100_000, rng).values
        r1 = sample_acf(x, [1])[0]
        assert abs(r1 - acf(model.kernel, 1.0)) < 3 * batch_se(x, lambda b: sample_acf(b, [1])[0])
        # long-run variance of the mean: sigma^2 (1 + 2 sum_h rho(h))
        lrv = 1 + 2 * np.sum(acf(model.kernel, np.arange(1, 5000)))
        assert abs(x.mean()) < 4 * math.sqrt(lrv / x.size)
        assert abs(x.std() - 1.0) < 4 * batch_se(x, np.std)

    def test_nig3_seed_conversion(self):
        model = TrawlModel(FITTED_KERNEL, Nig3Params(0.97, 0.98, -0.17))
        from trawltre.distributions import nig_moments

        mean, var = nig_moments(model.marginal())
        assert mean == pytest.approx(0.97, rel=1e-12)
        assert var == pytest.approx(0.98**2, rel=1e-12)

    def test_deterministic(self):
        model = TrawlModel(FITTED_KERNEL, Nig3Params(0.2, 1.1, 1.0))
        a = simulate(model, 500, np.random.default_rng(7)).values
        b = simulate(model, 500, np.random.default_rng(7)).values
        assert np.array_equal(a, b)

    def test_batch_rows_follow_own_params(self):
        rng = np.random.default_rng(3)
        seeds = np.array([[0.0, 1.0], [10.0, 1.0]])
        x = simulate_batch("exponential", [[1.0], [1.0]], "gaussian", seeds, 5000, rng)
        assert abs(x[0].mean()) < 0.2 and abs(x[1].mean() - 10.0) < 0.2

    def test_errors(self):
        model = TrawlModel(FITTED_KERNEL, Nig3Params(0.0, 1.0, 0.0))
        with pytest.raises(DomainError):
            simulate(model, 1, np.random.default_rng(0))
        from trawltre.exceptions import MemoryBudgetError

        with pytest.raises(MemoryBudgetError):
            simulate_batch("inverse_gaussian", [[13.36, 15.52]], "gaussian", [[0.0, 1.0]], 10**6, np.random.default_rng(0), cell_budget=10**6)


class TestStandardize:
    def test_zero_variance(self):
        with pytest.raises(DegenerateError):
            standardize(TimeSeries([1.0, 1.0, 1.0]))

    def test_two_points(self):
        z, mean, sd = standardize(TimeSeries([0.0, 2.0]))
        assert mean == 1.0 and sd == pytest.approx(math.sqrt(2.0))
        np.testing.assert_allclose(z.values, [-1 / math.sqrt(2), 1 / math.sqrt(2)])

    def test_round_trip(self):
        x = np.random.default_rng(0).normal(3.0, 2.0, 1000)
        z, mean, sd = standardize(TimeSeries(x))
        np.testing.assert_allclose(destandardize(z, mean, sd).values, x, atol=1e-12)

    def test_time_series_validation(self):
        with pytest.raises(DomainError):
            TimeSeries([1.0])
        with pytest.raises(DomainError):
            TimeSeries([1.0, np.nan])
