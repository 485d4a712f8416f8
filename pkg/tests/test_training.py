import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from trawltre.box import SamplingBox
from trawltre.exceptions import ParameterError, TrainingError
from trawltre.toys import GaussianLinearToy, identity_ratio_model, log_ndtr_diff
from trawltre.training import (
    MetricTrace,
    TrainConfig,
    TrawlSimulator,
    classification_metrics,
    cyclic_shift,
    default_box,
    kl_per_stage,
    make_nre_batch,
    make_tre_batch,
    metrics,
    random_derangement,
    train,
)

N_OBS = 20


class LocationToy:
    """``x_j ~ N(theta_0, noise_sd^2)`` iid; a second coordinate is a nuisance the data ignore."""

    box = SamplingBox([-2.0, 0.0], [2.0, 1.0], ["loc", "nuisance"], [1, 1])
    noise_sd = 6.0

    def __call__(self, theta, k, rng):
        theta = np.atleast_2d(theta)
        return theta[:, :1] + self.noise_sd * rng.standard_normal((theta.shape[0], k))

    def log_ratio(self, x, loc):
        """Exact ``log p(x | loc) - log p(x)`` through the sample mean."""
        n = x.shape[1]
        xb = x.mean(axis=1)
        s = self.noise_sd / np.sqrt(n)
        log_lik = stats.norm.logpdf(xb, loc, s)
        log_ev = log_ndtr_diff((-2.0 - xb) / s, (2.0 - xb) / s) - np.log(4.0)
        return log_lik - log_ev


def fast_config(**kw):
    base = dict(k=N_OBS, n_iter=0, batch_size=64, lr=3e-3, hidden=(16, 16), dropout=0.0, n_lags=1, n_moments=1,
                eval_every=50, n_holdout=400, n_pilot=256)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def trained_location():
    toy = LocationToy()
    model, trace = train(toy.box, toy, fast_config(n_iter=4000, hidden=(32, 32), batch_size=256),
                         np.random.default_rng(0))
    return toy, model, trace


# -- batches -------------------------------------------------------------------


def test_nre_two_pairs():
    x = np.array([[1.0], [2.0]])
    th = np.array([[10.0], [20.0]])
    b = make_nre_batch(x, th)
    np.testing.assert_array_equal(b.inputs[2:], x)
    np.testing.assert_array_equal(b.theta[2:], [[20.0], [10.0]])
    np.testing.assert_array_equal(b.labels, [1, 1, 0, 0])


@pytest.mark.parametrize("perm", ["shift", "derangement"])
def test_nre_class_zero_differs(perm):
    rng = np.random.default_rng(0)
    th = rng.random((50, 2))
    b = make_nre_batch(rng.random((50, 3)), th, rng, perm)
    assert not np.any(np.all(b.theta[:50] == b.theta[50:], axis=1))
    assert b.labels.sum() == 50 and len(b) == 100


def test_batches_need_two_pairs():
    with pytest.raises(ParameterError):
        make_nre_batch(np.zeros((1, 3)), np.zeros((1, 2)))
    with pytest.raises(ParameterError):
        make_tre_batch(np.zeros((1, 3)), np.zeros((1, 5)), default_box(), 0, np.random.default_rng(0))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 60), st.integers(0, 10_000))
def test_derangement_has_no_fixed_points(n, seed):
    p = random_derangement(n, np.random.default_rng(seed))
    assert sorted(p) == list(range(n))
    assert np.all(p != np.arange(n))
    assert np.all(cyclic_shift(n) != np.arange(n))


def test_tre_last_block_class_one_is_joint():
    box = default_box()
    rng = np.random.default_rng(1)
    th = box.sample(rng, 30)
    x = rng.random((30, 4))
    b = make_tre_batch(x, th, box, box.n_blocks - 1, rng)
    np.testing.assert_array_equal(b.theta[:30], th)
    nre = make_nre_batch(x, th)
    np.testing.assert_array_equal(b.theta[:30], nre.theta[:30])


def test_tre_block_prefixes():
    box = default_box()
    rng = np.random.default_rng(2)
    th = box.sample(rng, 40)
    for i, (start, end) in enumerate(box.blocks):
        b = make_tre_batch(rng.random((40, 3)), th, box, i, rng)
        np.testing.assert_array_equal(b.theta[:40, :end], th[:, :end])
        np.testing.assert_array_equal(b.theta[40:, :start], th[:, :start])
        assert not np.any(b.theta[40:, start] == th[:, start])
        assert np.all(box.contains(b.theta))


def test_tre_first_block_class_zero_marginals_are_box_uniform():
    box = default_box()
    rng = np.random.default_rng(3)
    # joint parameters concentrated in a corner so that leakage would show
    th = np.tile(box.lo + 0.01 * box.width, (10_000, 1))
    b = make_tre_batch(np.zeros((10_000, 1)), th, box, 0, rng)
    for j in range(box.m):
        u = (b.theta[10_000:, j] - box.lo[j]) / box.width[j]
        assert stats.kstest(u, "uniform").pvalue > 0.01


def test_tre_shift_tail():
    box = default_box()
    rng = np.random.default_rng(4)
    th = box.sample(rng, 6)
    b = make_tre_batch(np.zeros((6, 1)), th, box, 1, rng, tail="shift")
    np.testing.assert_array_equal(b.theta[:6, 3:], th[cyclic_shift(6), 3:])
    np.testing.assert_array_equal(b.theta[6:, 2:], th[cyclic_shift(6), 2:])


# -- metrics -------------------------------------------------------------------


def test_constant_classifier_metrics():
    y = np.r_[np.ones(50), np.zeros(50)]
    bce, acc, S, B = classification_metrics(np.zeros(100), y, log_prior=-1.5)
    assert bce == pytest.approx(np.log(2))
    assert acc == 0.5
    assert B == 1.0
    assert S == -1.5


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=4, max_size=40))
def test_balancing_metric_in_range(z):
    z = np.array(z)
    y = np.arange(z.size) % 2
    _, acc, _, B = classification_metrics(z, y)
    assert 0.0 <= B <= 2.0 and 0.0 <= acc <= 1.0


def test_metrics_errors():
    with pytest.raises(ParameterError):
        classification_metrics([], [])
    with pytest.raises(ParameterError):
        classification_metrics([0.1, 0.2], [1, 1])


def test_bayes_optimal_balancing_on_discrete_toy():
    # theta uniform on 3 values, x | theta categorical on 4 values
    P = np.array([[0.7, 0.1, 0.1, 0.1], [0.2, 0.5, 0.2, 0.1], [0.05, 0.05, 0.3, 0.6]])
    joint = P / 3.0
    prod = joint.sum(axis=0)[None, :] * joint.sum(axis=1)[:, None]
    c = joint / (joint + prod)
    assert np.sum(joint * c) + np.sum(prod * c) == pytest.approx(1.0, abs=1e-15)

    rng = np.random.default_rng(5)
    n = 20_000
    th = rng.integers(0, 3, n)
    x = np.array([rng.choice(4, p=P[t]) for t in th])
    th0 = rng.permutation(th)
    logit = np.log(joint / prod)
    z = np.r_[logit[th, x], logit[th0, x]]
    _, _, _, B = classification_metrics(z, np.r_[np.ones(n), np.zeros(n)])
    se = np.sqrt(np.var(c[th, x]) / n + np.var(c[th0, x]) / n)
    assert abs(B - 1.0) < 4 * se


# -- KL decomposition ------------------------------------------------------------


def test_stage_divergences_sum_to_total():
    toy = GaussianLinearToy()
    total = toy.kl_total()
    assert abs(toy.kl_stages().sum() - total) / total < 1e-6
    closed = 0.5 * np.log(toy.joint_cov()[0, 0] / toy.noise_sd**2)
    assert total == pytest.approx(closed, rel=1e-10)


def test_reordering_changes_stages_not_sum():
    toy = GaussianLinearToy()
    a, b = toy.kl_stages([0, 1]), toy.kl_stages([1, 0])
    assert not np.allclose(a, b)
    assert a.sum() == pytest.approx(b.sum(), rel=1e-10)


def test_kl_per_stage_zero_for_uninformative_data():
    box = default_box()
    rng = np.random.default_rng(6)
    model = identity_ratio_model(box)
    samples = [(rng.random((100, 5)), box.sample(rng, 100)) for _ in range(box.n_blocks)]
    np.testing.assert_array_equal(kl_per_stage(model, samples), 0.0)


# -- training ------------------------------------------------------------------------


def test_zero_iterations_is_untrained():
    toy = LocationToy()
    model, trace = train(toy.box, toy, fast_config(n_iter=0), np.random.default_rng(1))
    arr = trace.as_array()
    assert arr.shape == (2, 6)
    np.testing.assert_array_equal(arr[:, 0], 0)
    assert np.all(np.abs(arr[:, 2] - np.log(2)) < 0.05)


def test_training_is_deterministic(tmp_path):
    toy = LocationToy()
    runs = []
    for _ in range(2):
        m, tr = train(toy.box, toy, fast_config(n_iter=60, dropout=0.1, eval_every=20), np.random.default_rng(7))
        tr.to_csv(tmp_path / "t.csv")
        m.save(tmp_path / "m.json")
        runs.append(((tmp_path / "t.csv").read_bytes(), (tmp_path / "m.json").read_bytes()))
    assert runs[0] == runs[1]
    assert runs[0][0].splitlines()[0] == b"iteration,head,bce,acc,S,B"


def test_batches_are_never_reused():
    toy = LocationToy()
    seen = []
    train(toy.box, toy, fast_config(n_iter=40, sim_chunk=7), np.random.default_rng(8),
          callback=lambda it, th, X: seen.append(th.copy()))
    allth = np.concatenate(seen)
    assert len(seen) == 40
    assert np.unique(allth, axis=0).shape[0] == allth.shape[0]


def test_divergence_aborts_with_trace():
    toy = LocationToy()
    cfg = fast_config(n_iter=50, divergence_factor=0.5, divergence_patience=3)
    with pytest.raises(TrainingError) as info:
        train(toy.box, toy, cfg, np.random.default_rng(9))
    assert isinstance(info.value.trace, MetricTrace)
    assert len(info.value.trace.rows) == 2


def test_trained_head_matches_closed_form(trained_location):
    toy, model, trace = trained_location
    rng = np.random.default_rng(10)
    th = toy.box.sample(rng, 1000)
    x = toy(th, N_OBS, rng)
    th_marg = toy.box.sample(rng, 1000)
    X = np.r_[x, x]
    T = np.r_[th, th_marg]
    z = model.head_log_ratio(0, model.encode(X)[0], T)
    exact = toy.log_ratio(X, T[:, 0])
    assert np.corrcoef(z, exact)[0, 1] > 0.99
    assert trace.as_array()[-2, 2] < trace.as_array()[0, 2] - 0.05


def test_uninformative_block_learns_constant(trained_location):
    toy, model, _ = trained_location
    rng = np.random.default_rng(11)
    th = toy.box.sample(rng, 2000)
    x = toy(th, N_OBS, rng)
    hold = make_tre_batch(model.encode(x)[1], th, toy.box, 1, rng)
    bce, _, _, B = metrics(model, hold, head=1)
    assert abs(B - 1.0) < 0.05
    assert bce < np.log(2) + 0.01


def test_config_round_trip_and_unknown_keys():
    cfg = TrainConfig(n_iter=10, hidden=(4, 3))
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ParameterError):
        TrainConfig.from_dict({"n_iterations": 3})


def test_simulator_requires_all_parameters():
    with pytest.raises(ParameterError):
        TrawlSimulator(["gamma_acf", "eta_acf", "mu"])
    sim = TrawlSimulator(["gamma_acf", "eta_acf", "mu"], fixed={"sigma": 1.0, "beta": 0.0})
    x = sim(np.array([[12.0, 15.0, 0.3]] * 2), 50, np.random.default_rng(0))
    assert x.shape == (2, 50) and np.all(np.isfinite(x))


def test_simulator_marginal_moments():
    sim = TrawlSimulator(default_box().names)
    th = np.array([[12.0, 15.0, 0.4, 1.3, 2.0]])
    x = sim(np.repeat(th, 200, axis=0), 200, np.random.default_rng(1)).ravel()
    # strongly correlated within series: se from the per-series means
    means = x.reshape(200, 200).mean(axis=1)
    assert abs(means.mean() - 0.4) < 4 * means.std() / np.sqrt(200)
    assert abs(x.std() - 1.3) < 0.1
