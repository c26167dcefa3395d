import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from oracles import dense_posterior, random_smooth_function

from bssrl import gp
from bssrl.bench import make_benchmark
from bssrl.errors import ContractViolation, NumericalError


def theta1(ell=1.0, s2=1.0, noise=0.0):
    return gp.GPHyperparams([ell], s2, noise)


def dense_nll(X, y, ell, s2, noise):
    """Negative log evidence via slogdet and a dense solve."""
    X = np.atleast_2d(X)
    d2 = np.sum(((X[:, None, :] - X[None, :, :]) / ell) ** 2, axis=-1)
    K = s2 * np.exp(-0.5 * d2) + noise * np.eye(len(y))
    _, logdet = np.linalg.slogdet(K)
    return 0.5 * (y @ np.linalg.solve(K, y) + logdet + len(y) * math.log(2 * math.pi))


# -- kernel -------------------------------------------------------------------


def test_kernel_self_similarity_is_signal_variance():
    theta = gp.GPHyperparams([0.3, 2.0], 1.7, 0.1)
    assert gp.kernel_eval([0.4, -1.2], [0.4, -1.2], theta) == 1.7


def test_kernel_unit_distance_value():
    # exp(-1/2) written out to 20 digits
    assert gp.kernel_eval([0.0], [1.0], theta1()) == pytest.approx(0.60653065971263342360, abs=1e-15)


def test_kernel_infinite_lengthscale_limit():
    assert abs(gp.kernel_eval([0.0], [1.0], theta1(ell=1e6)) - 1.0) <= 1e-9


def test_kernel_dimension_mismatch():
    with pytest.raises(ContractViolation):
        gp.kernel_eval([0.0, 1.0], [1.0, 2.0], theta1())


coords = st.floats(-3, 3, allow_nan=False)


@given(
    arrays(float, 3, elements=coords),
    arrays(float, 3, elements=coords),
    arrays(float, 3, elements=st.floats(0.05, 20)),
    st.floats(1e-3, 50),
)
def test_kernel_symmetric_and_bounded(x, y, ell, s2):
    theta = gp.GPHyperparams(ell, s2, 0.0)
    k = gp.kernel_eval(x, y, theta)
    assert k == gp.kernel_eval(y, x, theta)
    assert 0.0 <= k <= s2


# -- gram matrix ---------------------------------------------------------------


def test_gram_single_point():
    K = gp.gram_matrix([[0.5]], gp.GPHyperparams([1.0], 2.0, 0.1), jitter=0)
    assert K.tolist() == [[2.1]]


def test_gram_two_points():
    K = gp.gram_matrix([[0.0], [1.0]], theta1(), jitter=0)
    assert K[0, 1] == pytest.approx(math.exp(-0.5), abs=1e-15)
    assert K[0, 0] == 1.0 and K[1, 1] == 1.0


def test_gram_default_jitter_scales_with_signal():
    K = gp.gram_matrix([[0.0]], gp.GPHyperparams([1.0], 4.0, 0.0))
    assert K[0, 0] == 4.0 + 4e-8


def test_gram_empty_rejected():
    with pytest.raises(ContractViolation):
        gp.gram_matrix(np.empty((0, 1)), theta1())


@given(st.integers(1, 20), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_gram_symmetric_and_psd(n, d, seed):
    r = np.random.default_rng(seed)
    X = r.uniform(-3, 3, (n, d))
    theta = gp.GPHyperparams(r.uniform(0.05, 5, d), r.uniform(0.1, 5), 0.0)
    K = gp.gram_matrix(X, theta, jitter=0)
    assert np.array_equal(K, K.T)
    assert np.linalg.eigvalsh(K).min() >= -1e-8


# -- likelihood ----------------------------------------------------------------


def test_nll_single_zero_observation():
    data = gp.Dataset([[0.0]], [0.0])
    assert gp.neg_log_marginal_likelihood(data, theta1(), jitter=0) == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-12)


def test_nll_two_points_closed_form():
    X = np.array([[0.2], [1.1]])
    y = np.array([0.7, -0.4])
    ell, s2, noise = 0.8, 1.3, 0.05
    a = s2 + noise
    b = s2 * math.exp(-0.5 * (0.9 / ell) ** 2)
    det = a * a - b * b
    quad = (a * y[0] ** 2 - 2 * b * y[0] * y[1] + a * y[1] ** 2) / det
    expected = 0.5 * (quad + math.log(det) + 2 * math.log(2 * math.pi))
    got = gp.neg_log_marginal_likelihood(gp.Dataset(X, y), gp.GPHyperparams([ell], s2, noise), jitter=0)
    assert got == pytest.approx(expected, abs=1e-10)


def test_nll_finite_as_noise_grows():
    data = gp.Dataset([[0.0], [0.0], [1.0]], [1.0, -1.0, 3.0])
    for noise in np.logspace(-8, 3, 23):
        assert np.isfinite(gp.neg_log_marginal_likelihood(data, theta1(noise=noise)))


def test_jitter_escalates_on_singular_gram():
    data = gp.Dataset([[0.0], [0.0]], [1.0, 1.0])
    with pytest.raises(NumericalError):
        gp.neg_log_marginal_likelihood(data, theta1(), jitter=0)
    assert np.isfinite(gp.neg_log_marginal_likelihood(data, theta1()))


def test_nll_gradient_matches_finite_differences(rng):
    X = rng.uniform(-3, 3, (12, 2))
    y = np.sin(X[:, 0]) + X[:, 1] ** 2 / 5
    p = np.log([0.9, 1.7, 1.2, 0.03])
    _, g = gp._nll_and_grad(p, X, y)
    h = 1e-6
    fd = np.array(
        [(gp._nll_and_grad(p + h * e, X, y)[0] - gp._nll_and_grad(p - h * e, X, y)[0]) / (2 * h) for e in np.eye(4)]
    )
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)


# -- fitting -------------------------------------------------------------------


def _gp_sample(n, ell, s2, noise, seed):
    r = np.random.default_rng(seed)
    X = np.sort(r.uniform(-3, 3, n)).reshape(-1, 1)
    K = s2 * np.exp(-0.5 * ((X - X.T) / ell) ** 2) + 1e-10 * np.eye(n)
    f = np.linalg.cholesky(K) @ r.standard_normal(n)
    return X, f + math.sqrt(noise) * r.standard_normal(n)


def test_fit_recovers_lengthscale_and_beats_grid_search():
    X, y = _gp_sample(40, 0.5, 1.0, 0.01, seed=3)
    theta = gp.fit_hyperparams(gp.Dataset(X, y))
    assert 0.25 <= theta.lengthscales[0] <= 1.0
    grid = [
        dense_nll(X, y, ell, s2, noise)
        for ell in np.logspace(-1.5, 0.5, 21)
        for s2 in np.logspace(-1, 1, 11)
        for noise in np.logspace(-4, 0, 9)
    ]
    fitted = dense_nll(X, y, theta.lengthscales[0], theta.signal_variance, theta.noise_variance)
    assert fitted <= min(grid) + 1e-6


def test_fit_zero_outputs_pushes_signal_to_lower_bound():
    X = np.linspace(-3, 3, 10).reshape(-1, 1)
    y = np.zeros(10)
    # oracle: at fixed lengthscale and noise the evidence falls as s2 grows
    values = [dense_nll(X, y, 1.0, s2, 1e-6) for s2 in np.logspace(-4, 2, 13)]
    assert all(np.diff(values) > 0)
    theta = gp.fit_hyperparams(gp.Dataset(X, y))
    assert theta.signal_variance <= 1e-3


def test_fit_duplicated_inputs_uses_noise():
    X = np.array([[0.0], [0.0], [1.0], [1.0]])
    y = np.array([1.0, -1.0, 0.5, -0.5])
    theta = gp.fit_hyperparams(gp.Dataset(X, y))
    assert theta.noise_variance > 1e-8 * 10


def test_fit_respects_bounds_and_is_deterministic(rng):
    X = rng.uniform(-3, 3, (15, 2))
    y = np.cos(X[:, 0]) * X[:, 1]
    cfg = gp.FitConfig(seed=7)
    a = gp.fit_hyperparams(gp.Dataset(X, y), cfg)
    b = gp.fit_hyperparams(gp.Dataset(X, y), cfg)
    assert np.array_equal(a.to_log(), b.to_log())
    lo, hi = np.array(cfg.log_bounds(2)).T
    assert np.all(a.to_log() >= lo - 1e-12) and np.all(a.to_log() <= hi + 1e-12)


@given(st.integers(1, 12), st.integers(1, 2), st.integers(0, 2**32 - 1))
def test_fit_never_worse_than_any_start(n, d, seed):
    r = np.random.default_rng(seed)
    data = gp.Dataset(r.uniform(-3, 3, (n, d)), r.normal(size=n))
    cfg = gp.FitConfig(restarts=3, seed=seed % 1000)
    theta = gp.fit_hyperparams(data, cfg)
    starts, _ = gp._initial_guesses(data, cfg, np.random.default_rng(cfg.seed), None)
    best_start = min(gp.neg_log_marginal_likelihood(data, gp.GPHyperparams.from_log(s)) for s in starts)
    assert gp.neg_log_marginal_likelihood(data, theta) <= best_start + 1e-9


def test_fit_empty_rejected():
    with pytest.raises(ContractViolation):
        gp.fit_hyperparams(gp.Dataset.empty(1))


# -- posterior -----------------------------------------------------------------


def test_prior_prediction():
    model = gp.GPModel(gp.Dataset.empty(2), gp.GPHyperparams([1.0, 1.0], 1.0, 0.0))
    assert gp.posterior_predict(model, [0.3, 0.1]) == (0.0, 1.0)


def test_two_point_posterior_linear_solve():
    X = np.array([[-0.5], [0.7]])
    y = np.array([1.2, -0.3])
    theta = gp.GPHyperparams([0.9], 1.5, 1e-3)
    model = gp.GPModel(gp.Dataset(X, y), theta)
    x = 0.1
    k = lambda a, b: 1.5 * math.exp(-0.5 * ((a - b) / 0.9) ** 2)  # noqa: E731
    noise = 1e-3 + model.jitter
    A = np.array([[k(-0.5, -0.5) + noise, k(-0.5, 0.7)], [k(0.7, -0.5), k(0.7, 0.7) + noise]])
    ks = np.array([k(x, -0.5), k(x, 0.7)])
    mean = ks @ np.linalg.solve(A, y)
    var = k(x, x) - ks @ np.linalg.solve(A, ks)
    m, s = gp.posterior_predict(model, [x])
    assert m == pytest.approx(mean, abs=1e-8)
    assert s == pytest.approx(math.sqrt(var), abs=1e-8)


@given(st.integers(1, 10), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_posterior_matches_dense_inverse(n, d, seed):
    r = np.random.default_rng(seed)
    X = r.uniform(-3, 3, (n, d))
    y = r.normal(size=n)
    theta = gp.GPHyperparams(r.uniform(0.3, 3, d), r.uniform(0.5, 2), r.uniform(1e-3, 0.1))
    model = gp.GPModel(gp.Dataset(X, y), theta)
    Xs = r.uniform(-3, 3, (5, d))
    mean, std = model.predict(Xs)
    ref_mean, ref_std = dense_posterior(X, y, Xs, theta.lengthscales, theta.signal_variance, theta.noise_variance + model.jitter)
    np.testing.assert_allclose(mean, ref_mean, atol=1e-8)
    np.testing.assert_allclose(std, ref_std, atol=1e-8)


@given(st.integers(1, 15), st.integers(1, 2), st.integers(0, 2**32 - 1))
def test_interpolation_and_variance_reduction(n, d, seed):
    r = np.random.default_rng(seed)
    X = r.uniform(-3, 3, (n, d))
    y = random_smooth_function(r, d)(X)
    theta = gp.GPHyperparams(r.uniform(0.2, 1.0, d), 1.0, 1e-10)
    model = gp.GPModel(gp.Dataset(X, y), theta)
    mean, _ = model.predict(X)
    assert np.max(np.abs(mean - y)) <= 1e-4
    _, std = model.predict(r.uniform(-3, 3, (50, d)))
    assert np.all(std <= 1.0 + 1e-8)


def test_predict_mean_agrees_with_predict(rng):
    data = gp.Dataset(rng.uniform(-3, 3, (30, 2)), rng.normal(size=30))
    model = gp.GPModel(data, gp.GPHyperparams([0.7, 1.3], 1.1, 1e-4))
    Xs = rng.uniform(-3, 3, (500, 2))
    np.testing.assert_allclose(model.predict_mean(Xs), model.predict(Xs)[0], atol=1e-10)


def test_condition_equals_fresh_model(rng):
    theta = gp.GPHyperparams([0.7], 1.0, 1e-3)
    X = rng.uniform(-3, 3, (6, 1))
    y = rng.normal(size=6)
    a = gp.GPModel(gp.Dataset(X[:4], y[:4]), theta).condition(X[4:], y[4:])
    b = gp.GPModel(gp.Dataset(X, y), theta)
    Xs = np.linspace(-3, 3, 20).reshape(-1, 1)
    np.testing.assert_allclose(a.predict(Xs), b.predict(Xs), atol=1e-12)


def test_model_dimension_mismatch():
    with pytest.raises(ContractViolation):
        gp.GPModel(gp.Dataset([[0.0, 1.0]], [1.0]), theta1())


# -- argmin over candidates ----------------------------------------------------


def test_min_statistics_prior_picks_first_candidate():
    model = gp.GPModel(gp.Dataset.empty(1), theta1(s2=2.0))
    stats = gp.min_statistics(model, [[1.0], [-1.0], [0.0]])
    assert stats.index == 0 and stats.min_mean == 0.0
    assert stats.min_std == pytest.approx(math.sqrt(2.0))


def test_min_statistics_finds_candidate_near_negative_observation():
    theta = gp.GPHyperparams([0.3], 1.0, 1e-6)
    model = gp.GPModel(gp.Dataset([[0.9]], [-5.0]), theta)
    cands = np.array([[-2.0], [-1.0], [0.0], [1.0], [2.0]])
    # brute force over the candidates
    means = [gp.posterior_predict(model, c)[0] for c in cands]
    stats = gp.min_statistics(model, cands)
    assert stats.index == int(np.argmin(means)) == 3


def test_min_statistics_empty_candidates():
    with pytest.raises(ContractViolation):
        gp.min_statistics(gp.GPModel(gp.Dataset.empty(1), theta1()), np.empty((0, 1)))


def test_min_statistics_on_booth_locates_optimum():
    booth = make_benchmark("booth")
    r = np.random.default_rng(0)
    X = r.uniform(-3, 3, (200, 2))
    y = np.array([booth(x) for x in X])
    model = gp.fit_model(gp.Dataset(X, y), gp.FitConfig(restarts=2))
    stats = gp.min_statistics(model, gp.candidate_grid(2))
    target = booth.to_normalized(np.array([1.0, 3.0]))
    assert np.linalg.norm(stats.argmin - target) <= 0.5


def test_candidate_grid_shapes():
    g2 = gp.candidate_grid(2)
    assert g2.shape == (64 * 64, 2)
    assert g2.min() == -3.0 and g2.max() == 3.0
    g3 = gp.candidate_grid(3)
    assert g3.shape == (4096, 3)
    assert np.array_equal(g3, gp.candidate_grid(3))


def test_hyperparams_validation():
    with pytest.raises(ContractViolation):
        gp.GPHyperparams([0.0], 1.0, 0.0)
    with pytest.raises(ContractViolation):
        gp.GPHyperparams([1.0], -1.0, 0.0)
    with pytest.raises(ContractViolation):
        gp.GPHyperparams([1.0], 1.0, -1e-3)
    theta = gp.GPHyperparams([0.5, 2.0], 1.5, 1e-3)
    np.testing.assert_allclose(gp.GPHyperparams.from_log(theta.to_log()).to_log(), theta.to_log(), rtol=0, atol=1e-15)
