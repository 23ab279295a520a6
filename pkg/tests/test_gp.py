import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bamld.gp import (GpConfig, GpPredictive, TaskDataset, condition_batch, features, gaussian_entropy,
                      gaussian_log_density, kernel_matrix, lml_and_grad_batch, lml_and_grad_stack, log_marginal_likelihood,
                      log_marginal_likelihood_grad, marginal_gaussian, mean_function, posterior_mean,
                      sample_gaussian)
from bamld.nn import MlpSpec, ShapeError

from conftest import random_spd, random_task, rel_err

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)
HALF_LOG_2PIE = 0.5 * math.log(2 * math.pi * math.e)


def zero_cfg(noise=0.5):
    return GpConfig.build(hidden=(3, 3), feature_dim=2, noise_variance=noise)


def five_point(f, x, h=1e-3):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (-f(x + 2 * e) + 8 * f(x + e) - 8 * f(x - e) + f(x - 2 * e)) / (12 * h)
    return g


def test_task_dataset_validation():
    with pytest.raises(ValueError):
        TaskDataset(np.zeros((3, 1)), np.zeros(2))
    with pytest.raises(ValueError):
        TaskDataset(np.zeros((0, 1)))
    t = TaskDataset(np.arange(3.0))
    assert t.x.shape == (3, 1) and not t.labeled


def test_config_validation():
    with pytest.raises(ValueError):
        GpConfig.build(noise_variance=0.0)
    with pytest.raises(ValueError):
        GpConfig(MlpSpec(1, (2,), 2), MlpSpec(1, (2,), 2), 0.1)  # mean net must be scalar


def test_split_puts_mean_params_first(small_cfg):
    theta = np.arange(small_cfg.n_params, dtype=float)
    wm, wf = small_cfg.split(theta)
    assert wm.size == small_cfg.mean_spec.n_params and wf[0] == wm.size


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 8))
def test_kernel_diagonal_is_exactly_half(seed, n):
    cfg = GpConfig.build(hidden=(4, 4), feature_dim=2)
    rng = np.random.default_rng(seed)
    theta = rng.normal(size=cfg.n_params)
    x = rng.uniform(-5, 5, size=(n, 1))
    K = kernel_matrix(theta, x, x, cfg)
    assert np.all(np.diag(K) == 0.5)
    assert np.allclose(K, K.T, rtol=0, atol=1e-15)


def test_kernel_unit_embedding_distance():
    # feature net: 1 -> 1 -> 1 with identity-like weights on tanh, then readout w
    mean_spec, feat_spec = MlpSpec(1, (1,), 1), MlpSpec(1, (1,), 1)
    cfg = GpConfig(mean_spec, feat_spec, 0.1)
    x = np.array([[0.0], [0.5]])
    w = 1.0 / math.tanh(0.5)  # embeddings 0 and 1
    theta = np.concatenate([np.zeros(mean_spec.n_params), [1.0, 0.0, w, 0.0]])
    K = kernel_matrix(theta, x, x, cfg)
    assert K[0, 1] == pytest.approx(0.5 * math.exp(-1.0), rel=1e-14)
    assert K[0, 1] == pytest.approx(0.18394, abs=1e-5)


def test_kernel_matches_double_loop(small_cfg):
    rng = np.random.default_rng(1)
    theta = small_cfg.init_theta(rng)
    x1, x2 = rng.normal(size=(5, 1)), rng.normal(size=(4, 1))
    f1, f2 = features(theta, x1, small_cfg), features(theta, x2, small_cfg)
    ref = np.array([[0.5 * math.exp(-sum((a - b) ** 2 for a, b in zip(u, v))) for v in f2] for u in f1])
    np.testing.assert_allclose(kernel_matrix(theta, x1, x2, small_cfg), ref, rtol=1e-13)


def test_kernel_shape_error(small_cfg):
    with pytest.raises(ShapeError):
        kernel_matrix(np.zeros(small_cfg.n_params), np.zeros((2, 2)), np.zeros((2, 1)), small_cfg)


def test_marginal_zero_weights():
    cfg = zero_cfg(0.5)
    pred = marginal_gaussian(np.zeros(cfg.n_params), np.array([[1.3]]), cfg)
    assert pred.mean[0] == 0.0 and pred.cov[0, 0] == 1.0


def test_marginal_cov_is_kernel_plus_noise(small_cfg):
    rng = np.random.default_rng(2)
    theta = small_cfg.init_theta(rng)
    x = rng.normal(size=(4, 1))
    pred = marginal_gaussian(theta, x, small_cfg)
    np.testing.assert_array_equal(pred.cov, kernel_matrix(theta, x, x, small_cfg) + 0.12 * np.eye(4))
    np.testing.assert_allclose(pred.mean, mean_function(theta, x, small_cfg))


@pytest.mark.parametrize("y, expected", [(0.0, -HALF_LOG_2PI), (2.0, -2.0 - HALF_LOG_2PI)])
def test_lml_scalar_cases(y, expected):
    cfg = zero_cfg(0.5)
    task = TaskDataset(np.array([[0.7]]), np.array([y]))
    assert log_marginal_likelihood(np.zeros(cfg.n_params), task, cfg) == pytest.approx(expected, abs=1e-14)


def test_lml_matches_dense_inverse(small_cfg):
    rng = np.random.default_rng(3)
    theta = small_cfg.init_theta(rng)
    task = random_task(rng, n=6)
    pred = marginal_gaussian(theta, task.x, small_cfg)
    r = task.y - pred.mean
    dense = (-0.5 * r @ np.linalg.inv(pred.cov) @ r - 0.5 * np.linalg.slogdet(pred.cov)[1]
             - 3 * math.log(2 * math.pi))
    assert log_marginal_likelihood(theta, task, small_cfg) == pytest.approx(dense, rel=1e-12)


def test_lml_requires_labels(small_cfg):
    with pytest.raises(ValueError):
        log_marginal_likelihood(np.zeros(small_cfg.n_params), TaskDataset(np.zeros((2, 1))), small_cfg)


def test_lml_permutation_invariant(small_cfg):
    rng = np.random.default_rng(4)
    theta = small_cfg.init_theta(rng)
    task = random_task(rng, n=7)
    perm = rng.permutation(7)
    shuffled = TaskDataset(task.x[perm], task.y[perm])
    assert abs(log_marginal_likelihood(theta, task, small_cfg)
               - log_marginal_likelihood(theta, shuffled, small_cfg)) < 1e-10


def test_batched_lml_matches_single(small_cfg):
    rng = np.random.default_rng(5)
    thetas = small_cfg.init_theta(rng, 3)
    task = random_task(rng, n=5)
    lml, grad = lml_and_grad_batch(thetas, task, small_cfg)
    for p in range(3):
        assert lml[p] == pytest.approx(log_marginal_likelihood(thetas[p], task, small_cfg), rel=1e-12)
        np.testing.assert_allclose(grad[p], log_marginal_likelihood_grad(thetas[p], task, small_cfg),
                                   rtol=1e-12, atol=1e-14)


def test_mean_gradient_vanishes_at_zero_residual(small_cfg):
    rng = np.random.default_rng(6)
    theta = small_cfg.init_theta(rng)
    x = rng.normal(size=(5, 1))
    task = TaskDataset(x, mean_function(theta, x, small_cfg))
    g = log_marginal_likelihood_grad(theta, task, small_cfg)
    # the mean-net gradient is (d mu/d theta)^T K~^{-1} (y - mu), exactly zero here
    assert np.all(np.abs(g[:small_cfg.n_mean]) < 1e-14)


def test_gradient_one_parameter_mean_by_hand():
    # mean net 1 -> 1 -> 1; only the output bias b2 is free and mu = b2
    mean_spec, feat_spec = MlpSpec(1, (1,), 1), MlpSpec(1, (1,), 1)
    cfg = GpConfig(mean_spec, feat_spec, 0.3)
    b2, y = 0.4, 1.5
    theta = np.concatenate([[0.0, 0.0, 0.0, b2], np.zeros(4)])
    task = TaskDataset(np.array([[0.2]]), np.array([y]))
    # d/d b2 of log N(y; b2, 0.5 + 0.3) = (y - b2) / 0.8
    g = log_marginal_likelihood_grad(theta, task, cfg)
    assert g[3] == pytest.approx((y - b2) / 0.8, rel=1e-14)


@pytest.mark.parametrize("seed", range(20))
def test_gradient_matches_finite_differences(seed, small_cfg):
    rng = np.random.default_rng(seed)
    theta = small_cfg.init_theta(rng)
    task = random_task(rng, n=5)
    g = log_marginal_likelihood_grad(theta, task, small_cfg)
    fd = five_point(lambda t: log_marginal_likelihood(t, task, small_cfg), theta)
    assert rel_err(g, fd).max() < 1e-4


@pytest.mark.parametrize("m, expected", [(1, HALF_LOG_2PIE), (2, 2 * HALF_LOG_2PIE)])
def test_entropy_identity(m, expected):
    pred = GpPredictive.from_cov(np.zeros(m), np.eye(m))
    assert gaussian_entropy(pred) == pytest.approx(expected, abs=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_entropy_matches_eigenvalues(seed):
    rng = np.random.default_rng(seed)
    S = random_spd(rng, 6)
    oracle = 0.5 * np.sum(np.log(2 * math.pi * math.e * np.linalg.eigvalsh(S)))
    assert abs(gaussian_entropy(GpPredictive.from_cov(np.zeros(6), S)) - oracle) < 1e-9


@pytest.mark.parametrize("y, expected", [(0.0, -HALF_LOG_2PI), (1.0, -0.5 - HALF_LOG_2PI)])
def test_log_density_scalar(y, expected):
    pred = GpPredictive.from_cov(np.zeros(1), np.eye(1))
    assert gaussian_log_density(pred, np.array([y])) == pytest.approx(expected, abs=1e-14)


def test_log_density_matches_direct_quadratic_form():
    rng = np.random.default_rng(7)
    S = random_spd(rng, 4)
    mu, y = rng.normal(size=4), rng.normal(size=4)
    pred = GpPredictive.from_cov(mu, S)
    r = y - mu
    direct = -0.5 * r @ np.linalg.solve(S, r) - 0.5 * np.log(np.linalg.det(S)) - 2 * math.log(2 * math.pi)
    assert gaussian_log_density(pred, y) == pytest.approx(direct, rel=1e-12)
    many = gaussian_log_density(pred, np.stack([y, y]))
    assert many.shape == (2,) and many[0] == pytest.approx(direct, rel=1e-12)


def test_log_density_shape_error():
    with pytest.raises(ShapeError):
        gaussian_log_density(GpPredictive.from_cov(np.zeros(2), np.eye(2)), np.zeros(3))


def test_sample_with_zero_noise_is_mean():
    pred = GpPredictive.from_cov(np.array([1.0, -2.0]), np.eye(2))
    np.testing.assert_array_equal(sample_gaussian(pred, None, z=np.zeros(2)), pred.mean)


def test_sample_variance_and_determinism():
    pred = GpPredictive.from_cov(np.zeros(1), np.eye(1))
    s = sample_gaussian(pred, np.random.default_rng(8), size=100_000)[:, 0]
    # the sample variance has standard deviation about sqrt(2 / n)
    assert abs(s.var() - 1.0) < 3 * math.sqrt(2 / s.size)
    a = sample_gaussian(pred, np.random.default_rng(9), size=5)
    b = sample_gaussian(pred, np.random.default_rng(9), size=5)
    assert np.array_equal(a, b)


def test_condition_matches_dense_inverse(small_cfg):
    rng = np.random.default_rng(10)
    theta = small_cfg.init_theta(rng)
    x, y, xs = rng.normal(size=(3, 1)), rng.normal(size=3), rng.normal(size=(4, 1))
    K = kernel_matrix(theta, x, x, small_cfg) + 0.12 * np.eye(3)
    Ks = kernel_matrix(theta, x, xs, small_cfg)
    Kss = kernel_matrix(theta, xs, xs, small_cfg)
    m = mean_function(theta, xs, small_cfg) + Ks.T @ np.linalg.inv(K) @ (y - mean_function(theta, x, small_cfg))
    C = Kss - Ks.T @ np.linalg.inv(K) @ Ks
    mean, cov = condition_batch(theta[None], x, y, xs, small_cfg, full_cov=True)
    np.testing.assert_allclose(mean[0], m, atol=1e-12)
    np.testing.assert_allclose(cov[0], C, atol=1e-12)
    mean2, var = condition_batch(theta[None], x, y, xs, small_cfg)
    np.testing.assert_allclose(var[0], np.diag(C), atol=1e-12)
    np.testing.assert_allclose(posterior_mean(theta, x, y, xs, small_cfg), m, atol=1e-12)


def test_condition_without_context_is_prior(small_cfg):
    rng = np.random.default_rng(11)
    thetas = small_cfg.init_theta(rng, 2)
    xs = rng.normal(size=(3, 1))
    mean, var = condition_batch(thetas, None, None, xs, small_cfg)
    np.testing.assert_array_equal(mean, mean_function(thetas, xs, small_cfg))
    assert np.all(var == 0.5)


def test_stacked_tasks_match_single_task_bit_for_bit(small_cfg):
    rng = np.random.default_rng(40)
    tasks = [random_task(rng, n=6, task_id=i) for i in range(4)]
    thetas = small_cfg.init_theta(rng, 3)
    lml, grad = lml_and_grad_stack(thetas, tasks, small_cfg)
    assert lml.shape == (3, 4) and grad.shape == (3, 4, small_cfg.n_params)
    for j, t in enumerate(tasks):
        a, b = lml_and_grad_batch(thetas, t, small_cfg)
        assert np.array_equal(a, lml[:, j]) and np.array_equal(b, grad[:, j])


def test_stack_rejects_mixed_sizes_and_empty(small_cfg):
    rng = np.random.default_rng(41)
    theta = small_cfg.init_theta(rng)
    with pytest.raises(ShapeError):
        lml_and_grad_stack(theta, [random_task(rng, n=3), random_task(rng, n=4)], small_cfg)
    with pytest.raises(ValueError):
        lml_and_grad_stack(theta, [], small_cfg)
