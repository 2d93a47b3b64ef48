import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from mvipkg.errors import DataError
from mvipkg.models import (CauchyRegression, GaussianLinearModel, kmeans,
                           rbf_features, squared_distances)
from mvipkg.optimize import finite_difference_gradient, finite_difference_jacobian

from conftest import ALL_MODEL_MAKERS, make_conjugate


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------

def test_squared_distances_brute_force():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((7, 3))
    C = rng.standard_normal((4, 3))
    expected = np.array([[np.sum((x - c) ** 2) for c in C] for x in X])
    np.testing.assert_allclose(squared_distances(X, C), expected, atol=1.0e-12)


def test_rbf_features_bias_column_and_kernel_values():
    X = np.array([[0.0], [2.0]])
    C = np.array([[0.0], [1.0]])
    phi = rbf_features(X, C, width=2.0)
    assert phi.shape == (2, 3)
    np.testing.assert_array_equal(phi[:, -1], 1.0)
    assert phi[0, 0] == pytest.approx(1.0)
    assert phi[0, 1] == pytest.approx(math.exp(-1.0 / 8.0))
    assert phi[1, 0] == pytest.approx(math.exp(-4.0 / 8.0))


def test_kmeans_deterministic_and_finite():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((40, 2))
    c1 = kmeans(X, 5, seed=11)
    c2 = kmeans(X, 5, seed=11)
    np.testing.assert_array_equal(c1, c2)
    assert np.all(np.isfinite(c1))
    assert c1.shape == (5, 2)


def test_kmeans_all_points_returns_data():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((6, 2))
    centers = kmeans(X, 6, seed=0)
    np.testing.assert_allclose(np.sort(centers, axis=0), np.sort(X, axis=0))


def test_kmeans_separated_clusters_found():
    rng = np.random.default_rng(5)
    X = np.vstack([rng.normal(-10, 0.1, size=(20, 1)),
                   rng.normal(10, 0.1, size=(20, 1))])
    centers = np.sort(kmeans(X, 2, seed=0).ravel())
    assert abs(centers[0] + 10) < 0.5 and abs(centers[1] - 10) < 0.5


# ---------------------------------------------------------------------------
# finite-difference oracles for every model
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("name", sorted(ALL_MODEL_MAKERS))
def test_gradient_matches_finite_differences(name):
    model = ALL_MODEL_MAKERS[name]()
    rng = np.random.default_rng(10)
    for _ in range(3):
        w = 0.5 * rng.standard_normal(model.P)
        fd = finite_difference_gradient(lambda x: model.value(x), w)
        np.testing.assert_allclose(model.grad(w), fd, rtol=2.0e-6, atol=1.0e-8)


@pytest.mark.parametrize("name", sorted(ALL_MODEL_MAKERS))
def test_hessian_matches_finite_differences(name):
    model = ALL_MODEL_MAKERS[name]()
    rng = np.random.default_rng(11)
    w = 0.4 * rng.standard_normal(model.P)
    fd = finite_difference_jacobian(lambda x: model.grad(x), w)
    fd = 0.5 * (fd + fd.T)
    np.testing.assert_allclose(model.hessian(w), fd, rtol=5.0e-5, atol=1.0e-6)


@pytest.mark.parametrize("name", ["cauchy", "logistic", "softmax"])
def test_theta_gradients_match_finite_differences(name):
    model = ALL_MODEL_MAKERS[name]()
    rng = np.random.default_rng(12)
    W = 0.3 * rng.standard_normal((4, model.P))
    analytic = model.theta_grads(W)
    theta0 = model.theta.copy()
    for j in range(theta0.size):
        def value_sum(tj):
            theta = theta0.copy()
            theta[j] = np.asarray(tj).item()
            return float(np.sum(model.with_theta(theta).values(W)))

        fd = finite_difference_gradient(value_sum, np.array([theta0[j]]))[0]
        assert np.sum(analytic[:, j]) == pytest.approx(fd, rel=2.0e-5, abs=1.0e-7)


@pytest.mark.parametrize("name", sorted(ALL_MODEL_MAKERS))
def test_value_bit_reproducible(name):
    model = ALL_MODEL_MAKERS[name]()
    w = np.linspace(-0.5, 0.5, model.P)
    assert model.value(w) == model.value(w)
    np.testing.assert_array_equal(model.grad(w), model.grad(w))


# ---------------------------------------------------------------------------
# single-datum closed forms
# ---------------------------------------------------------------------------

def test_cauchy_value_at_zero_residual():
    # one datum with y = w' phi, w = 0, alpha = 1: the likelihood is the
    # Cauchy density at its peak and the prior is a standard normal at zero
    X = np.array([[0.7]])
    centers = np.array([[0.0]])
    gamma = 0.3
    phi = rbf_features(X, centers, width=1.0)
    w = np.zeros(2)
    y = np.array([float(phi[0] @ w)])
    model = CauchyRegression(X, y, centers, gamma=gamma, alpha=1.0, width=1.0)
    expected = -math.log(math.pi * gamma) - 0.5 * 2 * math.log(2 * math.pi)
    assert model.value(w) == pytest.approx(expected, rel=1.0e-12)


def test_logistic_value_direct_formula():
    model = ALL_MODEL_MAKERS["logistic"]()
    rng = np.random.default_rng(13)
    w = rng.standard_normal(model.P)
    phi = rbf_features(model.X, model.centers, model.width)
    f = phi @ w
    loglik = float(np.sum(model.y * f - np.logaddexp(0.0, f)))
    prior = float(-0.5 * model.alpha * w @ w
                  + 0.5 * model.P * (np.log(model.alpha) - np.log(2 * np.pi)))
    assert model.value(w) == pytest.approx(loglik + prior, rel=1.0e-12)


# ---------------------------------------------------------------------------
# conjugate closed forms against independent routes
# ---------------------------------------------------------------------------

def test_exact_posterior_matches_direct_solve():
    model = make_conjugate(seed=2, n=12, p=3)
    mean, cov = model.exact_posterior()
    A = model.beta * model.phi.T @ model.phi + model.alpha * np.eye(3)
    np.testing.assert_allclose(cov @ A, np.eye(3), atol=1.0e-12)
    np.testing.assert_allclose(A @ mean, model.beta * model.phi.T @ model.y,
                               atol=1.0e-10)


def test_log_evidence_matches_quadrature_oracle():
    # 1-D weight so the evidence integral is a plain Riemann sum
    model = make_conjugate(seed=3, n=8, p=1, beta=1.5, alpha=0.7)
    w_grid = np.linspace(-8.0, 8.0, 40001).reshape(-1, 1)
    vals = model.values(w_grid)
    dx = w_grid[1, 0] - w_grid[0, 0]
    m = vals.max()
    quad = m + np.log(np.sum(np.exp(vals - m)) * dx)
    assert model.log_evidence() == pytest.approx(float(quad), abs=1.0e-8)


def test_test_log_marginal_matches_scipy_density():
    model = make_conjugate(seed=4, n=15, p=3)
    rng = np.random.default_rng(5)
    phi_t = rng.standard_normal((4, 3))
    y_t = rng.standard_normal(4)
    mean, cov = model.exact_posterior()
    m = phi_t @ mean
    S = phi_t @ cov @ phi_t.T + np.eye(4) / model.beta
    expected = multivariate_normal(mean=m, cov=S).logpdf(y_t)
    assert model.test_log_marginal(phi_t, y_t) == pytest.approx(expected,
                                                                rel=1.0e-10)


def test_conjugate_evidence_consistency_via_posterior_identity():
    # ln p(y) = ln p(y|w) + ln p(w) - ln p(w|y) at any w; use w = 0
    model = make_conjugate(seed=6, n=9, p=4)
    mean, cov = model.exact_posterior()
    w = np.zeros(4)
    log_post_at_w = multivariate_normal(mean=mean, cov=cov).logpdf(w)
    assert model.log_evidence() == pytest.approx(
        model.value(w) - log_post_at_w, rel=1.0e-10)


def test_conjugate_rejects_nonempty_theta():
    model = make_conjugate()
    with pytest.raises(ValueError):
        model.with_theta(np.array([0.1]))


# ---------------------------------------------------------------------------
# batch consistency
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("name", sorted(ALL_MODEL_MAKERS))
def test_batched_values_match_loop(name):
    model = ALL_MODEL_MAKERS[name]()
    rng = np.random.default_rng(14)
    W = 0.3 * rng.standard_normal((5, model.P))
    batched = model.values(W)
    looped = np.array([model.value(w) for w in W])
    np.testing.assert_allclose(batched, looped, rtol=1.0e-12)


@pytest.mark.parametrize("name", sorted(ALL_MODEL_MAKERS))
def test_batched_grads_match_loop(name):
    model = ALL_MODEL_MAKERS[name]()
    rng = np.random.default_rng(15)
    W = 0.3 * rng.standard_normal((5, model.P))
    batched = model.grads(W)
    looped = np.vstack([model.grad(w) for w in W])
    np.testing.assert_allclose(batched, looped, rtol=1.0e-12)
