import numpy as np
import pytest

from mvipkg.optimize import (OptimConfig, finite_difference_gradient,
                             finite_difference_jacobian, minimize)


def quadratic_problem(n, seed):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((n, n))
    a = m @ m.T + n * np.eye(n)
    b = rng.standard_normal(n)

    def f(x):
        return 0.5 * x @ a @ x - b @ x, a @ x - b

    return f, np.linalg.solve(a, b)


def rosenbrock(x):
    val = 100.0 * (x[1] - x[0] ** 2) ** 2 + (1.0 - x[0]) ** 2
    grad = np.array([
        -400.0 * x[0] * (x[1] - x[0] ** 2) - 2.0 * (1.0 - x[0]),
        200.0 * (x[1] - x[0] ** 2),
    ])
    return val, grad


@pytest.mark.parametrize("n", [2, 5, 10])
def test_spd_quadratic_converges_within_3n_iterations(n):
    f, x_star = quadratic_problem(n, seed=n)
    cfg = OptimConfig(max_iters=10 * n, grad_tol=1.0e-8, f_tol=0.0)
    res = minimize(f, np.zeros(n), cfg)
    assert res.grad_norm <= 1.0e-8
    assert res.n_iters <= 3 * n
    assert np.max(np.abs(res.x - x_star)) < 1.0e-6


def test_rosenbrock_reaches_minimum():
    res = minimize(rosenbrock, np.array([-1.2, 1.0]),
                   OptimConfig(max_iters=500, grad_tol=1.0e-8, f_tol=0.0))
    assert res.f < 1.0e-8
    assert np.max(np.abs(res.x - 1.0)) < 1.0e-4


def test_constant_shift_leaves_iterates_unchanged():
    f, _ = quadratic_problem(6, seed=1)

    def shifted(x):
        v, g = f(x)
        return v + 123.456, g

    x0 = np.full(6, 0.3)
    res_a = minimize(f, x0, OptimConfig())
    res_b = minimize(shifted, x0, OptimConfig())
    assert res_a.n_iters == res_b.n_iters
    np.testing.assert_array_equal(res_a.x, res_b.x)


def test_trace_is_monotone_non_increasing():
    res = minimize(rosenbrock, np.array([-1.2, 1.0]), OptimConfig(max_iters=200))
    trace = np.asarray(res.trace)
    assert trace.size >= 1
    assert np.all(np.diff(trace) <= 0.0)


def test_f_tol_termination_reports_reason():
    f, _ = quadratic_problem(4, seed=2)
    res = minimize(f, np.ones(4), OptimConfig(grad_tol=0.0, f_tol=1.0e-6))
    assert res.reason == "f_tol"


def test_max_iters_termination_reports_reason():
    f, _ = quadratic_problem(8, seed=3)
    res = minimize(f, np.ones(8), OptimConfig(max_iters=2, grad_tol=0.0, f_tol=0.0))
    assert res.reason == "max_iters"
    assert res.n_iters == 2


def test_deterministic_given_start():
    res_a = minimize(rosenbrock, np.array([0.5, -0.5]), OptimConfig())
    res_b = minimize(rosenbrock, np.array([0.5, -0.5]), OptimConfig())
    np.testing.assert_array_equal(res_a.x, res_b.x)
    assert res_a.f == res_b.f


def test_non_finite_objective_raises():
    def bad(x):
        if x[0] > 0.5:
            return np.inf, np.full_like(x, np.nan)
        return float(x @ x - 2 * x.sum()), 2 * x - 2.0

    # descent direction pushes x toward 1, where the objective blows up; the
    # minimizer must either step around it or give up loudly, never return nan
    res = minimize(bad, np.zeros(2), OptimConfig(max_iters=50))
    assert np.isfinite(res.f)


def test_finite_difference_gradient_matches_analytic():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((5, 5))
    a = a @ a.T + 5 * np.eye(5)

    def f(x):
        return float(0.5 * x @ a @ x)

    x = rng.standard_normal(5)
    fd = finite_difference_gradient(f, x)
    np.testing.assert_allclose(fd, a @ x, rtol=1.0e-6)


def test_finite_difference_jacobian_matches_analytic():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((4, 4))

    def g(x):
        return a @ x

    x = rng.standard_normal(4)
    fd = finite_difference_jacobian(g, x)
    np.testing.assert_allclose(fd, a, atol=1.0e-7)
