import numpy as np
import pytest

from auqadmm.inner import conjugate_gradient, lbfgs, strong_wolfe

from conftest import random_spd


def test_cg_matches_dense_solve(rng):
    A = random_spd(rng, 20, cond=50)
    b = rng.standard_normal(20)
    x, info = conjugate_gradient(lambda z: A @ z, b, tol=1e-12, max_iter=200)
    assert info.converged
    np.testing.assert_allclose(x, np.linalg.solve(A, b), atol=1e-9)


def test_cg_zero_rhs():
    x, info = conjugate_gradient(lambda z: 2 * z, np.zeros(3))
    np.testing.assert_array_equal(x, 0)
    assert info.iterations == 0 and info.converged


def test_cg_budget_reported(rng):
    A = random_spd(rng, 30, cond=1e4)
    _, info = conjugate_gradient(lambda z: A @ z, rng.standard_normal(30), tol=1e-14, max_iter=2)
    assert not info.converged and info.iterations == 2


def _rosen(x):
    f = 100 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2
    g = np.array([-400 * x[0] * (x[1] - x[0] ** 2) - 2 * (1 - x[0]), 200 * (x[1] - x[0] ** 2)])
    return f, g


def test_lbfgs_rosenbrock():
    x, info = lbfgs(_rosen, np.array([-1.2, 1.0]), tol=1e-8, max_iter=500)
    assert info.converged
    np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-6)


def test_lbfgs_quadratic(rng):
    A = random_spd(rng, 15, cond=100)
    b = rng.standard_normal(15)
    x, info = lbfgs(lambda z: (0.5 * z @ A @ z - b @ z, A @ z - b), np.zeros(15), tol=1e-10)
    assert info.converged
    np.testing.assert_allclose(x, np.linalg.solve(A, b), atol=1e-8)


def test_lbfgs_does_not_modify_start():
    x0 = np.array([-1.2, 1.0])
    lbfgs(_rosen, x0, max_iter=3)
    np.testing.assert_array_equal(x0, [-1.2, 1.0])


def test_strong_wolfe_conditions():
    x = np.array([-1.2, 1.0])
    f0, g0 = _rosen(x)
    d = -g0
    dphi0 = float(g0 @ d)

    def phi(a):
        f, g = _rosen(x + a * d)
        return f, float(g @ d), None

    a, fa, _ = strong_wolfe(phi, f0, dphi0, a1=1.0 / np.linalg.norm(g0))
    _, ga, _ = phi(a)
    assert fa <= f0 + 1e-4 * a * dphi0
    assert abs(ga) <= 0.9 * abs(dphi0)
