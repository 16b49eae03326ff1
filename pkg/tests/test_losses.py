import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from auqadmm.losses import (
    DataError,
    ElasticNetLoss,
    MultinomialLoss,
    SmoothedSvmLoss,
    soft_threshold,
    weighted_prox,
)
from auqadmm.problem import ElasticNet, InvariantViolation, Tikhonov, check_oracle

from oracles import brute_prox, golden_min, prox_subgradient_1d, bisect_root


def _losses(rng):
    X = rng.standard_normal((12, 5))
    yield ElasticNetLoss(X, rng.standard_normal(12))
    yield MultinomialLoss(X, rng.integers(0, 3, 12), 3)
    yield SmoothedSvmLoss(X.T, rng.choice([-1.0, 1.0], 12), eps=0.05)


# --- elastic net -----------------------------------------------------------------


def test_elasticnet_identity_example():
    loss = ElasticNetLoss(np.eye(2), np.zeros(2))
    u = np.array([1.0, 2.0])
    assert loss.value(u) == pytest.approx(2.5)
    np.testing.assert_allclose(loss.gradient(u), [1.0, 2.0])


def test_elasticnet_zero_data():
    y = np.array([1.0, -2.0, 2.0])
    loss = ElasticNetLoss(np.zeros((3, 4)), y)
    u = np.arange(4.0)
    assert loss.value(u) == pytest.approx(0.5 * y @ y)
    np.testing.assert_array_equal(loss.gradient(u), np.zeros(4))


def test_elasticnet_hvp_independent_of_u(rng):
    X = rng.standard_normal((5, 3))
    loss = ElasticNetLoss(X, rng.standard_normal(5))
    x = rng.standard_normal(3)
    np.testing.assert_allclose(loss.hess_vec(np.zeros(3), x), X.T @ X @ x)
    np.testing.assert_allclose(loss.hess_vec(rng.standard_normal(3), x), X.T @ X @ x)


def test_elasticnet_sparse_matches_dense(rng):
    X = rng.standard_normal((6, 4)) * (rng.random((6, 4)) < 0.5)
    y = rng.standard_normal(6)
    u = rng.standard_normal(4)
    a, b = ElasticNetLoss(X, y), ElasticNetLoss(sp.csr_matrix(X), y)
    assert a.value(u) == pytest.approx(b.value(u))
    np.testing.assert_allclose(a.gradient(u), b.gradient(u))


def test_elasticnet_random_gradient_fd(rng):
    loss = ElasticNetLoss(rng.standard_normal((5, 3)), rng.standard_normal(5))
    assert check_oracle(loss, rng.standard_normal(3), trials=5).grad_error < 1e-6


def test_elasticnet_shape_errors():
    with pytest.raises(ValueError):
        ElasticNetLoss(np.eye(3), np.zeros(2))
    with pytest.raises(ValueError):
        ElasticNetLoss(np.eye(3), np.zeros(3)).value(np.zeros(2))


# --- multinomial -------------------------------------------------------------------


def test_multinomial_uniform_values(rng):
    one = MultinomialLoss(np.array([[0.3, -1.0]]), np.array([1]), 2)
    assert one.value(np.zeros(4)) == pytest.approx(math.log(2))
    nj = 17
    many = MultinomialLoss(rng.standard_normal((nj, 6)), rng.integers(0, 10, nj), 10)
    assert many.value(np.zeros(60)) == pytest.approx(nj * math.log(10))


def test_multinomial_layout_column_major():
    # one sample x = e_1, class weights stored as columns of an m x C matrix
    loss = MultinomialLoss(np.array([[1.0, 0.0]]), np.array([0]), 3)
    u = np.zeros(6)
    u[2] = 5.0  # (row 0, column 1): class 1 weight on feature 0
    p = loss.probabilities(u)[0]
    assert p[1] > p[0] and p[1] > p[2]


def test_multinomial_label_errors():
    with pytest.raises(DataError):
        MultinomialLoss(np.ones((2, 2)), np.array([0, 3]), 3)
    with pytest.raises(DataError):
        MultinomialLoss(np.ones((2, 2)), np.array([-1, 0]), 3)


def test_multinomial_stable_for_large_scores():
    loss = MultinomialLoss(np.array([[1000.0, -1000.0]]), np.array([0]), 2)
    u = np.array([1.0, 0.0, 0.0, 1.0])
    v, g = loss.value_and_grad(u)
    assert np.isfinite(v) and np.all(np.isfinite(g))
    np.testing.assert_allclose(loss.probabilities(u).sum(axis=1), 1.0, atol=1e-12)


def test_multinomial_shift_invariance(rng):
    m, C = 4, 3
    loss = MultinomialLoss(rng.standard_normal((9, m)), rng.integers(0, C, 9), C)
    u = rng.standard_normal(m * C)
    shift = np.tile(rng.standard_normal(m), C)
    assert loss.value(u + shift) == pytest.approx(loss.value(u), rel=1e-10)


def test_multinomial_hvp_psd(rng):
    loss = MultinomialLoss(rng.standard_normal((15, 4)), rng.integers(0, 3, 15), 3)
    u = rng.standard_normal(12)
    for _ in range(20):
        x = rng.standard_normal(12)
        assert x @ loss.hess_vec(u, x) >= -1e-10


# --- smoothed svm ------------------------------------------------------------------


def test_svm_term_at_zero_margin():
    eps = 0.01
    # y u^T x = 1 gives z = 0
    loss = SmoothedSvmLoss(np.array([[1.0]]), np.array([1.0]), eps=eps)
    assert loss.value(np.array([1.0])) == pytest.approx(eps / 2)


def test_svm_at_origin(rng):
    eps = 1 / 5000
    loss = SmoothedSvmLoss(rng.standard_normal((3, 7)), rng.choice([-1.0, 1.0], 7))
    assert loss.eps == pytest.approx(eps)
    assert loss.value(np.zeros(3)) == pytest.approx(0.5 * (1 + math.sqrt(eps**2 + 1)))


@pytest.mark.parametrize("eps", [1e-2, 1e-4])
def test_svm_approaches_hinge(eps):
    z = np.linspace(-3, 3, 601)
    # one sample with x = 1, y = 1: z = 1 - u
    loss = SmoothedSvmLoss(np.array([[1.0]]), np.array([1.0]), eps=eps)
    terms = np.array([loss.value(np.array([1.0 - zi])) for zi in z])
    assert np.all(np.abs(terms - np.maximum(z, 0)) <= eps / 2 + 1e-15)
    assert np.all(terms >= 0)


def test_svm_label_error():
    with pytest.raises(DataError):
        SmoothedSvmLoss(np.ones((2, 2)), np.array([1.0, 0.0]))


# --- shared oracle properties ----------------------------------------------------


@pytest.mark.parametrize("idx", [0, 1, 2])
def test_oracle_invariants(rng, idx):
    loss = list(_losses(rng))[idx]
    for t in range(5):
        rep = check_oracle(loss, rng.standard_normal(loss.dim), trials=3, seed=t)
        assert rep.grad_error < 1e-4
        assert rep.hvp_symmetry < 1e-10
        assert rep.hvp_linearity < 1e-10
        assert rep.hvp_fd_error < 1e-4


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_losses_convex_along_segments(seed):
    rng = np.random.default_rng(seed)
    for loss in _losses(rng):
        a, b = rng.standard_normal(loss.dim), rng.standard_normal(loss.dim)
        assert loss.value(0.5 * (a + b)) <= 0.5 * (loss.value(a) + loss.value(b)) + 1e-10


# --- weighted prox ----------------------------------------------------------------


def test_soft_threshold():
    np.testing.assert_array_equal(soft_threshold(np.array([-3.0, -0.5, 0.0, 0.5, 3.0]), 1.0),
                                  [-2.0, 0.0, 0.0, 0.0, 2.0])


def test_prox_examples():
    u = np.array([1.5, -2.0])
    np.testing.assert_allclose(weighted_prox(ElasticNet(0, 0), [u], [np.ones(2)]), u)
    v = weighted_prox(ElasticNet(1.0, 1.0), [np.array([3.0])], [np.array([2.0])])
    assert v[0] == pytest.approx(5.0 / 3.0)
    v = weighted_prox(Tikhonov(1.0), [np.array([2.0])], [np.array([1.0])])
    assert v[0] == pytest.approx(1.0)
    # rho1 >= |m| annihilates
    v = weighted_prox(ElasticNet(4.0, 0.1), [np.array([1.0]), np.array([-0.5])],
                      [np.array([2.0]), np.array([1.0])])
    assert v[0] == 0.0


def test_prox_single_target_cross_check():
    x = golden_min(lambda v: abs(v) + 0.5 * v * v + (v - 3.0) ** 2, -10, 10)
    assert x == pytest.approx(5.0 / 3.0, abs=1e-6)
    x = bisect_root(prox_subgradient_1d("elasticnet", (1.0, 1.0), [3.0], [2.0]), -10, 10)
    assert x == pytest.approx(5.0 / 3.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["elasticnet", "tikhonov"]))
def test_prox_matches_numeric_minimizer(seed, kind):
    rng = np.random.default_rng(seed)
    N, n = rng.integers(1, 5), rng.integers(1, 9)
    ts = [rng.normal(0, 3, n) for _ in range(N)]
    ws = [rng.uniform(0.05, 5.0, n) for _ in range(N)]
    if kind == "elasticnet":
        params = (rng.uniform(0, 2), rng.uniform(0, 2))
        reg = ElasticNet(*params)
    else:
        params = (rng.uniform(0.01, 3),)
        reg = Tikhonov(*params)
    np.testing.assert_allclose(weighted_prox(reg, ts, ws), brute_prox(kind, params, ts, ws),
                               rtol=0, atol=1e-8)


def test_prox_rejects_nonpositive_weights():
    with pytest.raises(InvariantViolation):
        weighted_prox(Tikhonov(1.0), [np.ones(2)], [np.array([1.0, 0.0])])
    with pytest.raises(InvariantViolation):
        weighted_prox(ElasticNet(), [np.ones(2)], [np.array([1.0, -1.0])])


def test_prox_identity_weights_average():
    us = [np.array([1.0, 2.0]), np.array([3.0, 6.0])]
    v = weighted_prox(Tikhonov(1e-12), us, [np.ones(2)] * 2)
    np.testing.assert_allclose(v, [2.0, 4.0], rtol=1e-10)
