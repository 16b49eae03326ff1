import numpy as np
import pytest

from auqadmm.data import make_problem, partition_by_class, synth_blobs
from auqadmm.losses import ElasticNetLoss, MultinomialLoss
from auqadmm.problem import ConsensusProblem, ElasticNet, LossOracle, SolverState, Tikhonov
from auqadmm.solver import (
    TRACE_HEADER,
    ConsensusADMM,
    ResidualReport,
    SolverAbort,
    SolverConfig,
    TraceRecord,
    lambda_update,
    residuals,
    run,
    tnorm_step,
    trace_to_csv,
    u_update,
    v_update,
)


def _state(u, v, lam, w):
    return SolverState(u=[np.asarray(x, float) for x in u], v=np.asarray(v, float),
                       lam=[np.asarray(x, float) for x in lam],
                       weights=[np.asarray(x, float) for x in w])


def small_problem(kind="multinomial", N=4, seed=0, m=8, C=4, per=20):
    d = synth_blobs(m, C, per, 0.1, seed=seed)
    return make_problem(kind, partition_by_class(d, N, per * C // N))


# --- single steps -----------------------------------------------------------------


def test_u_update_trivial():
    loss = ElasticNetLoss(np.eye(3), np.zeros(3))
    u, info = u_update(loss, np.zeros(3), np.zeros(3), np.ones(3))
    np.testing.assert_allclose(u, 0.0)
    assert info.converged


def test_u_update_zero_data_is_pure_proximity(rng):
    loss = ElasticNetLoss(np.zeros((2, 4)), np.zeros(2))
    v, lam, w = rng.standard_normal(4), rng.standard_normal(4), rng.uniform(0.5, 2, 4)
    u, _ = u_update(loss, v, lam, w, tol=1e-12)
    np.testing.assert_allclose(u, v + lam / w, atol=1e-10)


def test_u_update_cg_matches_direct_solve(rng):
    X = rng.standard_normal((12, 6))
    y = rng.standard_normal(12)
    v, lam, w = rng.standard_normal(6), rng.standard_normal(6), rng.uniform(0.1, 1, 6)
    u, _ = u_update(ElasticNetLoss(X, y), v, lam, w, tol=1e-12)
    ref = np.linalg.solve(X.T @ X + np.diag(w), X.T @ y + w * v + lam)
    np.testing.assert_allclose(u, ref, atol=1e-8)


def test_u_update_lbfgs_stationarity(rng):
    loss = MultinomialLoss(rng.standard_normal((15, 4)), rng.integers(0, 3, 15), 3)
    v, lam, w = rng.standard_normal(12), rng.standard_normal(12), rng.uniform(0.1, 1, 12)
    u, info = u_update(loss, v, lam, w, tol=1e-8)
    assert info.converged
    grad = loss.gradient(u) - w * (v - u + lam / w)
    assert np.linalg.norm(grad) <= 1e-8


def test_v_update_examples():
    s = _state([[1.0, 2.0], [3.0, 6.0]], [0, 0], [[0, 0], [0, 0]], [[1, 1], [1, 1]])
    np.testing.assert_allclose(v_update(s, Tikhonov(1e-12)), [2.0, 4.0], rtol=1e-10)
    s = _state([[2.0]], [0.0], [[0.0]], [[1.0]])
    np.testing.assert_allclose(v_update(s, Tikhonov(1.0)), [1.0])


def test_v_update_uses_dual_shift():
    # t = u - lam / w = 3 - 2/2 = 2, Tikhonov(1): v = w t / (1 + w) = 4/3
    s = _state([[3.0]], [0.0], [[2.0]], [[2.0]])
    np.testing.assert_allclose(v_update(s, Tikhonov(1.0)), [4.0 / 3.0])


def test_lambda_update_examples():
    np.testing.assert_array_equal(lambda_update([1.0, 2.0], [3.0, 3.0], [5.0, 5.0], [5.0, 5.0]),
                                  [1.0, 2.0])
    np.testing.assert_array_equal(lambda_update([0, 0], [1, 1], [1, 0], [0, 0]), [1, 0])
    np.testing.assert_array_equal(lambda_update([0, 0], [2, 2], [1, 1], [0, 0]), [2, 2])


def test_residual_examples():
    s = _state([[1.0, 1.0]] * 2, [1.0, 1.0], [[0, 0]] * 2, [[1, 1]] * 2)
    rep = residuals(s, [1.0, 1.0])
    assert rep.r_norm == 0 and rep.s_norm == 0 and rep.converged
    s = _state([[1.0, 0.0]], [0.0, 0.0], [[0, 0]], [[1, 1]])
    assert residuals(s, [0.0, 0.0]).r_norm == pytest.approx(1.0)
    z = _state([np.zeros(4)] * 3, np.zeros(4), [np.zeros(4)] * 3, [np.ones(4)] * 3)
    rep = residuals(z, np.zeros(4), eps_abs=1e-4)
    assert rep.eps_primal == pytest.approx(2e-4) and rep.eps_dual == pytest.approx(2e-4)


def test_residual_dual_counts_every_worker():
    s = _state([[0.0]] * 3, [1.0], [[0.0]] * 3, [[1.0]] * 3)
    assert residuals(s, [0.0]).s_norm == pytest.approx(np.sqrt(3.0))


def test_residual_report_converged_flag():
    assert ResidualReport(1.0, 1.0, 1.0, 1.0).converged
    assert not ResidualReport(1.1, 0.0, 1.0, 1.0).converged


def test_tnorm_examples():
    a = _state([[0.0, 0.0]], [0.0, 0.0], [[0.0, 0.0]], [[2.0, 2.0]])
    assert tnorm_step(a, a) == 0.0
    b = _state([[0.0, 0.0]], [1.0, 0.0], [[0.0, 0.0]], [[2.0, 2.0]])
    assert tnorm_step(b, a) == pytest.approx(2.0)
    c = _state([[0.0, 0.0]], [0.0, 0.0], [[1.0, 0.0]], [[2.0, 2.0]])
    assert tnorm_step(c, a) == pytest.approx(0.5)


# --- trace format --------------------------------------------------------------------


def test_trace_csv_format():
    recs = [TraceRecord(1, 1.5, 0.1, 0.2, 1e-4, 2e-4, 3.0, True),
            TraceRecord(2, 1.25, 0.05, 0.1, 1e-4, 2e-4, 1.0, None)]
    text = trace_to_csv(recs)
    lines = text.split("\n")
    assert lines[0] == ",".join(TRACE_HEADER)
    assert lines[1] == "1,1.5,0.1,0.2,0.0001,0.0002,3.0,1,0.0"
    assert lines[2].endswith(",,0.0")
    assert "\r" not in text and text.endswith("\n")


# --- engine ---------------------------------------------------------------------------


def test_config_validation():
    for bad in (dict(scheme="xyz"), dict(eps_abs=0), dict(max_iter=0), dict(rank=0),
                dict(interval=(1.0, 0.5)), dict(rho0=-1), dict(weight_refresh_every=0)):
        with pytest.raises(ValueError):
            SolverConfig(**bad)


def test_single_worker_ridge_fixed_point():
    b = np.array([1.0, -2.0, 0.5, 3.0])
    alpha = 0.3
    prob = ConsensusProblem([ElasticNetLoss(np.eye(4), b)], ElasticNet(0.0, alpha))
    v, trace = run(prob, SolverConfig(scheme="cadmm", eps_abs=1e-9, eps_rel=1e-9, max_iter=500))
    np.testing.assert_allclose(v, b / (1 + alpha), atol=1e-6)
    assert len(trace) < 500


@pytest.mark.parametrize("scheme", ["cadmm", "rb", "ac", "auq"])
def test_schemes_reach_reference(scheme):
    prob = small_problem("multinomial", N=4)
    ref = ConsensusADMM(prob, SolverConfig(scheme="cadmm", eps_abs=1e-10, eps_rel=1e-10,
                                           max_iter=3000))
    ref.solve()
    target = prob.objective(ref.state.v)
    s = ConsensusADMM(prob, SolverConfig(scheme=scheme, eps_abs=1e-7, eps_rel=1e-7,
                                         max_iter=2000))
    s.solve()
    assert abs(s.trace[-1].loss - target) <= 1e-3 * abs(target)


def test_auq_lemma_audit_every_iteration():
    prob = small_problem("elasticnet", N=4)
    s = ConsensusADMM(prob, SolverConfig(scheme="auq", max_iter=40))
    s.solve()
    assert all(r.lemma41_ok is True for r in s.trace)
    assert s.first_weights is not None


def test_auq_weight_amortization_keeps_audit():
    prob = small_problem("svm", N=4)
    s = ConsensusADMM(prob, SolverConfig(scheme="auq", max_iter=25, weight_refresh_every=5))
    s.solve()
    assert all(r.lemma41_ok for r in s.trace)


def test_non_auq_audit_column_empty():
    prob = small_problem("elasticnet", N=2)
    _, trace = run(prob, SolverConfig(scheme="cadmm", max_iter=3))
    assert all(r.lemma41_ok is None for r in trace)


def test_stopping_rule_sound():
    prob = small_problem("elasticnet", N=2)
    s = ConsensusADMM(prob, SolverConfig(scheme="cadmm", max_iter=500))
    s.solve()
    assert s.converged
    last = s.trace[-1]
    assert last.r_norm <= last.eps_primal and last.s_norm <= last.eps_dual
    assert all(not (r.r_norm <= r.eps_primal and r.s_norm <= r.eps_dual) for r in s.trace[:-1])


@pytest.mark.parametrize("scheme", ["rb", "auq"])
def test_threads_do_not_change_results(scheme):
    prob = small_problem("multinomial", N=4)
    a = run(prob, SolverConfig(scheme=scheme, max_iter=8, threads=0))[1]
    b = run(prob, SolverConfig(scheme=scheme, max_iter=8, threads=3))[1]
    assert trace_to_csv(a) == trace_to_csv(b)


class _Exploding(LossOracle):
    def __init__(self, center, when):
        self.c = np.asarray(center, dtype=float)
        self.dim = self.c.size
        self.calls = 0
        self.when = when

    def value(self, u):
        return 0.5 * float((u - self.c) @ (u - self.c))

    def gradient(self, u):
        self.calls += 1
        if self.calls > self.when:
            raise FloatingPointError("oracle blew up")
        return u - self.c

    def hess_vec(self, u, x):
        return x


def test_oracle_failure_aborts_with_trace():
    prob = ConsensusProblem([_Exploding([1.0, 2.0, 3.0], 40), _Exploding([-2.0, 0.0, 1.0], 10**9)],
                            Tikhonov(1.0))
    s = ConsensusADMM(prob, SolverConfig(scheme="cadmm", max_iter=100, eps_abs=1e-12,
                                         eps_rel=1e-12))
    with pytest.raises(SolverAbort) as exc:
        s.solve()
    assert len(exc.value.trace) >= 1
    assert "u-update" in str(exc.value)


def test_timing_flag_controls_wall_column():
    prob = small_problem("elasticnet", N=2)
    off = run(prob, SolverConfig(scheme="cadmm", max_iter=3))[1]
    on = run(prob, SolverConfig(scheme="cadmm", max_iter=3, timing=True))[1]
    assert all(r.wall_ms == 0.0 for r in off)
    assert all(r.wall_ms > 0.0 for r in on)
