"""Consensus ADMM engine with diagonal weights.

One iteration, for ``j = 1..N``::

    u_j <- argmin_u f_j(u) + 1/2 ||v - u + W_j^{-1} lam_j||^2_{W_j}
    v   <- argmin_v g(v) + 1/2 sum_j ||v - u_j + W_j^{-1} lam_j||^2_{W_j}
    lam_j <- lam_j + W_j (v - u_j)

All u-updates finish before the v-update and the v-update finishes before
any dual update.  Worker computations may run on a thread pool; every
reduction over workers is done in worker order, so results are the same
with and without threads.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .inner import InnerInfo, conjugate_gradient, lbfgs
from .losses import weighted_prox
from .problem import ConsensusProblem, LossOracle, ProxRegularizer, SolverState
from .weights import (
    ACConfig,
    ACSnapshot,
    ACState,
    CSequence,
    RBConfig,
    RestrictionInterval,
    ac_update,
    affine_restrict,
    c_value,
    interval_update,
    rb_update,
    uq_diagonal,
    weight_ratio_ok,
)

log = logging.getLogger(__name__)

SCHEMES = ("cadmm", "rb", "ac", "auq")
TRACE_HEADER = ["k", "loss", "r_norm", "s_norm", "eps_primal", "eps_dual",
                "tnorm_step", "lemma41_ok", "wall_ms"]


class SolverAbort(RuntimeError):
    """Raised when an iteration fails; ``trace`` holds the records so far."""

    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = list(trace or [])


@dataclass
class SolverConfig:
    scheme: str = "auq"
    rank: int = 5
    interval: Tuple[float, float] = (0.1, 1.0)
    eps_abs: float = 1e-4
    eps_rel: float = 1e-5
    max_iter: int = 250
    rho0: float = 1.0
    seed: int = 0
    threads: int = 0
    inner_max_iter: int = 200
    inner_memory: int = 10
    inner_tol: Optional[float] = None
    weight_refresh_every: int = 1
    rb: RBConfig = field(default_factory=RBConfig)
    ac: ACConfig = field(default_factory=ACConfig)
    timing: bool = False

    def __post_init__(self):
        self.scheme = self.scheme.lower()
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}, expected one of {SCHEMES}")
        if not (self.eps_abs > 0 and self.eps_rel > 0):
            raise ValueError("stopping tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.weight_refresh_every < 1:
            raise ValueError("weight_refresh_every must be >= 1")
        if self.rho0 <= 0:
            raise ValueError("rho0 must be positive")
        a1, b1 = self.interval
        if not 0 < a1 <= b1:
            raise ValueError(f"interval must satisfy 0 < a1 <= b1, got {self.interval}")


@dataclass
class ResidualReport:
    r_norm: float
    s_norm: float
    eps_primal: float
    eps_dual: float

    @property
    def converged(self) -> bool:
        return self.r_norm <= self.eps_primal and self.s_norm <= self.eps_dual


@dataclass
class TraceRecord:
    k: int
    loss: float
    r_norm: float
    s_norm: float
    eps_primal: float
    eps_dual: float
    tnorm_step: float
    lemma41_ok: Optional[bool]
    wall_ms: float = 0.0

    def row(self) -> List[str]:
        ok = "" if self.lemma41_ok is None else str(int(self.lemma41_ok))
        vals = [self.loss, self.r_norm, self.s_norm, self.eps_primal, self.eps_dual,
                self.tnorm_step]
        return [str(self.k)] + [repr(float(x)) for x in vals] + [ok, repr(float(self.wall_ms))]


def trace_to_csv(trace: Sequence[TraceRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for rec in trace:
        w.writerow(rec.row())
    return buf.getvalue()


def write_trace(path, trace: Sequence[TraceRecord]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(trace_to_csv(trace))


# --- single-step operations --------------------------------------------------


def u_update(loss: LossOracle, v, lam, w, u0=None, tol: float = 1e-8,
             max_iter: int = 200, memory: int = 10) -> Tuple[np.ndarray, InnerInfo]:
    """Solve the local subproblem of one worker.

    Quadratic losses exposing ``normal_rhs`` are solved with conjugate
    gradients on ``(X^T X + W) u = X^T y + W v + lam``; other losses with
    L-BFGS.  Both stop once the subproblem gradient norm is at most ``tol``.
    """
    v = np.asarray(v, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    x0 = v.copy() if u0 is None else np.asarray(u0, dtype=np.float64)
    shift = w * v + lam
    if getattr(loss, "quadratic", False) and hasattr(loss, "normal_rhs"):
        rhs = loss.normal_rhs() + shift
        return conjugate_gradient(lambda x: loss.hess_vec(v, x) + w * x,
                                  rhs, x0=x0, tol=tol, max_iter=max_iter)

    def fun_grad(u):
        f, g = loss.value_and_grad(u)
        d = u - v
        return (f + 0.5 * float(d @ (w * d)) - float(lam @ u),
                g + w * d - lam)

    return lbfgs(fun_grad, x0, tol=tol, max_iter=max_iter, memory=memory)


def v_update(state: SolverState, reg: ProxRegularizer) -> np.ndarray:
    """Weighted prox of the targets ``u_j - lam_j / w_j``."""
    targets = [u - lam / w for u, lam, w in zip(state.u, state.lam, state.weights)]
    return weighted_prox(reg, targets, state.weights)


def lambda_update(lam, w, v, u) -> np.ndarray:
    return np.asarray(lam) + np.asarray(w) * (np.asarray(v) - np.asarray(u))


def residuals(state: SolverState, v_prev, eps_abs: float = 1e-4,
              eps_rel: float = 1e-5) -> ResidualReport:
    """Primal/dual residual norms and the matching stopping tolerances."""
    N = len(state.u)
    n = state.v.shape[0]
    r2 = sum(float(np.sum((u - state.v) ** 2)) for u in state.u)
    s2 = N * float(np.sum((state.v - np.asarray(v_prev)) ** 2))
    u2 = sum(float(u @ u) for u in state.u)
    l2 = sum(float(lam @ lam) for lam in state.lam)
    root_n = np.sqrt(n)
    eps_p = root_n * eps_abs + eps_rel * max(np.sqrt(u2), np.sqrt(s2))
    eps_d = root_n * eps_abs + eps_rel * np.sqrt(l2)
    return ResidualReport(np.sqrt(r2), np.sqrt(s2), float(eps_p), float(eps_d))


def tnorm_step(state_next: SolverState, state_prev: SolverState, weights=None) -> float:
    """Squared step length in the block-diagonal ``T`` seminorm.

    ``||dv||^2_{sum_j W_j} + sum_j ||dlam_j||^2_{W_j^{-1}}``; the u-block of
    ``T`` is zero.
    """
    weights = state_next.weights if weights is None else weights
    dv = state_next.v - state_prev.v
    wsum = np.zeros_like(dv)
    for w in weights:
        wsum += w
    total = float(dv @ (wsum * dv))
    for ln, lp, w in zip(state_next.lam, state_prev.lam, weights):
        dl = ln - lp
        total += float(dl @ (dl / w))
    return total


# --- the engine --------------------------------------------------------------


class ConsensusADMM:
    """Consensus ADMM with one of the four weighting schemes.

    After :meth:`solve`, ``trace`` holds one :class:`TraceRecord` per
    iteration, ``state`` the final iterates and ``converged`` whether the
    stopping rule fired.
    """

    def __init__(self, problem: ConsensusProblem, cfg: SolverConfig = None):
        self.problem = problem
        self.cfg = cfg or SolverConfig()
        N, n = problem.N, problem.n
        self.state = SolverState.initial(n, N, seed=self.cfg.seed)
        self.trace: List[TraceRecord] = []
        self.converged = False
        self.inner_failures = 0
        self.interval = RestrictionInterval.start(*self.cfg.interval)
        self.cseq = CSequence(*self.cfg.interval)
        self.rho = self.cfg.rho0 if self.cfg.scheme != "rb" else self.cfg.rb.rho0
        self.ac_state = ACState.start(N, self.cfg.rho0)
        self.uq_diags: Optional[List[np.ndarray]] = None
        self.first_weights: Optional[List[np.ndarray]] = None
        self._tol = np.sqrt(n) * self.cfg.eps_abs

    # weights for iteration k, given u^{k-1}
    def _weights(self, k: int, map_fn) -> List[np.ndarray]:
        cfg, N, n = self.cfg, self.problem.N, self.problem.n
        if cfg.scheme == "cadmm":
            return [np.full(n, cfg.rho0) for _ in range(N)]
        if cfg.scheme == "rb":
            return [np.full(n, self.rho) for _ in range(N)]
        if cfg.scheme == "ac":
            return [np.full(n, r) for r in self.ac_state.rho]
        if self.uq_diags is None or (k - 1) % cfg.weight_refresh_every == 0:
            losses, u = self.problem.losses, self.state.u
            self.uq_diags = list(map_fn(
                lambda j: uq_diagonal(losses[j], u[j], cfg.rank, [cfg.seed, j]), range(N)))
        ri = self.interval
        w = [affine_restrict(d, ri.a, ri.b) for d in self.uq_diags]
        self.interval = interval_update(ri, k)
        return w

    def _inner_tol(self) -> float:
        if self.cfg.inner_tol is not None:
            return self.cfg.inner_tol
        return max(1e-8, 1e-2 * self._tol)

    def solve(self) -> np.ndarray:
        cfg = self.cfg
        pool = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 0 else None
        map_fn = pool.map if pool is not None else map
        try:
            self._loop(map_fn)
        finally:
            if pool is not None:
                pool.shutdown()
        return self.state.v

    def _loop(self, map_fn):
        cfg, prob = self.cfg, self.problem
        losses, N = prob.losses, prob.N
        t0 = time.perf_counter()
        prev_w = None
        for k in range(1, cfg.max_iter + 1):
            old = self.state
            try:
                W = self._weights(k, map_fn)
            except Exception as exc:
                raise SolverAbort(f"weight computation failed at k={k}: {exc}", self.trace) from exc
            lemma_ok = None
            if cfg.scheme == "auq":
                if prev_w is None:
                    self.first_weights = [w.copy() for w in W]
                    prev_w = W
                c = c_value(self.cseq, k)
                lemma_ok = all(weight_ratio_ok(wn, wo, c) for wn, wo in zip(W, prev_w))
            prev_w = W

            tol = self._inner_tol()

            def local(j):
                return u_update(losses[j], old.v, old.lam[j], W[j], u0=old.u[j], tol=tol,
                                max_iter=cfg.inner_max_iter, memory=cfg.inner_memory)

            try:
                results = list(map_fn(local, range(N)))
            except Exception as exc:
                raise SolverAbort(f"u-update failed at k={k}: {exc}", self.trace) from exc
            u_new = [res[0] for res in results]
            for j, (_, info) in enumerate(results):
                if not info.converged:
                    self.inner_failures += 1
                    log.debug("k=%d worker %d inner solve: %s (|g|=%.3e)",
                              k, j, info.message, info.grad_norm)

            lam_hat = [lam + w * (old.v - u) for lam, w, u in zip(old.lam, W, u_new)]
            mid = SolverState(u=u_new, v=old.v, lam=old.lam, weights=W, k=k)
            v_new = v_update(mid, prob.regularizer)
            lam_new = [lambda_update(lam, w, v_new, u) for lam, w, u in zip(old.lam, W, u_new)]
            new = SolverState(u=u_new, v=v_new, lam=lam_new, weights=W, k=k)
            try:
                new.check()
            except ValueError as exc:
                raise SolverAbort(f"iterate check failed at k={k}: {exc}", self.trace) from exc

            rep = residuals(new, old.v, cfg.eps_abs, cfg.eps_rel)
            step = tnorm_step(new, old, W)
            loss = float(sum(map_fn(lambda f: f.value(v_new), losses))) \
                + prob.regularizer.value(v_new)
            wall = (time.perf_counter() - t0) * 1e3 if cfg.timing else 0.0
            self.trace.append(TraceRecord(k, loss, rep.r_norm, rep.s_norm, rep.eps_primal,
                                          rep.eps_dual, step, lemma_ok, wall))
            self.state = new
            self._tol = min(rep.eps_primal, rep.eps_dual)
            if rep.converged:
                self.converged = True
                break
            if cfg.scheme == "rb":
                self.rho = rb_update(self.rho, rep.r_norm, rep.s_norm, cfg.rb)
            elif cfg.scheme == "ac":
                ac_update(self.ac_state, cfg.ac, k,
                          ACSnapshot(u=u_new, v=v_new, lam=lam_new, lam_hat=lam_hat))


def run(problem: ConsensusProblem, cfg: SolverConfig = None):
    """Solve ``problem``; returns ``(v_final, trace)``."""
    solver = ConsensusADMM(problem, cfg)
    v = solver.solve()
    return v, solver.trace
