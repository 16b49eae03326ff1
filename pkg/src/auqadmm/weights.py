"""Penalty weighting schemes for consensus ADMM.

Four schemes share one representation, a positive diagonal per worker:

* ``cadmm`` -- constant ``rho0 * I``;
* ``rb``    -- residual balancing, one shared ``rho * I``;
* ``ac``    -- spectral per-worker ``rho_j * I`` with a safeguard;
* ``auq``   -- uncertainty weights from a low-rank Hessian diagonal,
  affinely restricted into a shrinking interval ``[a, b]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from .lanczos import lanczos_topr, lowrank_diag
from .problem import LossOracle


# --- restriction interval and the c-sequence ---------------------------------


@dataclass(frozen=True)
class RestrictionInterval:
    """Current bracket ``[a, b]`` (index ``k``) and the initial ``[a1, b1]``."""

    a1: float
    b1: float
    a: float
    b: float
    k: int = 1

    @classmethod
    def start(cls, a1: float, b1: float) -> "RestrictionInterval":
        if not 0 < a1 <= b1:
            raise ValueError(f"need 0 < a1 <= b1, got [{a1}, {b1}]")
        return cls(a1, b1, a1, b1, 1)


def shrink_ratio(a1: float, b1: float, i: int) -> float:
    """``b_i / a_i = (b1/a1)/i^2 + 1 - 1/i^2`` of the ``i``-th interval.

    Evaluated as ``1 + (b1/a1 - 1)/i^2`` so that it is never below 1 and is
    exactly 1 for a degenerate interval.
    """
    return 1.0 + (b1 / a1 - 1.0) / (i * i)


def interval_update(ri: RestrictionInterval, k: int) -> RestrictionInterval:
    """Shrink the interval after iteration ``k`` (returns interval ``k + 1``)."""
    if k < 1:
        raise ValueError(f"iteration index must be >= 1, got {k}")
    gamma = shrink_ratio(ri.a1, ri.b1, k + 1)
    return replace(ri, a=ri.a1, b=gamma * ri.a1, k=k + 1)


@dataclass(frozen=True)
class CSequence:
    a1: float
    b1: float

    def __call__(self, k: int) -> float:
        return c_value(self, k)

    def partial_sum(self, K: int) -> float:
        return float(sum(c_value(self, k) for k in range(1, K + 1)))

    def bound(self) -> float:
        """Limit of the partial sums, ``(b1/a1 - 1)(1 + pi^2/6)``."""
        return (self.b1 / self.a1 - 1.0) * (1.0 + np.pi**2 / 6.0)


def c_value(cs: CSequence, k: int) -> float:
    """Admissible ratio slack between weights of iterations ``k-1`` and ``k``."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k == 1:
        return cs.b1 / cs.a1 - 1.0
    return shrink_ratio(cs.a1, cs.b1, k - 1) - 1.0


def weight_ratio_ok(w_new: np.ndarray, w_old: np.ndarray, c: float, tol: float = 1e-12) -> bool:
    """Elementwise ``w_new / w_old`` within ``[1/(1+c), 1+c]`` up to ``tol``."""
    ratio = np.asarray(w_new) / np.asarray(w_old)
    return bool(np.all(ratio <= 1.0 + c + tol) and np.all(ratio >= 1.0 / (1.0 + c) - tol))


# --- uncertainty weights ---------------------------------------------------


def affine_restrict(x, a: float, b: float) -> np.ndarray:
    """Map ``x`` affinely so that ``min(x) -> a`` and ``max(x) -> b``.

    A constant ``x`` maps to the midpoint ``(a + b) / 2``.
    """
    if a > b:
        raise ValueError(f"empty interval [{a}, {b}]")
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.full_like(x, 0.5 * (a + b))
    p = (b - a) / (hi - lo)
    q = a - p * lo
    return np.clip(p * x + q, a, b)


def uq_diagonal(loss: LossOracle, u: np.ndarray, r: int, seed) -> np.ndarray:
    """Diagonal of the rank-``r`` Lanczos approximation of the Hessian at ``u``."""
    eig = lanczos_topr(lambda x: loss.hess_vec(u, x), loss.dim, r, seed=seed)
    return lowrank_diag(eig)


def auq_weights(losses: Sequence[LossOracle], u: Sequence[np.ndarray],
                ri: RestrictionInterval, r: int, seed: int = 0,
                map_fn: Callable = map) -> List[np.ndarray]:
    """Uncertainty weights of every worker restricted into ``[ri.a, ri.b]``.

    ``map_fn`` lets a thread pool evaluate the workers concurrently; results
    are consumed in worker order.
    """
    diags = list(map_fn(lambda j: uq_diagonal(losses[j], u[j], r, [seed, j]),
                        range(len(losses))))
    return [affine_restrict(d, ri.a, ri.b) for d in diags]


# --- residual balancing ------------------------------------------------------


@dataclass(frozen=True)
class RBConfig:
    mu: float = 10.0
    tau: float = 2.0
    rho0: float = 1.0

    def __post_init__(self):
        if not (self.mu > 1 and self.tau > 1 and self.rho0 > 0):
            raise ValueError(f"invalid residual balancing config {self}")


def rb_update(rho: float, r_norm: float, s_norm: float, cfg: RBConfig = RBConfig()) -> float:
    if r_norm > cfg.mu * s_norm:
        return rho * cfg.tau
    if s_norm > cfg.mu * r_norm:
        return rho / cfg.tau
    return rho


# --- spectral (adaptive consensus) penalties ---------------------------------


@dataclass(frozen=True)
class ACConfig:
    eps_cor: float = 0.2
    Cg: float = 1e10
    k0_lag: int = 2


@dataclass
class ACSnapshot:
    u: List[np.ndarray]
    v: np.ndarray
    lam: List[np.ndarray]
    lam_hat: List[np.ndarray]


@dataclass
class ACState:
    rho: np.ndarray
    history: dict = field(default_factory=dict)
    gamma: Optional[np.ndarray] = None
    sigma: Optional[np.ndarray] = None
    gamma_cor: Optional[np.ndarray] = None
    sigma_cor: Optional[np.ndarray] = None

    @classmethod
    def start(cls, N: int, rho0: float = 1.0) -> "ACState":
        return cls(rho=np.full(N, float(rho0)))


def spectral_curvature(dx: np.ndarray, dy: np.ndarray):
    """Curvature estimate from the change ``dx`` of a primal quantity and the
    matching change ``dy`` of its (sub)gradient.

    Returns ``(curvature, correlation)``.  The curvature is the inverse of the
    hybrid steepest-descent / minimum-gradient step, and is only meaningful
    when the correlation is positive.
    """
    xy = float(dx @ dy)
    xx = float(dx @ dx)
    yy = float(dy @ dy)
    if xx == 0.0 or yy == 0.0 or xy <= 0.0:
        return 0.0, 0.0
    cor = xy / np.sqrt(xx * yy)
    step_sd = xx / xy
    step_mg = xy / yy
    step = step_mg if 2.0 * step_mg > step_sd else step_sd - 0.5 * step_mg
    return 1.0 / step, cor


def ac_safeguard(rho_hat: float, rho: float, k: int, Cg: float) -> float:
    bound = 1.0 + Cg / (k * k)
    return max(min(rho_hat, bound * rho), rho / bound)


def ac_update(state: ACState, cfg: ACConfig, k: int, current: ACSnapshot) -> np.ndarray:
    """Spectral penalty update after iteration ``k``.

    Stores ``current`` as the snapshot of iteration ``k`` and, once the
    snapshot of ``k0 = k - k0_lag`` is available, replaces each ``rho_j`` by
    the safeguarded spectral estimate.  Returns the penalties for iteration
    ``k + 1``.
    """
    state.history[k] = current
    k0 = k - cfg.k0_lag
    for old in [i for i in state.history if i < k0]:
        del state.history[old]
    if k0 not in state.history:
        return state.rho
    prev = state.history[k0]
    N = len(state.rho)
    gamma = np.zeros(N)
    sigma = np.zeros(N)
    gcor = np.zeros(N)
    scor = np.zeros(N)
    dv = current.v - prev.v
    for j in range(N):
        gamma[j], gcor[j] = spectral_curvature(current.u[j] - prev.u[j],
                                               current.lam_hat[j] - prev.lam_hat[j])
        # g's subgradient share for worker j is -lam_j
        sigma[j], scor[j] = spectral_curvature(dv, -(current.lam[j] - prev.lam[j]))
    new = state.rho.copy()
    for j in range(N):
        g_ok = gcor[j] > cfg.eps_cor
        s_ok = scor[j] > cfg.eps_cor
        if g_ok and s_ok:
            rho_hat = np.sqrt(gamma[j] * sigma[j])
        elif g_ok:
            rho_hat = gamma[j]
        elif s_ok:
            rho_hat = sigma[j]
        else:
            rho_hat = state.rho[j]
        new[j] = ac_safeguard(rho_hat, state.rho[j], k, cfg.Cg)
    state.rho = new
    state.gamma, state.sigma, state.gamma_cor, state.sigma_cor = gamma, sigma, gcor, scor
    return state.rho
