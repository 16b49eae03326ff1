"""Matrix-free Lanczos for the leading eigenpairs of a local Hessian."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class LowRankEig:
    """Leading eigenpairs ``H ~ V diag(D) V^T``.

    ``V`` has orthonormal columns and ``D`` is nonincreasing.  When the
    Krylov space closes early (an invariant subspace was found) fewer than
    ``rank`` pairs exist; the missing ``rank - V.shape[1]`` eigenvalues are
    taken equal to ``pad_value`` and spread isotropically over the orthogonal
    complement of ``V`` when forming the diagonal.
    """

    V: np.ndarray
    D: np.ndarray
    rank: int
    pad_value: float = 0.0

    @property
    def found(self) -> int:
        return self.D.shape[0]


def krylov_budget(n: int, r: int) -> int:
    return min(n, max(2 * r, r + 10))


def start_vector(n: int, seed: int) -> np.ndarray:
    """Seeded Rademacher vector of unit length."""
    rng = np.random.default_rng(seed)
    return rng.choice(np.array([-1.0, 1.0]), size=n) / np.sqrt(n)


def lanczos_topr(hvp: Callable[[np.ndarray], np.ndarray], n: int, r: int,
                 seed: int = 0, krylov_dim: int | None = None) -> LowRankEig:
    """Approximate the ``r`` largest eigenpairs of a symmetric operator.

    Runs ``krylov_dim`` (default ``min(n, max(2r, r+10))``) Lanczos steps with
    full reorthogonalization and returns the leading Ritz pairs.  Each step
    costs one call to ``hvp``.

    Parameters
    ----------
    hvp : callable
        ``x -> H x`` for a symmetric ``n x n`` operator ``H``.
    n : int
        Operator dimension.
    r : int
        Number of eigenpairs wanted, ``1 <= r <= n``.
    seed : int
        Seed of the Rademacher start vector.
    krylov_dim : int, optional
        Override the number of Lanczos steps (clipped to ``[r, n]``).

    Returns
    -------
    LowRankEig
    """
    if not 1 <= r <= n:
        raise ValueError(f"rank must satisfy 1 <= r <= n, got r={r}, n={n}")
    L = krylov_budget(n, r) if krylov_dim is None else min(n, max(r, int(krylov_dim)))

    Q = np.zeros((n, L))
    alpha = np.zeros(L)
    beta = np.zeros(L)
    q = start_vector(n, seed)
    k = 0
    scale = 0.0
    for i in range(L):
        Q[:, i] = q
        w = np.asarray(hvp(q), dtype=np.float64)
        alpha[i] = q @ w
        # two passes of classical Gram-Schmidt against the whole basis
        for _ in range(2):
            w -= Q[:, : i + 1] @ (Q[:, : i + 1].T @ w)
        k = i + 1
        b = np.linalg.norm(w)
        scale = max(scale, abs(alpha[i]), b)
        beta[i] = b
        if i + 1 < L:
            if b <= 1e-10 * max(scale, 1.0):
                break
            q = w / b

    T = np.diag(alpha[:k])
    if k > 1:
        off = beta[: k - 1]
        T += np.diag(off, 1) + np.diag(off, -1)
    theta, S = np.linalg.eigh(T)
    order = np.argsort(theta)[::-1]
    theta = theta[order]
    S = S[:, order]

    r_eff = min(r, k)
    V = Q[:, :k] @ S[:, :r_eff]
    pad = float(theta[-1]) if r_eff < r else 0.0
    return LowRankEig(V=V, D=theta[:r_eff].copy(), rank=r, pad_value=pad)


def lowrank_diag(e: LowRankEig) -> np.ndarray:
    """Diagonal of ``V diag(D) V^T`` without forming the ``n x n`` product."""
    sq = e.V * e.V
    d = sq @ e.D
    missing = e.rank - e.found
    n = e.V.shape[0]
    if missing > 0 and e.pad_value != 0.0 and n > e.found:
        leftover = np.clip(1.0 - sq.sum(axis=1), 0.0, None)
        d = d + e.pad_value * missing / (n - e.found) * leftover
    return d
