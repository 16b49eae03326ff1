"""Loss oracles for the benchmark problems and the weighted v-update prox.

All three losses are matrix-free: Hessian actions are computed from the
data matrices on the fly.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .problem import (
    ElasticNet,
    InvariantViolation,
    LossOracle,
    ProxRegularizer,
    Tikhonov,
)

__all__ = [
    "DataError",
    "ElasticNetLoss",
    "MultinomialLoss",
    "SmoothedSvmLoss",
    "soft_threshold",
    "weighted_prox",
]


class DataError(ValueError):
    """Labels or features inconsistent with the loss definition."""


def _as_matrix(X):
    if sp.issparse(X):
        return sp.csr_matrix(X, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"data matrix must be 2-D, got shape {X.shape}")
    return X


class ElasticNetLoss(LossOracle):
    """Least-squares data term ``1/2 ||X u - y||^2``.

    ``X`` may be a dense array or a scipy sparse matrix (the denoising demo
    uses a sparse row-selection matrix).  The Hessian ``X^T X`` does not
    depend on ``u``.
    """

    quadratic = True

    def __init__(self, X, y):
        self.X = _as_matrix(X)
        self.y = np.asarray(y, dtype=np.float64).ravel()
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError(
                f"X has {self.X.shape[0]} rows but y has {self.y.shape[0]} entries"
            )
        self.dim = self.X.shape[1]
        self._Xty = self.X.T @ self.y

    def value(self, u):
        r = self.X @ self._check_dim(u) - self.y
        return 0.5 * float(r @ r)

    def gradient(self, u):
        r = self.X @ self._check_dim(u) - self.y
        return self.X.T @ r

    def value_and_grad(self, u):
        r = self.X @ self._check_dim(u) - self.y
        return 0.5 * float(r @ r), self.X.T @ r

    def hess_vec(self, u, x):
        x = self._check_dim(x, "x")
        return self.X.T @ (self.X @ x)

    def normal_rhs(self):
        """``X^T y``, the constant part of the normal equations."""
        return self._Xty


class MultinomialLoss(LossOracle):
    """Negative log-likelihood of softmax regression.

    Samples are the rows of ``X`` (``n_j x m``).  The parameter ``u`` has
    length ``m * C`` and is the column-major flattening of an ``m x C``
    matrix, so ``u[c*m:(c+1)*m]`` is the weight vector of class ``c``.
    """

    quadratic = False

    def __init__(self, X, y, C: int):
        self.X = np.asarray(X, dtype=np.float64)
        if self.X.ndim != 2:
            raise ValueError(f"X must be 2-D, got shape {self.X.shape}")
        y = np.asarray(y)
        if y.shape != (self.X.shape[0],):
            raise ValueError(f"y has shape {y.shape}, expected ({self.X.shape[0]},)")
        if C < 1:
            raise DataError(f"class count must be positive, got {C}")
        if y.size and (y.min() < 0 or y.max() >= C or not np.all(y == np.round(y))):
            raise DataError(f"labels must be integers in [0, {C}), got range "
                            f"[{y.min()}, {y.max()}]")
        self.y = y.astype(np.int64)
        self.C = int(C)
        self.m = self.X.shape[1]
        self.dim = self.m * self.C
        self._onehot = np.zeros((self.X.shape[0], self.C))
        self._onehot[np.arange(self.y.size), self.y] = 1.0

    def _unflatten(self, u):
        return self._check_dim(u).reshape((self.m, self.C), order="F")

    def _scores(self, u):
        Z = self.X @ self._unflatten(u)
        zmax = Z.max(axis=1, keepdims=True) if Z.size else Z[:, :1]
        E = np.exp(Z - zmax)
        S = E.sum(axis=1, keepdims=True)
        lse = np.log(S) + zmax
        return Z, lse, E / S

    def probabilities(self, u):
        return self._scores(u)[2]

    def value(self, u):
        Z, lse, _ = self._scores(u)
        return float(np.sum(lse[:, 0] - Z[np.arange(self.y.size), self.y]))

    def gradient(self, u):
        return self.value_and_grad(u)[1]

    def value_and_grad(self, u):
        Z, lse, P = self._scores(u)
        val = float(np.sum(lse[:, 0] - Z[np.arange(self.y.size), self.y]))
        G = self.X.T @ (P - self._onehot)
        return val, G.ravel(order="F")

    def hess_vec(self, u, x):
        _, _, P = self._scores(u)
        Dx = self.X @ self._check_dim(x, "x").reshape((self.m, self.C), order="F")
        PD = P * Dx
        R = PD - P * PD.sum(axis=1, keepdims=True)
        return (self.X.T @ R).ravel(order="F")


class SmoothedSvmLoss(LossOracle):
    r"""Smoothed hinge loss averaged over samples.

    Each sample contributes ``(z + sqrt(eps^2 + z^2)) / 2`` with
    ``z = 1 - y_i u^T x_i``.  ``X`` is ``m x n_j``: samples are columns.
    """

    quadratic = False

    def __init__(self, X, y, eps: float = 1.0 / 5000):
        self.X = np.asarray(X, dtype=np.float64)
        if self.X.ndim != 2:
            raise ValueError(f"X must be 2-D, got shape {self.X.shape}")
        self.y = np.asarray(y, dtype=np.float64).ravel()
        if self.y.shape[0] != self.X.shape[1]:
            raise ValueError(
                f"X has {self.X.shape[1]} sample columns but y has {self.y.shape[0]} labels"
            )
        if not np.all(np.abs(self.y) == 1):
            raise DataError("SVM labels must be -1 or +1")
        if not eps > 0:
            raise ValueError(f"smoothing eps must be positive, got {eps}")
        self.eps = float(eps)
        self.dim = self.X.shape[0]
        self._n = max(self.X.shape[1], 1)

    def _margins(self, u):
        return 1.0 - self.y * (self._check_dim(u) @ self.X)

    def value(self, u):
        z = self._margins(u)
        return float(np.sum(0.5 * (z + np.sqrt(self.eps**2 + z * z))) / self._n)

    def gradient(self, u):
        return self.value_and_grad(u)[1]

    def value_and_grad(self, u):
        z = self._margins(u)
        s = np.sqrt(self.eps**2 + z * z)
        val = float(np.sum(0.5 * (z + s)) / self._n)
        dz = 0.5 * (1.0 + z / s)
        return val, self.X @ (-self.y * dz) / self._n

    def hess_vec(self, u, x):
        z = self._margins(u)
        s2 = self.eps**2 + z * z
        curv = 0.5 * self.eps**2 / (s2 * np.sqrt(s2))
        return self.X @ (curv * (self._check_dim(x, "x") @ self.X)) / self._n


def soft_threshold(x, t):
    """Elementwise ``sign(x) * max(|x| - t, 0)``."""
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def weighted_prox(reg: ProxRegularizer, targets: Sequence[np.ndarray],
                  weights: Sequence[np.ndarray]) -> np.ndarray:
    """Exact minimizer of ``g(v) + 1/2 sum_j ||v - t_j||^2_{W_j}``.

    With diagonal weights the problem separates by coordinate.  Sums over
    workers run in list order so the result does not depend on how the
    targets were produced.

    Parameters
    ----------
    reg : ProxRegularizer
        :class:`ElasticNet` or :class:`Tikhonov`.
    targets : sequence of ndarray
        ``t_j = u_j - lam_j / w_j``.
    weights : sequence of ndarray
        Diagonals of the ``W_j``; every entry must be strictly positive.

    Returns
    -------
    ndarray
        The minimizer ``v``.
    """
    if len(targets) != len(weights) or not targets:
        raise ValueError("targets and weights must be non-empty and of equal length")
    s = np.zeros_like(np.asarray(weights[0], dtype=np.float64))
    m = np.zeros_like(s)
    for j, (t, w) in enumerate(zip(targets, weights)):
        w = np.asarray(w, dtype=np.float64)
        if w.shape != s.shape or np.shape(t) != s.shape:
            raise ValueError(f"worker {j}: shape mismatch")
        if not np.all(w > 0):
            raise InvariantViolation(f"worker {j}: weights must be strictly positive")
        s += w
        m += w * t
    if isinstance(reg, ElasticNet):
        return soft_threshold(m, reg.rho1) / (reg.rho2 + s)
    if isinstance(reg, Tikhonov):
        return m / (reg.scale + s)
    raise TypeError(f"no closed-form prox for {type(reg).__name__}")
