"""Core abstractions for the global-variable consensus problem.

A consensus problem couples ``N`` smooth convex losses ``f_j`` with a single
proximable regularizer ``g``::

    minimize  sum_j f_j(u_j) + g(v)   subject to  u_j = v,  j = 1..N.

Losses are exposed matrix-free: value, gradient and Hessian-vector product.
Dense Hessians are never formed by the library.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np


class OracleDefectError(RuntimeError):
    """A loss oracle returned a non-finite value or gradient."""


class InvariantViolation(ValueError):
    """An argument broke a documented invariant (e.g. a non-positive weight)."""


class LossOracle:
    """Base class for smooth convex losses ``f_j: R^n -> R``.

    Subclasses implement :meth:`value`, :meth:`gradient` and :meth:`hess_vec`
    and may override :meth:`value_and_grad` when the two share work.
    Implementations must not mutate internal state during a solve so that
    several workers can evaluate them concurrently.
    """

    dim: int

    def value(self, u: np.ndarray) -> float:
        raise NotImplementedError

    def gradient(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hess_vec(self, u: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Action of the Hessian at ``u`` on the direction ``x``."""
        raise NotImplementedError

    def value_and_grad(self, u: np.ndarray):
        return self.value(u), self.gradient(u)

    def _check_dim(self, x: np.ndarray, name: str = "u") -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ValueError(
                f"{name} has shape {x.shape}, expected ({self.dim},)"
            )
        return x


class ProxRegularizer:
    """Regularizer ``g`` with a closed-form weighted proximal map."""

    def value(self, v: np.ndarray) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class ElasticNet(ProxRegularizer):
    r"""``g(v) = rho1 * ||v||_1 + rho2 / 2 * ||v||_2^2``."""

    rho1: float = 1e-2
    rho2: float = 1e-2

    def __post_init__(self):
        if self.rho1 < 0 or self.rho2 < 0:
            raise InvariantViolation(
                f"elastic net coefficients must be nonnegative, got "
                f"rho1={self.rho1}, rho2={self.rho2}"
            )

    def value(self, v):
        v = np.asarray(v, dtype=np.float64)
        return float(self.rho1 * np.abs(v).sum() + 0.5 * self.rho2 * v @ v)


@dataclass(frozen=True)
class Tikhonov(ProxRegularizer):
    r"""``g(v) = scale / 2 * ||v||_2^2``."""

    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise InvariantViolation(f"Tikhonov scale must be > 0, got {self.scale}")

    def value(self, v):
        v = np.asarray(v, dtype=np.float64)
        return float(0.5 * self.scale * v @ v)


@dataclass
class ConsensusProblem:
    """``N`` local losses sharing dimension ``n`` plus one regularizer."""

    losses: List[LossOracle]
    regularizer: ProxRegularizer

    def __post_init__(self):
        self.losses = list(self.losses)
        if len(self.losses) < 1:
            raise ValueError("a consensus problem needs at least one loss")
        dims = {loss.dim for loss in self.losses}
        if len(dims) != 1:
            raise ValueError(f"all losses must share one dimension, got {sorted(dims)}")

    @property
    def n(self) -> int:
        return self.losses[0].dim

    @property
    def N(self) -> int:
        return len(self.losses)

    def objective(self, v: np.ndarray) -> float:
        """``sum_j f_j(v) + g(v)``: the consensus objective at a common point."""
        return float(sum(loss.value(v) for loss in self.losses) + self.regularizer.value(v))


@dataclass
class SolverState:
    """Iterates of the consensus scheme.

    ``weights[j]`` holds the diagonal of ``W_j`` as a positive vector.
    """

    u: List[np.ndarray]
    v: np.ndarray
    lam: List[np.ndarray]
    weights: List[np.ndarray]
    k: int = 0

    @classmethod
    def initial(cls, n: int, N: int, seed: int = 0, scale: float = 1e-2) -> "SolverState":
        """``v = 0``, ``lam_j = 0``, seeded small random ``u_j``, unit weights."""
        rng = np.random.default_rng(seed)
        u = [scale * rng.standard_normal(n) for _ in range(N)]
        return cls(
            u=u,
            v=np.zeros(n),
            lam=[np.zeros(n) for _ in range(N)],
            weights=[np.ones(n) for _ in range(N)],
            k=0,
        )

    def copy(self) -> "SolverState":
        return SolverState(
            u=[x.copy() for x in self.u],
            v=self.v.copy(),
            lam=[x.copy() for x in self.lam],
            weights=[x.copy() for x in self.weights],
            k=self.k,
        )

    def check(self) -> None:
        for name, vecs in (("u", self.u), ("lam", self.lam)):
            for j, x in enumerate(vecs):
                if not np.all(np.isfinite(x)):
                    raise InvariantViolation(f"{name}[{j}] has non-finite entries")
        if not np.all(np.isfinite(self.v)):
            raise InvariantViolation("v has non-finite entries")
        for j, w in enumerate(self.weights):
            if not np.all(w > 0):
                raise InvariantViolation(f"weights[{j}] is not strictly positive")


def weighted_norm(x, w) -> float:
    """``sqrt(sum_i w_i x_i^2)`` for a positive diagonal weight ``w``."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.shape != w.shape:
        raise ValueError(f"dimension mismatch: x{x.shape} vs w{w.shape}")
    return float(np.sqrt(np.sum(w * x * x)))


@dataclass
class OracleReport:
    grad_error: float
    hvp_symmetry: float
    hvp_linearity: float
    hvp_fd_error: float
    details: dict = field(default_factory=dict)


def _rel(err: float, scale: float) -> float:
    return err / max(scale, 1e-300) if scale > 0 else err


def check_oracle(loss: LossOracle, u, trials: int = 5, seed: int = 0) -> OracleReport:
    """Validate a loss oracle at ``u`` along ``trials`` random directions.

    Gradients are compared with central differences taken along each random
    direction at step ``1e-6 * (1 + ||u||_inf)``.  Hessian-vector products
    are compared with central differences of the gradient and checked for
    symmetry and linearity.  All reported errors are relative.
    """
    u = loss._check_dim(u)
    rng = np.random.default_rng(seed)
    f0, g0 = loss.value_and_grad(u)
    if not np.isfinite(f0) or not np.all(np.isfinite(g0)):
        raise OracleDefectError(f"non-finite value or gradient at u (value={f0})")

    h = 1e-6 * (1.0 + np.max(np.abs(u), initial=0.0))
    grad_err = hvp_sym = hvp_lin = hvp_fd = 0.0
    for _ in range(trials):
        d = rng.standard_normal(loss.dim)
        d /= np.linalg.norm(d)
        z = rng.standard_normal(loss.dim)
        fp = loss.value(u + h * d)
        fm = loss.value(u - h * d)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise OracleDefectError("non-finite value near u")
        fd = (fp - fm) / (2 * h)
        exact = float(g0 @ d)
        grad_err = max(grad_err, _rel(abs(fd - exact), max(abs(exact), np.linalg.norm(g0), 1e-12)))

        Hd = loss.hess_vec(u, d)
        Hz = loss.hess_vec(u, z)
        scale = np.linalg.norm(Hd) * np.linalg.norm(z) + 1e-300
        hvp_sym = max(hvp_sym, abs(z @ Hd - d @ Hz) / scale)

        a, b = rng.standard_normal(2)
        lhs = loss.hess_vec(u, a * d + b * z)
        rhs = a * Hd + b * Hz
        hvp_lin = max(hvp_lin, np.linalg.norm(lhs - rhs) / (np.linalg.norm(rhs) + 1e-300))

        gd = (loss.gradient(u + h * d) - loss.gradient(u - h * d)) / (2 * h)
        hvp_fd = max(hvp_fd, np.linalg.norm(gd - Hd) / max(np.linalg.norm(Hd), 1e-8))
    return OracleReport(grad_err, hvp_sym, hvp_lin, hvp_fd)
