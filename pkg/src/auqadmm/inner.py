"""Inner solvers for the local u-subproblems.

Conjugate gradients handles quadratic losses through their normal
equations; everything else goes through L-BFGS with a strong-Wolfe line
search.  Both are deterministic and allocation-light so that many workers
can run them concurrently.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np


@dataclass
class InnerInfo:
    iterations: int
    grad_norm: float
    converged: bool
    message: str = ""


def conjugate_gradient(matvec: Callable[[np.ndarray], np.ndarray], b: np.ndarray,
                       x0: np.ndarray | None = None, tol: float = 1e-10,
                       max_iter: int = 200) -> Tuple[np.ndarray, InnerInfo]:
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    Stops when the residual 2-norm drops to ``tol`` (absolute).
    """
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - matvec(x)
    p = r.copy()
    rr = r @ r
    it = 0
    while np.sqrt(rr) > tol and it < max_iter:
        Ap = matvec(p)
        pAp = p @ Ap
        if pAp <= 0:
            return x, InnerInfo(it, float(np.sqrt(rr)), False, "non-positive curvature")
        a = rr / pAp
        x += a * p
        r -= a * Ap
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
        it += 1
    res = float(np.sqrt(rr))
    return x, InnerInfo(it, res, res <= tol, "" if res <= tol else "max iterations")


def _cubic_min(a, fa, ga, b, fb, gb):
    # minimizer of the cubic interpolating (a, fa, ga) and (b, fb, gb)
    d1 = ga + gb - 3 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return None
    d2 = np.copysign(np.sqrt(disc), b - a)
    denom = gb - ga + 2 * d2
    if denom == 0:
        return None
    return b - (b - a) * (gb + d2 - d1) / denom


def strong_wolfe(phi, phi0, dphi0, a1=1.0, c1=1e-4, c2=0.9, amax=1e10, max_evals=30):
    """Line search satisfying the strong Wolfe conditions.

    ``phi(a)`` returns ``(value, derivative, payload)``.  Returns the accepted
    step with its value and payload, or ``None`` if the search fails.

    Near a minimizer the decrease in ``phi`` drops below rounding error, so
    the sufficient-decrease test allows a slack of a few ulps of ``phi0``.
    """
    fuzz = 1e-14 * abs(phi0)
    a_prev, f_prev, g_prev = 0.0, phi0, dphi0
    a = a1
    evals = 0

    def zoom(lo, f_lo, g_lo, hi, f_hi, g_hi):
        nonlocal evals
        while evals < max_evals:
            t = _cubic_min(lo, f_lo, g_lo, hi, f_hi, g_hi)
            lo_b, hi_b = min(lo, hi), max(lo, hi)
            margin = 0.1 * (hi_b - lo_b)
            if t is None or not (lo_b + margin <= t <= hi_b - margin):
                t = 0.5 * (lo + hi)
            ft, gt, pay = phi(t)
            evals += 1
            if ft > phi0 + c1 * t * dphi0 + fuzz or ft > f_lo + fuzz:
                hi, f_hi, g_hi = t, ft, gt
            else:
                if abs(gt) <= -c2 * dphi0:
                    return t, ft, pay
                if gt * (hi - lo) >= 0:
                    hi, f_hi, g_hi = lo, f_lo, g_lo
                lo, f_lo, g_lo = t, ft, gt
            if abs(hi - lo) <= 1e-16 * max(1.0, abs(lo)):
                break
        return None

    first = True
    while evals < max_evals:
        fa, ga, pay = phi(a)
        evals += 1
        if not np.isfinite(fa):
            a = 0.5 * (a_prev + a)
            continue
        if fa > phi0 + c1 * a * dphi0 + fuzz or (not first and fa > f_prev + fuzz):
            return zoom(a_prev, f_prev, g_prev, a, fa, ga)
        if abs(ga) <= -c2 * dphi0:
            return a, fa, pay
        if ga >= 0:
            return zoom(a, fa, ga, a_prev, f_prev, g_prev)
        a_prev, f_prev, g_prev = a, fa, ga
        a = min(2.0 * a, amax)
        first = False
    return None


def lbfgs(fun_grad: Callable[[np.ndarray], Tuple[float, np.ndarray]], x0: np.ndarray,
          tol: float = 1e-8, max_iter: int = 200, memory: int = 10
          ) -> Tuple[np.ndarray, InnerInfo]:
    """Minimize a smooth function with limited-memory BFGS.

    Parameters
    ----------
    fun_grad : callable
        ``x -> (f(x), grad f(x))``.
    x0 : ndarray
        Starting point (not modified).
    tol : float
        Stop once ``||grad f|| <= tol``.
    max_iter : int
        Iteration budget.
    memory : int
        Number of stored correction pairs.

    Returns
    -------
    x : ndarray
        Best iterate found.
    info : InnerInfo
    """
    x = np.array(x0, dtype=np.float64)
    f, g = fun_grad(x)
    S: deque = deque(maxlen=memory)
    Y: deque = deque(maxlen=memory)
    gnorm = float(np.linalg.norm(g))
    it = 0
    while gnorm > tol and it < max_iter:
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in reversed(list(zip(S, Y, _rhos(S, Y)))):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if S:
            s, y = S[-1], Y[-1]
            q *= (s @ y) / (y @ y)
        for (s, y, rho), a in zip(zip(S, Y, _rhos(S, Y)), reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        d = -q
        dg = d @ g
        if dg >= 0:
            S.clear()
            Y.clear()
            d = -g
            dg = -gnorm * gnorm
        a1 = 1.0 if S else min(1.0, 1.0 / gnorm)

        def phi(a, x=x, d=d):
            xa = x + a * d
            fa, ga = fun_grad(xa)
            return fa, float(ga @ d), (xa, ga)

        res = strong_wolfe(phi, f, dg, a1=a1)
        if res is None:
            return x, InnerInfo(it, gnorm, False, "line search failed")
        _, f_new, (x_new, g_new) = res
        s = x_new - x
        y = g_new - g
        if s @ y > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            S.append(s)
            Y.append(y)
        x, f, g = x_new, f_new, g_new
        gnorm = float(np.linalg.norm(g))
        it += 1
    return x, InnerInfo(it, gnorm, gnorm <= tol, "" if gnorm <= tol else "max iterations")


def _rhos(S, Y):
    return [1.0 / (s @ y) for s, y in zip(S, Y)]
