"""Limited-memory BFGS with a feasibility-rejecting backtracking line search.

The objective may return ``inf`` (or raise an admissibility error) at trial
points; such points are treated as infeasible and the step is shortened.
Everything is deterministic: no randomness and a fresh memory per call.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InadmissibleStateError, PaddingTooSmallError


@dataclass
class OptimizeResult:
    x: np.ndarray
    f: float
    g: np.ndarray
    iterations: int
    evaluations: int
    grad_norm: float
    status: str  # "converged", "stalled", "maxiter"

    @property
    def success(self) -> bool:
        return self.status == "converged"


def safe_eval(fun: Callable, x: np.ndarray):
    try:
        f, g = fun(x)
    except (InadmissibleStateError, PaddingTooSmallError, FloatingPointError):
        return np.inf, None
    if not np.isfinite(f) or g is None or not np.all(np.isfinite(g)):
        return np.inf, None
    return float(f), g


def lbfgs(fun: Callable[[np.ndarray], tuple[float, np.ndarray]], x0: np.ndarray, gtol: float = 1e-8,
          maxiter: int = 2000, memory: int = 12, max_step: float | None = None,
          norm: Callable[[np.ndarray], float] | None = None, c1: float = 1e-4,
          precond: Callable[[np.ndarray], np.ndarray] | None = None) -> OptimizeResult:
    """Minimize ``fun`` from ``x0`` until ``norm(grad) <= gtol``.

    ``max_step`` caps the infinity norm of the first trial step of every line
    search, which keeps the iterates away from the barrier on the first try.
    ``precond`` applies an SPD approximation of the inverse Hessian; the
    initial quasi-Newton matrix is then ``gamma * precond``.
    """
    if norm is None:
        norm = lambda g: float(np.max(np.abs(g))) if g.size else 0.0  # noqa: E731
    x = np.array(x0, dtype=np.float64)
    f, g = safe_eval(fun, x)
    nev = 1
    if not np.isfinite(f):
        raise InadmissibleStateError("optimizer started from an infeasible point")
    S: deque = deque(maxlen=memory)
    Y: deque = deque(maxlen=memory)
    gn = norm(g)
    it = 0
    stall = 0
    status = "maxiter"
    while it < maxiter:
        if gn <= gtol:
            status = "converged"
            break
        # two-loop recursion
        q = -g.copy()
        alphas = []
        for s, y in zip(reversed(S), reversed(Y)):
            rho = 1.0 / float(y @ s)
            a = rho * float(s @ q)
            alphas.append((a, rho, s, y))
            q -= a * y
        if precond is not None:
            if S:
                s, y = S[-1], Y[-1]
                q = precond(q) * (float(s @ y) / float(y @ precond(y)))
            else:
                q = precond(q)
        elif S:
            s, y = S[-1], Y[-1]
            q *= float(s @ y) / float(y @ y)
        else:
            q *= 1.0 / max(1.0, float(np.max(np.abs(g))))
        for a, rho, s, y in reversed(alphas):
            b = rho * float(y @ q)
            q += (a - b) * s
        d = q
        slope = float(g @ d)
        if not slope < 0:
            S.clear()
            Y.clear()
            d = -precond(g) if precond is not None else -g / max(1.0, float(np.max(np.abs(g))))
            slope = float(g @ d)
        step = 1.0
        if max_step is not None:
            dm = float(np.max(np.abs(d)))
            if dm > max_step:
                step = max_step / dm
        accepted = False
        for _ in range(60):
            xn = x + step * d
            fn, gn_vec = safe_eval(fun, xn)
            nev += 1
            if np.isfinite(fn) and fn <= f + c1 * step * slope:
                accepted = True
                break
            step *= 0.5
        it += 1
        if not accepted:
            # no decrease representable in floating point: accept only if the
            # gradient at the best trial point is smaller
            if np.isfinite(fn) and fn <= f + 1e-15 * max(1.0, abs(f)) and norm(gn_vec) < gn:
                accepted = True
            else:
                status = "stalled"
                break
        s = xn - x
        y = gn_vec - g
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            S.append(s)
            Y.append(y)
        stall = stall + 1 if f - fn <= 1e-16 * max(1.0, abs(f)) else 0
        x, f, g = xn, fn, gn_vec
        gn = norm(g)
        if stall >= 10:
            status = "converged" if gn <= gtol else "stalled"
            break
    else:
        status = "converged" if gn <= gtol else "maxiter"
    if gn <= gtol:
        status = "converged"
    return OptimizeResult(x, f, g, it, nev, gn, status)
