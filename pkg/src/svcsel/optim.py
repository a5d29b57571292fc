"""Box-constrained quasi-Newton minimization for the covariance step.

Backed by scipy's L-BFGS-B, which projects iterates onto the bounds (active
constraints are handled by gradient projection, not penalties).  A
coordinate whose gradient is exactly zero at every evaluated point is never
moved, so non-identifiable parameters stall in place.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import minimize as _scipy_minimize

from .exceptions import LineSearchError


@dataclass
class BoxBounds:
    """Componentwise lower/upper bounds; entries may be infinite."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float).reshape(-1)
        self.upper = np.asarray(self.upper, dtype=float).reshape(-1)
        if self.lower.shape != self.upper.shape:
            raise ValueError("lower and upper bounds must have equal length")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def m(self) -> int:
        return self.lower.size

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)


class Termination(Enum):
    GRAD_TOL = "gradtol"
    FUNC_TOL = "functol"
    MAX_ITER = "maxiter"


@dataclass
class OptimReport:
    x_star: np.ndarray
    f_star: float
    n_evals: int
    converged: bool
    termination: Termination


def _fd_gradient(f, x, lower, upper, rel_step=1e-7):
    # Bounds-aware differences (one-sided at active bounds); testing
    # fallback when no analytic gradient is given.
    g = np.empty(x.size)
    for i in range(x.size):
        h = rel_step * max(1.0, abs(x[i]))
        hi = min(x[i] + h, upper[i])
        lo = max(x[i] - h, lower[i])
        if hi == lo:
            g[i] = 0.0
            continue
        xp, xm = x.copy(), x.copy()
        xp[i], xm[i] = hi, lo
        g[i] = (f(xp) - f(xm)) / (hi - lo)
    return g


def minimize_box(f, grad, x0, bounds: BoxBounds, *, gtol: float = 1e-8,
                 ftol: float = 1e-11, max_iter: int = 500,
                 memory: int = 6) -> OptimReport:
    """Minimize ``f`` over a box, starting from a feasible ``x0``.

    Parameters
    ----------
    f, grad : objective and gradient callables.  ``grad=None`` falls back
        to central finite differences (testing only).
    gtol : projected-gradient threshold.
    ftol : relative function-change threshold.
    max_iter : iteration cap.
    memory : number of limited-memory correction pairs.

    Raises
    ------
    LineSearchError
        If a non-finite objective or gradient value is encountered; the
        error carries the best feasible iterate seen so far.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.size != bounds.m:
        raise ValueError(f"x0 has length {x0.size}, bounds have {bounds.m}")
    if not bounds.contains(x0):
        raise ValueError("x0 violates the box bounds")

    state = {"n_evals": 0, "best_x": x0.copy(), "best_f": np.inf}

    def fun(x):
        state["n_evals"] += 1
        val = float(f(x))
        if not np.isfinite(val):
            raise LineSearchError(
                "non-finite objective value during search",
                best_x=state["best_x"], best_f=state["best_f"],
            )
        if val < state["best_f"]:
            state["best_f"] = val
            state["best_x"] = np.array(x, dtype=float)
        return val

    if grad is None:
        def jac(x):
            return _fd_gradient(fun, np.asarray(x, dtype=float),
                                bounds.lower, bounds.upper)
    else:
        def jac(x):
            g = np.asarray(grad(x), dtype=float)
            if not np.all(np.isfinite(g)):
                raise LineSearchError(
                    "non-finite gradient during search",
                    best_x=state["best_x"], best_f=state["best_f"],
                )
            return g

    res = _scipy_minimize(
        fun, x0, jac=jac, method="L-BFGS-B",
        bounds=np.column_stack([bounds.lower, bounds.upper]),
        options={"maxcor": memory, "ftol": ftol, "gtol": gtol,
                 "maxiter": max_iter, "maxfun": max(100 * max_iter, 15000)},
    )
    if res.status == 2:
        raise LineSearchError(
            f"optimizer aborted: {res.message}",
            best_x=state["best_x"], best_f=state["best_f"],
        )

    x_star = np.asarray(res.x, dtype=float)
    f_star = float(res.fun)
    if state["best_f"] < f_star:
        x_star, f_star = state["best_x"], state["best_f"]
    converged = res.status == 0
    if not converged:
        termination = Termination.MAX_ITER
    elif "PGTOL" in str(res.message).upper():
        termination = Termination.GRAD_TOL
    else:
        termination = Termination.FUNC_TOL
    return OptimReport(x_star=x_star, f_star=f_star,
                       n_evals=state["n_evals"], converged=converged,
                       termination=termination)
