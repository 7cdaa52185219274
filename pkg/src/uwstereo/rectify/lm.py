from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LMDivergence(RuntimeError):
    pass


@dataclass
class LMResult:
    x: np.ndarray
    cost: float
    iterations: int
    converged: bool


def numeric_jacobian(fun, x: np.ndarray, r0: np.ndarray, step: float = 1e-6) -> np.ndarray:
    J = np.empty((r0.size, x.size))
    for k in range(x.size):
        xk = x.copy()
        xk[k] += step
        J[:, k] = (fun(xk) - r0) / step
    return J


def levenberg_marquardt(
    fun,
    x0,
    *,
    damping: float = 1e-3,
    max_iter: int = 200,
    rtol: float = 1e-10,
    step: float = 1e-6,
) -> LMResult:
    """Minimise 0.5 * ||fun(x)||^2 with a multiplicative damping schedule.

    The normal equations are damped with ``mu * diag(J^T J)``; ``mu`` shrinks
    tenfold after an accepted step and grows tenfold after a rejected one.
    Stops when an accepted step changes the cost by less than ``rtol``
    relative, or after ``max_iter`` iterations.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    r = fun(x)
    cost = float(r @ r)
    if not np.isfinite(cost):
        raise LMDivergence("initial cost is not finite")
    mu = damping
    converged = cost == 0.0
    it = 0
    while it < max_iter and not converged:
        it += 1
        J = numeric_jacobian(fun, x, r, step)
        g = J.T @ r
        A = J.T @ J
        diag = np.maximum(np.diag(A), 1e-12 * max(1.0, np.diag(A).max()))
        accepted = False
        while mu < 1e16:
            try:
                delta = np.linalg.solve(A + mu * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                mu *= 10
                continue
            x_new = x + delta
            r_new = fun(x_new)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new < cost:
                rel = (cost - cost_new) / cost
                x, r, cost = x_new, r_new, cost_new
                mu = max(mu / 10, 1e-15)
                accepted = True
                converged = rel < rtol or cost == 0.0
                break
            mu *= 10
        if not accepted:
            # no descent direction left at any damping: a local minimum
            converged = True
    if not np.isfinite(cost):
        raise LMDivergence("cost became non-finite")
    return LMResult(x, cost, it, converged)
