"""Pure-Python/numpy versions of the compiled kernels in ``_kernels.pyx``.

Both modules implement the same algorithm step for step; results agree to
floating-point rounding.
"""

from __future__ import annotations

import math

import numpy as np

STEP_TOL = 1e-7


def project_simplex(v):
    """Euclidean projection of ``v`` onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    n = v.shape[0]
    u = np.sort(v)[::-1]
    css = 0.0
    tau = 0.0
    for i in range(n):
        css += u[i]
        t = (css - 1.0) / (i + 1)
        if u[i] - t > 0.0:
            tau = t
    return np.maximum(v - tau, 0.0)


def _objective(H, c, d, w):
    return float(w @ (H @ w) - 2.0 * (c @ w) + d)


def solve_simplex_qp(H, c, d, lipschitz, max_iter=10_000, tol=1e-10):
    """Minimise ``w'Hw - 2c'w + d`` over the simplex by accelerated projected gradient.

    Starts from the uniform vector, restarts momentum whenever the objective
    rises, and stops once both the objective change (relative, ``tol``) and
    the largest coordinate move (``STEP_TOL``) are small.

    Returns ``(w, objective, iterations, converged)``.
    """
    H = np.asarray(H, dtype=float)
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    x = np.full(n, 1.0 / n)
    fx = _objective(H, c, d, x)
    if n == 1 or lipschitz <= 0.0:
        return x, fx, 0, True
    step = 1.0 / lipschitz
    y = x.copy()
    t = 1.0
    momentum = False
    for it in range(1, max_iter + 1):
        g = 2.0 * (H @ y - c)
        x_new = project_simplex(y - step * g)
        f_new = _objective(H, c, d, x_new)
        if f_new > fx:
            if momentum:
                y = x.copy()
                t = 1.0
                momentum = False
                continue
            return x, fx, it, True
        dx = float(np.max(np.abs(x_new - x)))
        if abs(fx - f_new) <= tol * max(1.0, abs(fx)) and dx <= STEP_TOL:
            return x_new, f_new, it, True
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        momentum = t > 1.0
        x = x_new
        fx = f_new
        t = t_new
    return x, fx, max_iter, False
