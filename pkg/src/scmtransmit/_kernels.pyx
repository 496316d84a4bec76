# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled simplex-QP kernels. See ``_kernels_py.py`` for the reference version."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()

cdef double STEP_TOL = 1e-7


cdef void _project(double[::1] v, double[::1] out, double[::1] work) noexcept nogil:
    cdef Py_ssize_t n = v.shape[0]
    cdef Py_ssize_t i, j
    cdef double key, css = 0.0, t, tau = 0.0
    for i in range(n):
        work[i] = v[i]
    # descending insertion sort; n is the donor count
    for i in range(1, n):
        key = work[i]
        j = i - 1
        while j >= 0 and work[j] < key:
            work[j + 1] = work[j]
            j -= 1
        work[j + 1] = key
    for i in range(n):
        css += work[i]
        t = (css - 1.0) / (i + 1)
        if work[i] - t > 0.0:
            tau = t
    for i in range(n):
        out[i] = v[i] - tau if v[i] - tau > 0.0 else 0.0


def project_simplex(v):
    """Euclidean projection of ``v`` onto the probability simplex."""
    cdef double[::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    out = np.empty(vv.shape[0])
    cdef double[::1] o = out
    cdef double[::1] work = np.empty(vv.shape[0])
    _project(vv, o, work)
    return out


cdef double _objective(double[:, ::1] H, double[::1] c, double d, double[::1] w) noexcept nogil:
    cdef Py_ssize_t n = c.shape[0]
    cdef Py_ssize_t i, j
    cdef double quad = 0.0, lin = 0.0, row
    for i in range(n):
        row = 0.0
        for j in range(n):
            row += H[i, j] * w[j]
        quad += w[i] * row
        lin += c[i] * w[i]
    return quad - 2.0 * lin + d


def solve_simplex_qp(H, c, double d, double lipschitz, int max_iter=10000, double tol=1e-10):
    """Minimise ``w'Hw - 2c'w + d`` over the simplex; returns ``(w, f, iterations, converged)``."""
    cdef double[:, ::1] Hm = np.ascontiguousarray(H, dtype=np.float64)
    cdef double[::1] cv = np.ascontiguousarray(c, dtype=np.float64)
    cdef Py_ssize_t n = cv.shape[0]
    x_arr = np.full(n, 1.0 / n)
    cdef double[::1] x = x_arr
    cdef double fx = _objective(Hm, cv, d, x)
    if n == 1 or lipschitz <= 0.0:
        return x_arr, fx, 0, True

    cdef double[::1] y = np.array(x_arr)
    cdef double[::1] z = np.empty(n)
    cdef double[::1] xn = np.empty(n)
    cdef double[::1] work = np.empty(n)
    cdef double step = 1.0 / lipschitz
    cdef double t = 1.0, t_new, f_new, dx, g, beta, scale
    cdef bint momentum = False
    cdef Py_ssize_t i, j
    cdef int it
    with nogil:
        for it in range(1, max_iter + 1):
            for i in range(n):
                g = 0.0
                for j in range(n):
                    g += Hm[i, j] * y[j]
                g = 2.0 * (g - cv[i])
                z[i] = y[i] - step * g
            _project(z, xn, work)
            f_new = _objective(Hm, cv, d, xn)
            if f_new > fx:
                if momentum:
                    for i in range(n):
                        y[i] = x[i]
                    t = 1.0
                    momentum = False
                    continue
                with gil:
                    return np.asarray(x).copy(), fx, it, True
            dx = 0.0
            for i in range(n):
                if fabs(xn[i] - x[i]) > dx:
                    dx = fabs(xn[i] - x[i])
            scale = fabs(fx) if fabs(fx) > 1.0 else 1.0
            if fabs(fx - f_new) <= tol * scale and dx <= STEP_TOL:
                with gil:
                    return np.asarray(xn).copy(), f_new, it, True
            t_new = 0.5 * (1.0 + sqrt(1.0 + 4.0 * t * t))
            beta = (t - 1.0) / t_new
            for i in range(n):
                y[i] = xn[i] + beta * (xn[i] - x[i])
                x[i] = xn[i]
            momentum = t > 1.0
            fx = f_new
            t = t_new
    return np.asarray(x).copy(), fx, max_iter, False
