# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled cyclic-Jacobi sweeps over a stack of small symmetric matrices.

The arithmetic mirrors ``specpool._fallback.jacobi_sweeps`` operation for
operation, so both backends produce bit-identical output when the C
compiler does not contract multiply-adds.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()


cdef int _sweep_one(double[:, ::1] a, double[:, ::1] v, double tol, int max_sweeps,
                    double *off_out) noexcept nogil:
    cdef Py_ssize_t k = a.shape[0]
    cdef Py_ssize_t p, q, r
    cdef double off, apq, app, aqq, theta, t, c, s, x, y
    cdef int sweep = 0
    while True:
        off = 0.0
        for p in range(k - 1):
            for q in range(p + 1, k):
                x = fabs(a[p, q])
                if x > off:
                    off = x
        if off <= tol:
            off_out[0] = off
            return sweep
        if sweep == max_sweeps:
            off_out[0] = off
            return -1
        for p in range(k - 1):
            for q in range(p + 1, k):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                theta = (aqq - app) / (2.0 * apq)
                if fabs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = 1.0 / (fabs(theta) + sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                for r in range(k):
                    x = a[r, p]
                    y = a[r, q]
                    a[r, p] = c * x - s * y
                    a[r, q] = s * x + c * y
                for r in range(k):
                    x = a[p, r]
                    y = a[q, r]
                    a[p, r] = c * x - s * y
                    a[q, r] = s * x + c * y
                a[p, q] = 0.0
                a[q, p] = 0.0
                for r in range(k):
                    x = v[r, p]
                    y = v[r, q]
                    v[r, p] = c * x - s * y
                    v[r, q] = s * x + c * y
        sweep += 1


def jacobi_sweeps(cnp.ndarray a_in, cnp.ndarray tol_in, int max_sweeps=64):
    """Diagonalize each matrix of an ``(n, k, k)`` stack in place of a copy.

    Returns ``(diag, vectors, sweeps, off)``; ``sweeps[i] == -1`` marks a
    matrix that did not reach ``tol[i]`` within ``max_sweeps`` sweeps.
    """
    cdef double[:, :, ::1] a = np.array(a_in, dtype=np.float64, order="C", copy=True)
    cdef double[::1] tol = np.ascontiguousarray(tol_in, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t k = a.shape[1]
    v_arr = np.zeros((n, k, k), dtype=np.float64)
    cdef double[:, :, ::1] v = v_arr
    sweeps_arr = np.zeros(n, dtype=np.int64)
    off_arr = np.zeros(n, dtype=np.float64)
    cdef cnp.int64_t[::1] sweeps = sweeps_arr
    cdef double[::1] off = off_arr
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(n):
            for j in range(k):
                v[i, j, j] = 1.0
            sweeps[i] = _sweep_one(a[i], v[i], tol[i], max_sweeps, &off[i])
    diag = np.ascontiguousarray(np.diagonal(np.asarray(a), axis1=1, axis2=2))
    return diag, v_arr, sweeps_arr, off_arr


def set_max(cnp.ndarray x_in):
    """Max over axis 1 of an ``(n, k, m)`` array and the first row attaining it."""
    cdef double[:, :, ::1] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1], m = x.shape[2]
    best_arr = np.empty((n, m), dtype=np.float64)
    arg_arr = np.zeros((n, m), dtype=np.int64)
    cdef double[:, ::1] best = best_arr
    cdef cnp.int64_t[:, ::1] arg = arg_arr
    cdef Py_ssize_t i, j, c
    cdef double val
    with nogil:
        for i in range(n):
            for c in range(m):
                best[i, c] = x[i, 0, c]
            for j in range(1, k):
                for c in range(m):
                    val = x[i, j, c]
                    if val > best[i, c]:
                        best[i, c] = val
                        arg[i, c] = j
    return best_arr, arg_arr


def route_rows(cnp.ndarray grad_in, cnp.ndarray arg_in, Py_ssize_t k):
    """Scatter ``grad (n, m)`` into row ``arg[i, c]`` of a zero ``(n, k, m)`` array."""
    cdef double[:, ::1] grad = np.ascontiguousarray(grad_in, dtype=np.float64)
    cdef cnp.int64_t[:, ::1] arg = np.ascontiguousarray(arg_in, dtype=np.int64)
    cdef Py_ssize_t n = grad.shape[0], m = grad.shape[1]
    out_arr = np.zeros((n, k, m), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, c
    with nogil:
        for i in range(n):
            for c in range(m):
                out[i, arg[i, c], c] = grad[i, c]
    return out_arr
