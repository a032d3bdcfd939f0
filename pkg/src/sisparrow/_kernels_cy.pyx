# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-class inner-loop kernels.

``rows``/``cols`` hold the matrix positions of every entry class
concatenated, ``ptr`` the class boundaries (CSR style).  These loops
dominate the solve time, which is why they live in a C extension; the
pure-numpy twin is ``_kernels_py``.
"""

import numpy as np


def class_sums(double complex[:, ::1] X, Py_ssize_t[::1] ptr,
               Py_ssize_t[::1] rows, Py_ssize_t[::1] cols):
    """Per-class sums of ``X[rows, cols]`` split at ``ptr``."""
    cdef Py_ssize_t n = ptr.shape[0] - 1
    out = np.empty(n, dtype=np.complex128)
    cdef double complex[::1] o = out
    cdef Py_ssize_t i, k
    cdef double complex acc
    for i in range(n):
        acc = 0
        for k in range(ptr[i], ptr[i + 1]):
            acc = acc + X[rows[k], cols[k]]
        o[i] = acc
    return out


def class_quadratic(double complex[:, ::1] V, double complex[:, ::1] Rt,
                    Py_ssize_t[::1] ptr, Py_ssize_t[::1] rows,
                    Py_ssize_t[::1] cols):
    """Per-class curvature sums.

    For class ``i`` with positions ``(r_k, c_k)`` this is

        sum_{k,l} V[r_k, r_l] Rt[c_l, c_k] + V[c_k, c_l] Rt[r_l, r_k],

    the trace form ``tr(Rt (O^T V O + O V O^T))`` expanded over the sparse
    indicator ``O`` of the class.
    """
    cdef Py_ssize_t n = ptr.shape[0] - 1
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i, k, l, rk, ck, rl, cl
    cdef double complex acc
    for i in range(n):
        acc = 0
        for k in range(ptr[i], ptr[i + 1]):
            rk = rows[k]
            ck = cols[k]
            for l in range(ptr[i], ptr[i + 1]):
                rl = rows[l]
                cl = cols[l]
                acc = acc + V[rk, rl] * Rt[cl, ck] + V[ck, cl] * Rt[rl, rk]
        o[i] = acc.real
    return out
