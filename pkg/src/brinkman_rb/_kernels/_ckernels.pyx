# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

DEF STATUS_OPTIMAL = 0
DEF STATUS_INFEASIBLE = 1
DEF STATUS_ITERATION_LIMIT = 2
DEF STATUS_UNBOUNDED = 3


cdef int _run_phase(double[:, ::1] T, double[::1] xb, Py_ssize_t[::1] basis,
                    double[::1] x, unsigned char[::1] at_upper,
                    unsigned char[::1] is_basic, double[::1] lo, double[::1] hi,
                    double[::1] cost, double tol, int max_iter,
                    int* n_iter_out) nogil:
    cdef Py_ssize_t m = T.shape[0]
    cdef Py_ssize_t ncol = T.shape[1]
    cdef Py_ssize_t i, j, k, enter, leave, b, out
    cdef double d, a, lim, t_best, delta, step, piv, f
    cdef int n_iter = 0
    cdef bint out_to_lower
    while n_iter < max_iter:
        enter = -1
        for j in range(ncol):
            if is_basic[j] or hi[j] - lo[j] <= 0.0:
                continue
            d = cost[j]
            for i in range(m):
                d -= cost[basis[i]] * T[i, j]
            if at_upper[j]:
                if d > tol:
                    enter = j
                    break
            elif d < -tol:
                enter = j
                break
        if enter < 0:
            n_iter_out[0] = n_iter
            return STATUS_OPTIMAL
        delta = -1.0 if at_upper[enter] else 1.0
        t_best = hi[enter] - lo[enter]
        leave = -1
        for i in range(m):
            a = delta * T[i, enter]
            b = basis[i]
            if a > tol:
                lim = (xb[i] - lo[b]) / a
            elif a < -tol:
                if hi[b] == INFINITY:
                    continue
                lim = (hi[b] - xb[i]) / (-a)
            else:
                continue
            if lim < 0.0:
                lim = 0.0
            if lim < t_best - tol or (lim <= t_best + tol and leave >= 0
                                      and b < basis[leave]):
                t_best = lim
                leave = i
        if t_best == INFINITY:
            n_iter_out[0] = n_iter
            return STATUS_UNBOUNDED
        step = delta * t_best
        for i in range(m):
            xb[i] -= step * T[i, enter]
        x[enter] += step
        if leave < 0:
            at_upper[enter] = not at_upper[enter]
            x[enter] = hi[enter] if at_upper[enter] else lo[enter]
        else:
            out = basis[leave]
            out_to_lower = delta * T[leave, enter] > 0.0
            at_upper[out] = not out_to_lower
            x[out] = lo[out] if out_to_lower else hi[out]
            is_basic[out] = 0
            piv = T[leave, enter]
            for k in range(ncol):
                T[leave, k] /= piv
            for i in range(m):
                if i != leave:
                    f = T[i, enter]
                    if f != 0.0:
                        for k in range(ncol):
                            T[i, k] -= f * T[leave, k]
            basis[leave] = enter
            is_basic[enter] = 1
            xb[leave] = x[enter]
        n_iter += 1
    n_iter_out[0] = n_iter
    return STATUS_ITERATION_LIMIT


def bounded_simplex(c, G, h, lo, hi, double tol=1e-10, int max_iter=10000):
    cdef double[::1] cv = np.ascontiguousarray(c, dtype=np.float64)
    cdef Py_ssize_t n = cv.shape[0]
    cdef double[:, ::1] Gv = np.ascontiguousarray(G, dtype=np.float64).reshape(-1, n)
    cdef double[::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    cdef Py_ssize_t m = Gv.shape[0]
    cdef Py_ssize_t ncol = n + 2 * m
    cdef Py_ssize_t i, j, art
    cdef double sign, ri, infeas, hmax

    lo_np = np.zeros(ncol)
    hi_np = np.full(ncol, np.inf)
    lo_np[:n] = lo
    hi_np[:n] = hi
    x_np = np.zeros(ncol)
    x_np[:n] = lo
    cdef double[::1] lo_all = lo_np
    cdef double[::1] hi_all = hi_np
    cdef double[::1] x = x_np
    at_np = np.zeros(ncol, dtype=np.uint8)
    basic_np = np.zeros(ncol, dtype=np.uint8)
    cdef unsigned char[::1] at_upper = at_np
    cdef unsigned char[::1] is_basic = basic_np
    T_np = np.zeros((m, ncol))
    cdef double[:, ::1] T = T_np
    xb_np = np.empty(m)
    cdef double[::1] xb = xb_np
    basis_np = np.empty(m, dtype=np.intp)
    cdef Py_ssize_t[::1] basis = basis_np
    cost1_np = np.zeros(ncol)
    cdef double[::1] cost1 = cost1_np

    for i in range(m):
        ri = hv[i]
        for j in range(n):
            ri -= Gv[i, j] * x[j]
        art = n + m + i
        if ri <= 0.0:
            sign = -1.0
            basis[i] = n + i
            xb[i] = -ri
            hi_all[art] = 0.0
        else:
            sign = 1.0
            basis[i] = art
            xb[i] = ri
            cost1[art] = 1.0
        for j in range(n):
            T[i, j] = sign * Gv[i, j]
        T[i, n + i] = -sign
        T[i, art] = sign
        is_basic[basis[i]] = 1
        x[basis[i]] = xb[i]

    cdef int it1 = 0, it2 = 0, status
    with nogil:
        status = _run_phase(T, xb, basis, x, at_upper, is_basic, lo_all, hi_all,
                            cost1, tol, max_iter, &it1)
    for i in range(m):
        x[basis[i]] = xb[i]
    if status != STATUS_OPTIMAL:
        return status, x_np[:n].copy(), np.zeros(m), it1
    infeas = 0.0
    for i in range(m):
        infeas += x[n + m + i]
    hmax = 1.0
    for i in range(m):
        if abs(hv[i]) > hmax:
            hmax = abs(hv[i])
    if infeas > tol * hmax * 10:
        return STATUS_INFEASIBLE, x_np[:n].copy(), np.zeros(m), it1
    for i in range(m):
        hi_all[n + m + i] = 0.0
        if basis[i] >= n + m:
            xb[i] = 0.0
    cost2_np = np.zeros(ncol)
    cost2_np[:n] = cv
    cdef double[::1] cost2 = cost2_np
    with nogil:
        status = _run_phase(T, xb, basis, x, at_upper, is_basic, lo_all, hi_all,
                            cost2, tol, max_iter - it1, &it2)
    for i in range(m):
        x[basis[i]] = xb[i]
    duals = cost2_np[basis_np] @ T_np[:, n + m:]
    return status, x_np[:n].copy(), duals, it1 + it2


def radical_inverse(indices, long base):
    idx = np.ascontiguousarray(indices, dtype=np.int64)
    out = np.empty(idx.shape, dtype=np.float64)
    cdef long long[::1] iv = idx.reshape(-1)
    cdef double[::1] ov = out.reshape(-1)
    cdef Py_ssize_t k
    cdef long long i
    cdef double f, v
    for k in range(iv.shape[0]):
        i = iv[k]
        f = 1.0
        v = 0.0
        while i > 0:
            f /= base
            v += f * (i % base)
            i //= base
        ov[k] = v
    return out
