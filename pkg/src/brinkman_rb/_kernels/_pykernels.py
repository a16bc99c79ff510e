"""Pure-Python/numpy implementations of the hot kernels.

These are the reference versions; ``_ckernels.pyx`` mirrors them line for
line.  Both take already-scaled, dense, C-contiguous float64 data.
"""

import numpy as np

STATUS_OPTIMAL = 0
STATUS_INFEASIBLE = 1
STATUS_ITERATION_LIMIT = 2
STATUS_UNBOUNDED = 3


def _run_phase(T, xb, basis, x, at_upper, is_basic, lo, hi, cost, tol, max_iter):
    m, ncol = T.shape
    n_iter = 0
    while n_iter < max_iter:
        cb = cost[basis]
        d = cost - cb @ T
        enter = -1
        for j in range(ncol):
            if is_basic[j] or hi[j] - lo[j] <= 0.0:
                continue
            if at_upper[j]:
                if d[j] > tol:
                    enter = j
                    break
            elif d[j] < -tol:
                enter = j
                break
        if enter < 0:
            return STATUS_OPTIMAL, n_iter
        delta = -1.0 if at_upper[enter] else 1.0
        col = T[:, enter]
        t_best = hi[enter] - lo[enter]
        leave = -1
        for i in range(m):
            a = delta * col[i]
            b = basis[i]
            if a > tol:
                lim = (xb[i] - lo[b]) / a
            elif a < -tol:
                if hi[b] == np.inf:
                    continue
                lim = (hi[b] - xb[i]) / (-a)
            else:
                continue
            if lim < 0.0:
                lim = 0.0
            if lim < t_best - tol or (
                lim <= t_best + tol and leave >= 0 and b < basis[leave]
            ):
                t_best = lim
                leave = i
        if t_best == np.inf:
            return STATUS_UNBOUNDED, n_iter
        step = delta * t_best
        xb -= step * col
        x[enter] += step
        if leave < 0:
            at_upper[enter] = not at_upper[enter]
            x[enter] = hi[enter] if at_upper[enter] else lo[enter]
        else:
            out = basis[leave]
            out_to_lower = delta * col[leave] > 0.0
            at_upper[out] = not out_to_lower
            x[out] = lo[out] if out_to_lower else hi[out]
            is_basic[out] = False
            piv = T[leave, enter]
            T[leave, :] /= piv
            for i in range(m):
                if i != leave and T[i, enter] != 0.0:
                    T[i, :] -= T[i, enter] * T[leave, :]
            basis[leave] = enter
            is_basic[enter] = True
            xb[leave] = x[enter]
        n_iter += 1
    return STATUS_ITERATION_LIMIT, n_iter


def bounded_simplex(c, G, h, lo, hi, tol=1e-10, max_iter=10000):
    """Minimise ``c @ y`` subject to ``G @ y >= h`` and ``lo <= y <= hi``.

    Two-phase bounded-variable primal simplex on a dense tableau with
    Bland's smallest-index rule.  ``lo`` and ``hi`` must be finite.

    Returns
    -------
    status, y, duals, n_iter
        ``duals`` are the multipliers of the rows of ``G`` (nonnegative at
        an optimum).
    """
    c = np.ascontiguousarray(c, dtype=float)
    G = np.ascontiguousarray(G, dtype=float).reshape(-1, c.size)
    h = np.ascontiguousarray(h, dtype=float)
    m, n = G.shape
    ncol = n + 2 * m

    lo_all = np.zeros(ncol)
    hi_all = np.full(ncol, np.inf)
    lo_all[:n] = lo
    hi_all[:n] = hi
    x = np.zeros(ncol)
    x[:n] = lo
    at_upper = np.zeros(ncol, dtype=bool)
    is_basic = np.zeros(ncol, dtype=bool)

    r = h - G @ x[:n]
    T = np.zeros((m, ncol))
    xb = np.empty(m)
    basis = np.empty(m, dtype=np.intp)
    cost1 = np.zeros(ncol)
    for i in range(m):
        art = n + m + i
        # row i: G_i y - s_i + a_i = h_i
        if r[i] <= 0.0:
            sign = -1.0
            basis[i] = n + i
            xb[i] = -r[i]
            hi_all[art] = 0.0
        else:
            sign = 1.0
            basis[i] = art
            xb[i] = r[i]
            cost1[art] = 1.0
        T[i, :n] = sign * G[i]
        T[i, n + i] = -sign
        T[i, art] = sign
        is_basic[basis[i]] = True
        x[basis[i]] = xb[i]

    status, it1 = _run_phase(
        T, xb, basis, x, at_upper, is_basic, lo_all, hi_all, cost1, tol, max_iter
    )
    x[basis] = xb
    if status != STATUS_OPTIMAL:
        return status, x[:n].copy(), np.zeros(m), it1
    infeas = float(np.sum(x[n + m:]))
    if infeas > tol * max(1.0, float(np.max(np.abs(h), initial=0.0))) * 10:
        return STATUS_INFEASIBLE, x[:n].copy(), np.zeros(m), it1
    hi_all[n + m:] = 0.0
    for i in range(m):
        b = basis[i]
        if b >= n + m:
            xb[i] = 0.0
    cost2 = np.zeros(ncol)
    cost2[:n] = c
    status, it2 = _run_phase(
        T, xb, basis, x, at_upper, is_basic, lo_all, hi_all, cost2, tol, max_iter - it1
    )
    x[basis] = xb
    duals = cost2[basis] @ T[:, n + m:]
    return status, x[:n].copy(), duals, it1 + it2


def radical_inverse(indices, base):
    """Van der Corput radical inverse of nonnegative integers in ``base``."""
    indices = np.asarray(indices, dtype=np.int64)
    out = np.empty(indices.shape, dtype=float)
    flat_in = indices.ravel()
    flat_out = out.ravel()
    for k in range(flat_in.size):
        i = int(flat_in[k])
        f = 1.0
        v = 0.0
        while i > 0:
            f /= base
            v += f * (i % base)
            i //= base
        flat_out[k] = v
    return out
