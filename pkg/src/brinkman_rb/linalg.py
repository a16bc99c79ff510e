"""Numeric kernel: direct factorizations, extremal generalized eigenpairs,
small linear programs and Gram-weighted orthonormalization.

Sparse matrices are ``scipy.sparse.csr_matrix`` throughout.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels

log = logging.getLogger(__name__)

SPD = "symmetric-positive-definite"
INDEFINITE = "symmetric-indefinite"


class SingularMatrixError(RuntimeError):
    """Raised when a direct factorization meets a (numerically) zero pivot."""


class EigenNoConvergence(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (last relative residual {residual:.3e})")
        self.residual = residual


class NotPositiveDefiniteError(ValueError):
    pass


class LPInfeasibleError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# direct solves


def _as_csr(m):
    if sp.issparse(m):
        return sp.csr_matrix(m)
    return sp.csr_matrix(np.asarray(m, dtype=float))


def finalize(m):
    """Canonical CSR: sorted indices, duplicates summed, explicit zeros removed."""
    m = sp.csr_matrix(m, dtype=float)
    m.sum_duplicates()
    m.eliminate_zeros()
    m.sort_indices()
    return m


def is_symmetric(m, tol=0.0):
    m = _as_csr(m)
    d = m - m.T
    if d.nnz == 0:
        return True
    return float(abs(d).max()) <= tol * max(float(abs(m).max()), 1.0)


class Factorization:
    """Sparse LU (SuperLU) of a square matrix, immutable after construction.

    For ``kind=SPD`` SuperLU runs in symmetric mode (diagonal pivoting on a
    symmetric ordering), which is a Cholesky-equivalent factorization.
    """

    def __init__(self, m, kind=INDEFINITE, pivot_tol=1e-14):
        m = _as_csr(m)
        if m.shape[0] != m.shape[1]:
            raise ValueError(f"shape mismatch: matrix is {m.shape[0]}x{m.shape[1]}")
        if kind not in (SPD, INDEFINITE):
            raise ValueError(f"unknown factorization kind {kind!r}")
        if kind == SPD and not is_symmetric(m, 1e-12):
            raise ValueError("SPD factorization requested for a non-symmetric matrix")
        self.matrix = m
        self.kind = kind
        self.symmetric = kind == SPD or is_symmetric(m)
        opts = {}
        if kind == SPD:
            opts = dict(
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
        try:
            self._lu = spla.splu(m.tocsc(), **opts)
        except RuntimeError as exc:
            raise SingularMatrixError(str(exc)) from exc
        piv = np.abs(self._lu.U.diagonal())
        if piv.size and (piv.min() <= pivot_tol * piv.max() or not np.isfinite(piv).all()):
            raise SingularMatrixError(
                f"numerically zero pivot ({piv.min():.3e} vs max {piv.max():.3e})"
            )
        if kind == SPD and np.any(self._lu.U.diagonal() * self._lu.L.diagonal() <= 0):
            raise NotPositiveDefiniteError("matrix is not positive definite")

    @property
    def shape(self):
        return self.matrix.shape

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.shape[0]:
            raise ValueError(f"shape mismatch: rhs has {b.shape[0]} rows, need {self.shape[0]}")
        return self._lu.solve(b)

    __call__ = solve

    def as_operator(self):
        return spla.LinearOperator(self.shape, matvec=self.solve, matmat=self.solve)


def factorize(m, kind=INDEFINITE):
    return Factorization(m, kind)


# ---------------------------------------------------------------------------
# generalized symmetric eigenproblems


def _apply(op, x):
    if callable(op) and not hasattr(op, "dot") and not isinstance(op, np.ndarray):
        return op(x)
    return op @ x


def _precondition(prec, r):
    if prec is None:
        return r.copy()
    if isinstance(prec, Factorization):
        return prec.solve(r)
    return _apply(prec, r)


def _rayleigh_ritz(S, AS, MS, drop=1e-12):
    """Smallest Ritz pair of the pencil restricted to span(S)."""
    gm = S.T @ MS
    gm = 0.5 * (gm + gm.T)
    w, v = np.linalg.eigh(gm)
    keep = w > drop * w.max()
    tr = v[:, keep] / np.sqrt(w[keep])
    ga = tr.T @ (S.T @ AS) @ tr
    ga = 0.5 * (ga + ga.T)
    lam, y = np.linalg.eigh(ga)
    return lam[0], tr @ y[:, 0]


def _lobpcg_smallest(a, m, prec, x0, max_iter, tol):
    x = x0 / np.sqrt(x0 @ _apply(m, x0))
    ax = _apply(a, x)
    mx = _apply(m, x)
    lam = float(x @ ax)
    p = ap = mp = None
    res = np.inf
    for it in range(max_iter):
        r = ax - lam * mx
        scale = max(np.linalg.norm(ax), abs(lam) * np.linalg.norm(mx))
        res = np.linalg.norm(r) / scale if scale > 0 else 0.0
        if res <= tol:
            return lam, x, res, it, True
        w = _precondition(prec, r)
        # M-orthogonalize the correction against x
        w -= x * (mx @ w)
        nw = np.sqrt(abs(w @ _apply(m, w)))
        if nw == 0 or not np.isfinite(nw):
            break
        w /= nw
        aw = _apply(a, w)
        mw = _apply(m, w)
        if p is None:
            S, AS, MS = (np.column_stack(t) for t in ((x, w), (ax, aw), (mx, mw)))
        else:
            S, AS, MS = (
                np.column_stack(t) for t in ((x, w, p), (ax, aw, ap), (mx, mw, mp))
            )
        lam_new, c = _rayleigh_ritz(S, AS, MS)
        x_new = S @ c
        ax_new = AS @ c
        mx_new = MS @ c
        # search direction: the part of the update outside span(x)
        cp = c.copy()
        cp[0] = 0.0
        p = S @ cp
        ap = AS @ cp
        mp = MS @ cp
        npn = np.sqrt(abs(p @ mp))
        if npn > 0:
            p, ap, mp = p / npn, ap / npn, mp / npn
        else:
            p = ap = mp = None
        nrm = np.sqrt(x_new @ mx_new)
        x, ax, mx = x_new / nrm, ax_new / nrm, mx_new / nrm
        lam = float(x @ ax)
    return lam, x, res, max_iter, False


def _inverse_iteration(a, m, x, shift_solver, max_iter, tol):
    """Shift-and-invert power iteration (shift folded into ``shift_solver``)."""
    res = np.inf
    lam = np.nan
    for _ in range(max_iter):
        y = shift_solver(_apply(m, x))
        x = y / np.sqrt(y @ _apply(m, y))
        ax = _apply(a, x)
        mx = _apply(m, x)
        lam = float(x @ ax)
        scale = max(np.linalg.norm(ax), abs(lam) * np.linalg.norm(mx))
        res = np.linalg.norm(ax - lam * mx) / scale if scale > 0 else 0.0
        if res <= tol:
            break
    return lam, x, res


def _check_mass(m, n, rng):
    for _ in range(3):
        v = rng.standard_normal(n)
        if v @ _apply(m, v) <= 0:
            raise NotPositiveDefiniteError("mass matrix of the pencil is not positive definite")


def eig_smallest_generalized(a, m, preconditioner=None, max_iter=1000, tol=1e-10,
                             seed=0, x0=None, fallback=True):
    """Smallest eigenpair of ``a x = lam m x`` with ``a, m`` symmetric, ``m`` SPD.

    Block-size-one LOBPCG.  If it has not reached ``tol`` after ``max_iter``
    iterations, a shift-and-invert power iteration (shift 0) refines the last
    iterate when ``a`` can be factorized.

    Returns ``(lam, x)`` with ``x @ m @ x == 1``.
    """
    n = a.shape[0]
    if a.shape != m.shape or a.shape[0] != a.shape[1]:
        raise ValueError("pencil matrices must be square and of equal size")
    rng = np.random.default_rng(seed)
    _check_mass(m, n, rng)
    if x0 is None:
        x0 = rng.standard_normal(n)
    lam, x, res, _, ok = _lobpcg_smallest(a, m, preconditioner, x0, max_iter, tol)
    if not ok and fallback and sp.issparse(a):
        try:
            fac = preconditioner if isinstance(preconditioner, Factorization) else Factorization(a)
            lam2, x2, res2 = _inverse_iteration(a, m, x, fac.solve, max_iter, tol)
            if res2 < res:
                lam, x, res = lam2, x2, res2
        except SingularMatrixError:
            pass
    if res > tol:
        raise EigenNoConvergence("smallest generalized eigenpair did not converge", res)
    if x[np.argmax(np.abs(x))] < 0:
        x = -x
    return lam, x


def eig_largest_generalized(a, m, preconditioner=None, max_iter=1000, tol=1e-10,
                            seed=0, method="swap"):
    """Largest eigenpair of ``a x = lam m x``.

    ``method="swap"`` solves ``m x = mu a x`` for the smallest ``mu`` and
    returns ``1/mu`` (``a`` must be positive definite; ``preconditioner``
    then approximates ``m^{-1}``).  ``method="negate"`` takes the smallest
    eigenpair of ``(-a, m)`` and works for semidefinite ``a``.
    """
    if method == "swap":
        mu, x = eig_smallest_generalized(m, a, preconditioner, max_iter, tol, seed,
                                         fallback=False)
        if mu <= 0:
            raise NotPositiveDefiniteError("swapped pencil requires positive definite a")
        x = x / np.sqrt(mu)  # a-normalized -> m-normalized
        return 1.0 / mu, x
    if method == "negate":
        neg = -a if sp.issparse(a) or isinstance(a, np.ndarray) else -spla.aslinearoperator(a)
        lam, x = eig_smallest_generalized(neg, m, preconditioner, max_iter, tol, seed,
                                          fallback=False)
        return -lam, x
    raise ValueError(f"unknown method {method!r}")


def dense_generalized_spectrum(a, m):
    """Full spectrum of the pencil by dense LAPACK (test oracle)."""
    ad = a.toarray() if sp.issparse(a) else np.asarray(a)
    md = m.toarray() if sp.issparse(m) else np.asarray(m)
    return scipy.linalg.eigh(ad, md, eigvals_only=True)


# ---------------------------------------------------------------------------
# linear programming


@dataclass
class LinearProgram:
    """``min c @ y`` subject to ``G @ y >= h`` and ``lower <= y <= upper``."""

    c: np.ndarray
    G: np.ndarray = None
    h: np.ndarray = None
    lower: np.ndarray = None
    upper: np.ndarray = None

    def __post_init__(self):
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float))
        n = self.c.size
        if n < 1:
            raise ValueError("linear program needs at least one variable")
        if self.G is None:
            self.G = np.zeros((0, n))
            self.h = np.zeros(0)
        self.G = np.asarray(self.G, dtype=float).reshape(-1, n)
        self.h = np.atleast_1d(np.asarray(self.h, dtype=float))
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (n,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (n,)).copy()
        if self.h.size != self.G.shape[0]:
            raise ValueError("constraint matrix and right-hand side disagree")
        if np.any(self.lower > self.upper):
            raise ValueError("box bounds have lower > upper")
        data = (self.c, self.G, self.h, self.lower, self.upper)
        if not all(np.isfinite(d).all() for d in data):
            raise ValueError("linear program data must be finite")


@dataclass
class LPSolution:
    value: float
    y: np.ndarray
    duals: np.ndarray
    n_iter: int
    kkt_residual: float = field(default=0.0)
    dual_bound: float = field(default=-np.inf)


def dual_bound(p: LinearProgram, duals):
    """Weak-duality lower bound on the optimum of ``p`` for any multipliers.

    Negative multipliers are clipped to zero, so the result never exceeds the
    true minimum whatever the accuracy of ``duals``.
    """
    lam = np.maximum(np.asarray(duals, dtype=float), 0.0)
    red = p.c - p.G.T @ lam
    return float(lam @ p.h + np.sum(np.minimum(red * p.lower, red * p.upper)))


def kkt_residual(p: LinearProgram, y, duals):
    """Scaled optimality residual: primal/dual feasibility + complementarity."""
    slack = p.G @ y - p.h
    red = p.c - p.G.T @ duals
    width = np.maximum(p.upper - p.lower, 1e-300)
    scale = max(1.0, float(np.max(np.abs(p.c) * width)))
    rs = [np.maximum(p.lower - y, 0) / width, np.maximum(y - p.upper, 0) / width]
    if slack.size:
        gscale = np.maximum(np.abs(p.G) @ width, 1e-300)
        rs.append(np.maximum(-slack, 0) / gscale)
        rs.append(np.maximum(-duals, 0) * gscale / scale)
        rs.append(np.abs(duals * slack) / scale)
    at_lo = y - p.lower
    at_hi = p.upper - y
    # a positive reduced cost is only allowed at the lower bound, negative at the upper
    rs.append(np.maximum(red, 0) * at_lo / scale)
    rs.append(np.maximum(-red, 0) * at_hi / scale)
    return float(max(np.max(r, initial=0.0) for r in rs))


def lp_solve(p: LinearProgram, tol=1e-10, max_iter=20000) -> LPSolution:
    """Solve ``p`` after scaling every variable to [0, 1] and every row to unit max."""
    free = p.upper > p.lower
    width = np.where(free, p.upper - p.lower, 0.0)
    const = float(p.c @ p.lower)
    c_s = p.c[free] * width[free]
    G_s = p.G[:, free] * width[free]
    h_s = p.h - p.G @ p.lower
    rscale = np.max(np.abs(G_s), axis=1, initial=0.0) if G_s.size else np.zeros(p.G.shape[0])
    zero_rows = rscale == 0
    bad = zero_rows & (h_s > tol * np.maximum(1.0, np.abs(p.h)))
    if np.any(bad):
        raise LPInfeasibleError("constraint unsatisfiable inside the box")
    rows = ~zero_rows
    G_s = G_s[rows] / rscale[rows, None]
    h_s = h_s[rows] / rscale[rows]
    cscale = float(np.max(np.abs(c_s), initial=0.0))
    if cscale == 0.0:
        cscale = 1.0
    y = p.lower.copy()
    duals = np.zeros(p.G.shape[0])
    n_iter = 0
    if c_s.size:
        status, z, d_s, n_iter = _kernels.bounded_simplex(
            c_s / cscale, G_s, h_s, np.zeros(c_s.size), np.ones(c_s.size), tol, max_iter
        )
        if status == _kernels.STATUS_INFEASIBLE:
            raise LPInfeasibleError("box contradicts the inequality constraints")
        if status != _kernels.STATUS_OPTIMAL:
            raise RuntimeError(f"simplex terminated with status {status}")
        y[free] = p.lower[free] + width[free] * np.clip(z, 0.0, 1.0)
        duals[rows] = d_s * cscale / rscale[rows]
    elif np.any(p.G @ y < p.h - tol * np.maximum(1.0, np.abs(p.h))):
        raise LPInfeasibleError("fixed variables violate the constraints")
    value = float(p.c @ y)
    if not c_s.size:
        value = const
    sol = LPSolution(value, y, duals, n_iter)
    sol.kkt_residual = kkt_residual(p, y, duals)
    sol.dual_bound = min(value, dual_bound(p, duals))
    return sol


def lp_minimize(p: LinearProgram):
    """Return ``(value, y)`` of the optimum of ``p``."""
    sol = lp_solve(p)
    return sol.value, sol.y


def enumerate_vertices_min(p: LinearProgram, tol=1e-9):
    """Brute-force LP oracle: minimum of ``c @ y`` over all basic feasible points.

    Every vertex is the solution of n active constraints chosen among the
    rows of G and the 2n bound constraints.  Exponential; only for tests.
    """
    from itertools import combinations

    n = p.c.size
    rows = [(p.G[i], p.h[i]) for i in range(p.G.shape[0])]
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        rows.append((e, p.lower[i]))
        rows.append((e, p.upper[i]))
    best = np.inf
    best_y = None
    for combo in combinations(range(len(rows)), n):
        A = np.array([rows[k][0] for k in combo])
        b = np.array([rows[k][1] for k in combo])
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        y = np.linalg.solve(A, b)
        if np.any(y < p.lower - tol) or np.any(y > p.upper + tol):
            continue
        if p.G.size and np.any(p.G @ y < p.h - tol):
            continue
        v = float(p.c @ y)
        if v < best:
            best, best_y = v, y
    return best, best_y


# ---------------------------------------------------------------------------
# Gram-Schmidt


def orthonormalize_append(basis, new_columns, gram, drop_tol=1e-10):
    """Append ``new_columns`` to a ``gram``-orthonormal ``basis``.

    Classical Gram-Schmidt with one re-orthogonalization pass.  Columns whose
    projected gram-norm falls below ``drop_tol`` times their original norm
    are discarded.

    Returns
    -------
    basis : ndarray
        The extended basis (a new array).
    kept : ndarray of bool
        One flag per new column.
    """
    cols = np.asarray(new_columns, dtype=float)
    if cols.ndim == 1:
        cols = cols[:, None]
    n = cols.shape[0]
    B = np.zeros((n, 0)) if basis is None else np.asarray(basis, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    out = [B]
    kept = np.zeros(cols.shape[1], dtype=bool)
    for k in range(cols.shape[1]):
        v = cols[:, k].copy()
        norm0 = np.sqrt(max(v @ (gram @ v), 0.0))
        if norm0 == 0.0:
            continue
        cur = np.hstack(out)
        for _ in range(2):
            if cur.shape[1]:
                v -= cur @ (cur.T @ (gram @ v))
        nv = np.sqrt(max(v @ (gram @ v), 0.0))
        if nv < drop_tol * norm0:
            continue
        out.append((v / nv)[:, None])
        kept[k] = True
    return np.hstack(out), kept
