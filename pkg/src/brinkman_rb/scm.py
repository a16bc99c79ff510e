"""Successive constraint method for the coercivity and continuity constants.

Coercivity: ``alpha(xi) = min_v a(v, v; xi) / |v|_V^2`` is bounded below by
a small LP over the box of affine Rayleigh quotients cut by constraints
from exactly solved neighbours.  Continuity mirrors this with maximization
and yields a certified upper bound on ``gamma(xi)``.  The inf-sup constant
``beta`` does not depend on the parameter and is computed once.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .fem import AssembledOperators
from .linalg import (SPD, EigenNoConvergence, Factorization, LinearProgram,
                     eig_largest_generalized, eig_smallest_generalized, lp_solve)
from .parallel import chunks, pmap
from .params import AffineDecomposition

log = logging.getLogger(__name__)

COERCIVITY = "coercivity"
CONTINUITY = "continuity"
MODES = (COERCIVITY, CONTINUITY)
FORMAT_VERSION = 1


@dataclass
class SCMConfig:
    M_E: int = 100
    M_P: int = 100
    tol: float = 0.1
    n_candidates: int = 50000
    seed: int = 0
    max_iter: int = 500

    def __post_init__(self):
        if self.M_E < 0 or self.M_P < 0:
            raise ValueError("M_E and M_P must be nonnegative")
        if not 0.0 < self.tol <= 1.0:
            raise ValueError("SCM tolerance must lie in (0, 1]")


# ---------------------------------------------------------------------------
# eigenvalue problems


def compute_beta(ops: AssembledOperators, tol=1e-10, max_iter=1000):
    """Inf-sup constant ``sqrt(lambda_min(B M_V^{-1} B^T, M_Q))``."""
    mv = ops.factor_M_V()
    n = ops.n_p
    schur = spla.LinearOperator((n, n), matvec=lambda q: ops.B @ mv.solve(ops.B.T @ q),
                                dtype=float)
    lam, _ = eig_smallest_generalized(schur, ops.M_Q, ops.factor_M_Q(), max_iter, tol)
    if lam <= 0:
        raise EigenNoConvergence("inf-sup eigenvalue is not positive", lam)
    return float(np.sqrt(lam))


def compute_box(ops: AssembledOperators, tol=1e-10):
    """``(lo, hi)`` of every affine Rayleigh quotient ``a_i(v,v) / |v|_V^2``.

    The Stokes term equals ``nu (.,.)_V`` so its interval is ``[nu, nu]``.
    A Darcy block with an all-zero row is singular, so its minimum is 0.
    """
    mats = ops.affine_matrices
    lo = np.zeros(len(mats))
    hi = np.zeros(len(mats))
    lo[0] = hi[0] = ops.viscosity
    mv = ops.factor_M_V()
    for i, Ai in enumerate(mats[1:], start=1):
        hi[i], _ = eig_largest_generalized(Ai, ops.M_V, mv, tol=tol, method="negate")
        if np.any(np.diff(Ai.indptr) == 0):
            lo[i] = 0.0
        else:
            lo[i], _ = eig_smallest_generalized(Ai, ops.M_V, Factorization(Ai, SPD), tol=tol)
    return lo, hi


def exact_constant(ops: AssembledOperators, dec: AffineDecomposition, xi, mode=COERCIVITY,
                   tol=1e-10):
    """Exact ``alpha(xi)`` or ``gamma(xi)`` and the Rayleigh-quotient vertex ``y'``."""
    A, _ = dec.assemble_at(ops, xi)
    if mode == COERCIVITY:
        lam, x = eig_smallest_generalized(A, ops.M_V, Factorization(A, SPD), tol=tol)
    elif mode == CONTINUITY:
        lam, x = eig_largest_generalized(A, ops.M_V, ops.factor_M_V(), tol=tol)
    else:
        raise ValueError(f"unknown SCM mode {mode!r}")
    x = x / np.sqrt(x @ (ops.M_V @ x))
    y = np.array([x @ (Ai @ x) for Ai in ops.affine_matrices])
    return float(lam), y


# ---------------------------------------------------------------------------
# bounds


@dataclass
class SCMData:
    mode: str
    box_lo: np.ndarray
    box_hi: np.ndarray
    domain_lo: np.ndarray  # parameter box, for the neighbour metric
    domain_hi: np.ndarray
    M_E: int
    M_P: int
    exact_xi: np.ndarray = None  # (n_E, M)
    exact_value: np.ndarray = None
    y_ub: np.ndarray = None  # (n_E, n_A)
    pool_xi: np.ndarray = None  # Xi_P
    pool_bound: np.ndarray = None  # stored LB (coercivity) or UB (continuity)
    trace: list = field(default_factory=list)  # (iteration, max indicator)

    def __post_init__(self):
        M = len(self.domain_lo)
        n_A = len(self.box_lo)
        if self.exact_xi is None:
            self.exact_xi = np.zeros((0, M))
            self.exact_value = np.zeros(0)
            self.y_ub = np.zeros((0, n_A))
        if self.pool_xi is None:
            self.pool_xi = np.zeros((0, M))
            self.pool_bound = np.zeros(0)

    @property
    def n_exact(self):
        return len(self.exact_value)

    def unit(self, xi):
        w = self.domain_hi - self.domain_lo
        w = np.where(w > 0, w, 1.0)
        return (np.asarray(xi, float) - self.domain_lo) / w

    def add_exact(self, xi, value, y):
        self.exact_xi = np.vstack([self.exact_xi, xi])
        self.exact_value = np.append(self.exact_value, value)
        self.y_ub = np.vstack([self.y_ub, y])

    # -- persistence --------------------------------------------------------

    def save(self, path):
        meta = {"version": FORMAT_VERSION, "mode": self.mode, "M_E": self.M_E,
                "M_P": self.M_P, "trace": self.trace}
        np.savez(path, meta=json.dumps(meta), box_lo=self.box_lo, box_hi=self.box_hi,
                 domain_lo=self.domain_lo, domain_hi=self.domain_hi,
                 exact_xi=self.exact_xi, exact_value=self.exact_value, y_ub=self.y_ub,
                 pool_xi=self.pool_xi, pool_bound=self.pool_bound)

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("version") != FORMAT_VERSION:
                raise ValueError(f"unsupported SCM file version {meta.get('version')}")
            arrays = {k: z[k] for k in z.files if k != "meta"}
        return cls(mode=meta["mode"], M_E=meta["M_E"], M_P=meta["M_P"],
                   trace=[tuple(t) for t in meta["trace"]], **arrays)


def _nearest(points_unit, centre_unit, k):
    if k <= 0 or len(points_unit) == 0:
        return np.zeros(0, dtype=int)
    d = np.sum((points_unit - centre_unit) ** 2, axis=1)
    if k >= len(d):
        return np.argsort(d, kind="stable")
    idx = np.argpartition(d, k - 1)[:k]
    return idx[np.argsort(d[idx], kind="stable")]


def _lp_bound(data: SCMData, theta, theta_rows, rhs):
    """Coercivity: min theta.y s.t. rows.y >= rhs.  Continuity: max, rows.y <= rhs.

    The value is the weak-duality bound of the simplex multipliers, which
    stays on the safe side when the primal vertex is inexact.
    """
    if data.mode == COERCIVITY:
        lp = LinearProgram(theta, theta_rows, rhs, data.box_lo, data.box_hi)
        return lp_solve(lp).dual_bound
    lp = LinearProgram(-theta, -theta_rows, -rhs, data.box_lo, data.box_hi)
    return -lp_solve(lp).dual_bound


def _vertex_bound(data: SCMData, theta):
    if data.n_exact == 0:
        return np.inf if data.mode == COERCIVITY else 0.0
    vals = data.y_ub @ theta
    return float(vals.min() if data.mode == COERCIVITY else vals.max())


def _indicator(data: SCMData, lp_val, vertex_val):
    if data.mode == COERCIVITY:
        if not np.isfinite(vertex_val) or vertex_val <= 0:
            return 1.0
        eta = 1.0 - lp_val / vertex_val
    else:
        if lp_val <= 0 or not np.isfinite(lp_val):
            return 1.0
        eta = 1.0 - vertex_val / lp_val
    return float(min(1.0, max(0.0, eta)))


def scm_bound(xi, data: SCMData, dec: AffineDecomposition, exclude_pool=None):
    """Certified bound and gap indicator at ``xi``.

    Coercivity returns ``(alpha_LB, eta)``, continuity ``(gamma_UB, eta)``.
    ``exclude_pool`` drops one pool index from the candidate constraints.
    """
    xi = np.asarray(xi, float)
    theta = dec.theta_A(xi, check=False)
    u = data.unit(xi)
    rows, rhs = [], []
    ie = _nearest(data.unit(data.exact_xi), u, data.M_E)
    if ie.size:
        rows.append(dec.theta_A_batch(data.exact_xi[ie]))
        rhs.append(data.exact_value[ie])
    if data.M_P > 0 and len(data.pool_xi):
        pool_unit = data.unit(data.pool_xi)
        ip = _nearest(pool_unit, u, data.M_P + (exclude_pool is not None))
        if exclude_pool is not None:
            ip = ip[ip != exclude_pool][: data.M_P]
        b = data.pool_bound[ip]
        ok = np.isfinite(b)
        if data.mode == COERCIVITY:
            ok &= b > 0  # a zero lower bound is implied by the box
        if np.any(ok):
            rows.append(dec.theta_A_batch(data.pool_xi[ip[ok]]))
            rhs.append(b[ok])
    n_A = theta.size
    G = np.vstack(rows) if rows else np.zeros((0, n_A))
    h = np.concatenate(rhs) if rhs else np.zeros(0)
    lp_val = _lp_bound(data, theta, G, h)
    vertex = _vertex_bound(data, theta)
    # exact points: tighten to the known value
    hit = np.flatnonzero(np.all(data.exact_xi == xi, axis=1)) if data.n_exact else []
    if len(hit):
        exact = data.exact_value[hit[0]]
        lp_val = min(lp_val, exact) if data.mode == COERCIVITY else max(lp_val, exact)
    return float(lp_val), _indicator(data, lp_val, vertex)


def vertex_bound(xi, data: SCMData, dec: AffineDecomposition):
    """Opposite-side bound from the stored vertices: ``alpha_UB`` or ``gamma_LB``."""
    return _vertex_bound(data, dec.theta_A(np.asarray(xi, float), check=False))


def _sweep(data: SCMData, dec, threads=None):
    """Refresh bounds and indicators of every pool point against a snapshot."""
    n = len(data.pool_xi)

    def work(rng):
        s, e = rng
        out = np.empty((e - s, 2))
        for j in range(s, e):
            out[j - s] = scm_bound(data.pool_xi[j], data, dec)
        return out

    res = pmap(work, chunks(n, 64), threads)
    res = np.vstack(res) if res else np.zeros((0, 2))
    return res[:, 0], res[:, 1]


# ---------------------------------------------------------------------------
# training


def new_data(ops, dec, cfg: SCMConfig, mode, box=None) -> SCMData:
    lo, hi = box if box is not None else compute_box(ops)
    return SCMData(mode=mode, box_lo=lo, box_hi=hi, domain_lo=dec.box.lower,
                   domain_hi=dec.box.upper, M_E=cfg.M_E, M_P=cfg.M_P)


def scm_train(candidates, cfg: SCMConfig, mode, ops: AssembledOperators,
              dec: AffineDecomposition, box=None, threads=None) -> SCMData:
    """Greedy SCM training over ``candidates`` (rows are parameter vectors).

    The first exact solve is at the candidate nearest the centroid.  Each
    iteration refreshes every pool bound, stops when the worst indicator is
    below ``cfg.tol`` or the pool is empty, and otherwise moves the worst
    point (lowest index on ties) from the pool to the exact set.
    """
    if mode not in MODES:
        raise ValueError(f"unknown SCM mode {mode!r}")
    candidates = np.atleast_2d(np.asarray(candidates, float))
    if len(candidates) == 0:
        raise ValueError("SCM training needs at least one candidate")
    data = new_data(ops, dec, cfg, mode, box)
    unit = data.unit(candidates)
    pick = int(_nearest(unit, unit.mean(axis=0), 1)[0])
    data.pool_xi = candidates.copy()
    data.pool_bound = np.full(len(candidates), 0.0 if mode == COERCIVITY else np.inf)
    for it in range(1, cfg.max_iter + 1):
        value, y = exact_constant(ops, dec, data.pool_xi[pick], mode)
        data.add_exact(data.pool_xi[pick], value, y)
        keep = np.ones(len(data.pool_xi), dtype=bool)
        keep[pick] = False
        data.pool_xi = data.pool_xi[keep]
        data.pool_bound = data.pool_bound[keep]
        if len(data.pool_xi) == 0:
            data.trace.append((it, 0.0))
            return data
        bounds, eta = _sweep(data, dec, threads)
        data.pool_bound = bounds
        worst = float(eta.max())
        data.trace.append((it, worst))
        log.info("SCM %s iteration %d: max indicator %.4g", mode, it, worst)
        if worst < cfg.tol:
            return data
        pick = int(np.argmax(eta))  # first maximum = lowest index
    raise RuntimeError(f"SCM {mode} training did not reach tolerance {cfg.tol} "
                       f"in {cfg.max_iter} iterations (max indicator {worst:.3g})")


def write_trace(data: SCMData, path):
    with open(path, "w") as fh:
        fh.write("iteration,max_indicator\n")
        for it, eta in data.trace:
            fh.write(f"{it},{eta:.17g}\n")


@dataclass
class StabilityBounds:
    """Trained SCM pair plus ``beta``: what the error estimator needs online."""

    coercivity: SCMData
    continuity: SCMData
    beta: float
    dec: AffineDecomposition

    def alpha_lb(self, xi):
        return scm_bound(xi, self.coercivity, self.dec)[0]

    def gamma_ub(self, xi):
        return scm_bound(xi, self.continuity, self.dec)[0]

    def constants(self, xi):
        return self.alpha_lb(xi), self.gamma_ub(xi), self.beta
