"""Certified reduced basis for the parametrized saddle-point problem.

The velocity space holds snapshots and their supremizers, so it always has
twice the pressure dimension.  Offline data are built incrementally per
extension; online solves and error estimates touch only reduced arrays.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .anova import AnovaGrid, AnovaState, gram_norm, next_level_directions
from .fem import AssembledOperators, HighFidelitySolver
from .linalg import orthonormalize_append
from .params import AffineDecomposition

log = logging.getLogger(__name__)

DEFAULT_MEMORY_CAP = 2 * 1024**3  # bytes of cached offline arrays


class StagnationError(RuntimeError):
    pass


class OfflineMemoryError(MemoryError):
    pass


class NegativeDualNormError(ArithmeticError):
    pass


def supremizer(ops: AssembledOperators, p_vec):
    """``M_V^{-1} B^T p``: the V-Riesz representative of ``b(., p)``."""
    return ops.factor_M_V().solve(ops.B.T @ np.asarray(p_vec, float))


@dataclass
class ReducedBasis:
    V: np.ndarray
    Q: np.ndarray
    snapshots: list = field(default_factory=list)  # parameters, in order of addition

    @classmethod
    def empty(cls, ops: AssembledOperators):
        return cls(np.zeros((ops.n_u, 0)), np.zeros((ops.n_p, 0)))

    @property
    def N_V(self):
        return self.V.shape[1]

    @property
    def N_Q(self):
        return self.Q.shape[1]

    def extend(self, ops: AssembledOperators, u, p, xi=None, drop_tol=1e-10):
        """Append ``u``, its pressure supremizer and ``p``.

        The three columns are rejected together if Gram-Schmidt drops any of
        them, so that ``N_V == 2 N_Q`` always holds.  Returns the number of
        velocity columns added (0 or 2).
        """
        Tp = supremizer(ops, p)
        V, kv = orthonormalize_append(self.V, np.column_stack([u, Tp]), ops.M_V, drop_tol)
        Q, kq = orthonormalize_append(self.Q, p, ops.M_Q, drop_tol)
        if not (kv.all() and kq.all()):
            log.warning("snapshot rejected: dependent on the current basis")
            return 0
        self.V, self.Q = V, Q
        self.snapshots.append(None if xi is None else np.asarray(xi, float).copy())
        return 2

    def lift(self, u_N, p_N):
        return self.V @ u_N, self.Q @ p_N


# ---------------------------------------------------------------------------
# offline data


def _pad(a, shape):
    out = np.zeros(shape)
    out[tuple(slice(0, s) for s in a.shape)] = a
    return out


class RieszFactor:
    """Upper-triangular ``R`` with ``W' G^{-1} W = R' R`` for residual columns ``W``.

    The Riesz representers ``G^{-1} w`` are orthonormalized in the ``G`` inner
    product with two classical Gram-Schmidt passes, so ``|sum_k c_k w_k|_{G^{-1}}
    = |R c|``.  Evaluating the norm this way avoids squaring the cancellation
    between large affine pieces of a small residual.  With ``extended`` the
    representers, ``R`` and the online product are kept in long double, each
    Riesz solve getting two refinement steps against the long-double Gram.
    """

    drop_tol = 1e-13

    def __init__(self, gram, solver, extended=False):
        self.dtype = np.longdouble if extended else np.float64
        self.gram = gram.astype(self.dtype).tocsr() if extended else gram
        self.solver = solver
        self.Y = np.zeros((gram.shape[0], 0), dtype=self.dtype)
        self.R = np.zeros((0, 0), dtype=self.dtype)

    @property
    def size(self):
        return self.R.shape[0]

    def _riesz(self, w):
        z = self.solver.solve(np.asarray(w, float)).astype(self.dtype)
        if self.dtype is not np.float64:
            for _ in range(2):
                z += self.solver.solve(np.asarray(w - self.gram @ z, float))
        return z

    def append(self, W):
        W = np.asarray(W, self.dtype).reshape(self.gram.shape[0], -1)
        k0 = self.size
        R = np.zeros((k0 + W.shape[1],) * 2, dtype=self.dtype)
        R[:k0, :k0] = self.R
        Y = [self.Y]
        for c in range(W.shape[1]):
            z = self._riesz(W[:, c])
            nz0 = np.sqrt(max(z @ (self.gram @ z), 0.0))
            cur = np.hstack(Y)
            coef = np.zeros(cur.shape[1], dtype=self.dtype)
            for _ in range(2):
                h = cur.T @ (self.gram @ z)
                z = z - cur @ h
                coef += h
            nz = np.sqrt(max(z @ (self.gram @ z), 0.0))
            R[:cur.shape[1], k0 + c] = coef
            if nz > self.drop_tol * nz0:
                R[k0 + c, k0 + c] = nz
                Y.append((z / nz)[:, None])
            else:
                # numerically dependent (columns can outnumber dofs): keep Y orthonormal
                Y.append(np.zeros((z.size, 1), dtype=self.dtype))
        self.Y = np.hstack(Y)
        self.R = R
        return np.arange(k0, k0 + W.shape[1])

    def norms(self, coeffs):
        c = np.atleast_2d(coeffs).astype(self.dtype)
        return np.linalg.norm(c @ self.R.T, axis=1).astype(float)


@dataclass
class OfflineResidualData:
    """Reduced affine blocks and the residual dual-norm tensors.

    With ``D_ij = f_i' M_V^{-1} A_j V`` etc., ``F`` is stored as a 4-tensor
    ``F[i, a, j, b] = (V' A_i' M_V^{-1} A_j V)[a, b]``.
    """

    n_A: int
    n_f: int
    A_red: np.ndarray = None  # (n_A, N_V, N_V)
    B_red: np.ndarray = None  # (N_Q, N_V)
    f_red: np.ndarray = None  # (n_f, N_V)
    g_red: np.ndarray = None  # (N_Q,)
    C: np.ndarray = None
    D: np.ndarray = None  # (n_f, n_A, N_V)
    E: np.ndarray = None  # (n_f, N_Q)
    F: np.ndarray = None  # (n_A, N_V, n_A, N_V)
    G: np.ndarray = None  # (n_A, N_V, N_Q)
    H: np.ndarray = None
    R: float = 0.0
    S: np.ndarray = None
    T: np.ndarray = None
    memory_cap: int = DEFAULT_MEMORY_CAP
    method: str = "qr"  # or "expansion": the literal C..H quadratic form
    _qr1: RieszFactor = field(default=None, repr=False)
    _qr2: RieszFactor = field(default=None, repr=False)
    _B_x: object = field(default=None, repr=False)
    _pos_f: np.ndarray = field(default=None, repr=False)
    _pos_A: np.ndarray = field(default=None, repr=False)  # (n_A, N_V) columns of _qr1
    _pos_B: np.ndarray = field(default=None, repr=False)
    _pos2_V: np.ndarray = field(default=None, repr=False)
    _ZA: list = field(default=None, repr=False)  # M_V^{-1} A_j V
    _Zf: np.ndarray = field(default=None, repr=False)
    _yg: np.ndarray = field(default=None, repr=False)

    @property
    def N_V(self):
        return 0 if self.A_red is None else self.A_red.shape[1]

    @property
    def N_Q(self):
        return 0 if self.B_red is None else self.B_red.shape[0]

    @classmethod
    def initialize(cls, ops: AssembledOperators, memory_cap=DEFAULT_MEMORY_CAP, method="qr"):
        if method not in ("qr", "expansion"):
            raise ValueError(f"unknown dual-norm method {method!r}")
        n_A, n_f = ops.n_A, ops.n_f
        mv = ops.factor_M_V()
        Fm = np.column_stack(ops.f_components)
        Zf = mv.solve(Fm).reshape(ops.n_u, n_f)
        yg = ops.factor_M_Q().solve(ops.g)
        n_u = ops.n_u
        out = cls(n_A=n_A, n_f=n_f, memory_cap=memory_cap, method=method)
        out._qr1 = RieszFactor(ops.M_V, mv)
        # the constraint residual g - B u cancels to ~1e-7 |g| near convergence
        out._qr2 = RieszFactor(ops.M_Q, ops.factor_M_Q(), extended=True)
        out._B_x = ops.B.astype(np.longdouble).tocsr()
        out._pos_f = out._qr1.append(Fm)
        out._pos_A = np.zeros((n_A, 0), dtype=int)
        out._pos_B = np.zeros(0, dtype=int)
        out._qr2.append(ops.g)
        out._pos2_V = np.zeros(0, dtype=int)
        out._Zf = Zf
        out._yg = yg
        out._ZA = [np.zeros((n_u, 0)) for _ in range(n_A)]
        out.C = Fm.T @ Zf
        out.C = 0.5 * (out.C + out.C.T)
        out.R = float(ops.g @ yg)
        out._size_blocks(0, 0)
        return out

    def _size_blocks(self, N_V, N_Q):
        n_A, n_f = self.n_A, self.n_f
        shapes = dict(A_red=(n_A, N_V, N_V), B_red=(N_Q, N_V), f_red=(n_f, N_V),
                      g_red=(N_Q,), D=(n_f, n_A, N_V), E=(n_f, N_Q),
                      F=(n_A, N_V, n_A, N_V), G=(n_A, N_V, N_Q), H=(N_Q, N_Q),
                      S=(N_V,), T=(N_V, N_V))
        for name, shape in shapes.items():
            cur = getattr(self, name)
            setattr(self, name, np.zeros(shape) if cur is None else _pad(cur, shape))

    def nbytes(self, n_u, N_V):
        K = self.n_f + self.n_A * N_V + N_V // 2
        # long-double constraint factor, bounded with n_u >= n_p
        ext = 16 * (n_u * (1 + N_V) + (1 + N_V) ** 2)
        return 8 * (self.n_A**2 * N_V**2 + 2 * self.n_A * n_u * N_V + K * K) + ext

    def update(self, ops: AssembledOperators, rb: ReducedBasis):
        """Bring every block up to the current basis size (new columns only)."""
        old_V, old_Q = self.N_V, self.N_Q
        N_V, N_Q = rb.N_V, rb.N_Q
        if N_V == old_V and N_Q == old_Q:
            return self
        need = self.nbytes(ops.n_u, N_V)
        if need > self.memory_cap:
            raise OfflineMemoryError(
                f"offline data would need {need / 1e9:.2f} GB, above the cap of "
                f"{self.memory_cap / 1e9:.2f} GB")
        mv = ops.factor_M_V()
        mats = ops.affine_matrices
        V, Q = rb.V, rb.Q
        new_v = V[:, old_V:]
        self._size_blocks(N_V, N_Q)
        AV = [Ai @ V for Ai in mats]
        for j in range(self.n_A):
            z = mv.solve(AV[j][:, old_V:]).reshape(ops.n_u, -1)
            self._ZA[j] = np.hstack([self._ZA[j], z])
        BV = ops.B @ V
        BtQ = ops.B.T @ Q
        ZB = mv.solve(BtQ).reshape(ops.n_u, N_Q)
        Fm = np.column_stack(ops.f_components)
        for i in range(self.n_A):
            self.A_red[i] = V.T @ AV[i]
        self.A_red = 0.5 * (self.A_red + self.A_red.transpose(0, 2, 1))
        self.B_red = Q.T @ BV
        self.f_red = Fm.T @ V
        self.g_red = Q.T @ ops.g
        for j in range(self.n_A):
            self.D[:, j, :] = self._Zf.T @ AV[j]
        self.E = self._Zf.T @ BtQ
        # F: only the new columns b >= old_V need fresh products
        for i in range(self.n_A):
            for j in range(self.n_A):
                blk = AV[i].T @ self._ZA[j][:, old_V:]
                self.F[i, :, j, old_V:] = blk
                self.F[j, old_V:, i, :] = blk.T
        for i in range(self.n_A):
            self.G[i] = AV[i].T @ ZB
        self.H = BtQ.T @ ZB
        self.H = 0.5 * (self.H + self.H.T)
        self.S = self._yg @ BV
        mq = ops.factor_M_Q()
        Y = mq.solve(BV).reshape(ops.n_p, N_V)
        self.T = BV.T @ Y
        self.T = 0.5 * (self.T + self.T.T)
        # factorized residual Gram, new columns appended in a fixed order
        posA = [self._qr1.append(AV[j][:, old_V:]) for j in range(self.n_A)]
        self._pos_A = np.hstack([self._pos_A, np.array(posA).reshape(self.n_A, -1)])
        self._pos_B = np.concatenate([self._pos_B, self._qr1.append(BtQ[:, old_Q:])])
        BV_x = self._B_x @ V[:, old_V:].astype(np.longdouble)
        self._pos2_V = np.concatenate([self._pos2_V, self._qr2.append(BV_x)])
        del new_v
        return self

    # -- online ---------------------------------------------------------------

    def reduced_system(self, theta_A, theta_f):
        """Batched reduced saddle matrices ``(K, n, n)`` and right-hand sides."""
        tA = np.atleast_2d(theta_A)
        tf = np.atleast_2d(theta_f)
        K = len(tA)
        NV, NQ = self.N_V, self.N_Q
        n = NV + NQ
        mat = np.zeros((K, n, n))
        mat[:, :NV, :NV] = np.einsum("ki,iab->kab", tA, self.A_red)
        mat[:, :NV, NV:] = self.B_red.T
        mat[:, NV:, :NV] = self.B_red
        rhs = np.zeros((K, n))
        rhs[:, :NV] = tf @ self.f_red
        rhs[:, NV:] = self.g_red
        return mat, rhs

    def dual_norms(self, theta_A, theta_f, u_N, p_N, clamp_tol=1e-12):
        """``(|r1|_{V'}, |r2|_{Q'})`` for a batch of reduced solutions."""
        tA = np.atleast_2d(theta_A)
        tf = np.atleast_2d(theta_f)
        u = np.atleast_2d(u_N)
        p = np.atleast_2d(p_N)
        if self.method == "qr":
            return self._dual_norms_qr(tA, tf, u, p)
        return self._dual_norms_expansion(tA, tf, u, p, clamp_tol)

    def _dual_norms_qr(self, tA, tf, u, p):
        K = len(tA)
        c1 = np.zeros((K, self._qr1.size))
        c1[:, self._pos_f] = tf
        c1[:, self._pos_A.reshape(-1)] = -(tA[:, :, None] * u[:, None, :]).reshape(K, -1)
        c1[:, self._pos_B] = -p
        c2 = np.zeros((K, self._qr2.size))
        c2[:, 0] = 1.0
        c2[:, self._pos2_V] = -u
        return self._qr1.norms(c1), self._qr2.norms(c2)

    def _dual_norms_expansion(self, tA, tf, u, p, clamp_tol):
        K = len(tA)
        w = (tA[:, :, None] * u[:, None, :]).reshape(K, -1)
        Fm = self.F.reshape(self.n_A * self.N_V, self.n_A * self.N_V)
        Dm = self.D.reshape(self.n_f, -1)
        Gm = self.G.reshape(-1, self.N_Q)
        parts = [
            np.einsum("ki,ij,kj->k", tf, self.C, tf),
            -2.0 * np.einsum("ki,ij,kj->k", tf, Dm, w),
            -2.0 * np.einsum("ki,im,km->k", tf, self.E, p),
            np.einsum("ki,ij,kj->k", w, Fm, w),
            2.0 * np.einsum("ki,im,km->k", w, Gm, p),
            np.einsum("km,mn,kn->k", p, self.H, p),
        ]
        r1 = _clamped(parts, clamp_tol)
        parts2 = [np.full(K, self.R), -2.0 * u @ self.S, np.einsum("ka,ab,kb->k", u, self.T, u)]
        r2 = _clamped(parts2, clamp_tol)
        return np.sqrt(r1), np.sqrt(r2)


def _clamped(parts, tol):
    val = np.sum(parts, axis=0)
    scale = np.sum(np.abs(parts), axis=0)
    bad = val < -tol * np.maximum(scale, 1e-300)
    if np.any(bad):
        raise NegativeDualNormError(
            f"residual quadratic form is negative ({val[bad].min():.3e}); offline data corrupted")
    return np.maximum(val, 0.0)


# ---------------------------------------------------------------------------


@dataclass
class ErrorEstimate:
    delta_u: np.ndarray
    delta_p: np.ndarray
    delta: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    alpha_lb: np.ndarray
    gamma_ub: np.ndarray
    beta: float


def error_estimate(r1, r2, alpha_lb, gamma_ub, beta) -> ErrorEstimate:
    """Brezzi-type bounds on the velocity and pressure errors."""
    r1, r2 = np.asarray(r1, float), np.asarray(r2, float)
    a = np.asarray(alpha_lb, float)
    g = np.asarray(gamma_ub, float)
    if np.any(a <= 0) or beta <= 0:
        raise ValueError("stability constants must be positive")
    if np.any(g < a * (1 - 1e-12)):
        raise ValueError("continuity bound below the coercivity bound")
    k = (2.0 / beta) * np.sqrt(g / a)
    du = r1 / a + k * r2
    dp = k * r1 + (g / beta**2) * r2
    return ErrorEstimate(du, dp, np.sqrt(du**2 + dp**2), r1, r2, a, g, beta)


class StabilityCache:
    """Memoized ``alpha_LB``, ``gamma_UB`` per parameter from a bounds provider."""

    def __init__(self, bounds):
        self.bounds = bounds
        self.beta = bounds.beta
        self._memo = {}

    def __call__(self, xis):
        xis = np.atleast_2d(xis)
        out = np.empty((len(xis), 2))
        for k, xi in enumerate(xis):
            key = xi.tobytes()
            if key not in self._memo:
                self._memo[key] = (self.bounds.alpha_lb(xi), self.bounds.gamma_ub(xi))
            out[k] = self._memo[key]
        return out[:, 0], out[:, 1]


class ExactStability:
    """Stability provider with prescribed constants (toys and tests)."""

    def __init__(self, alpha_fn, gamma_fn, beta):
        self.alpha_lb, self.gamma_ub, self.beta = alpha_fn, gamma_fn, beta


@dataclass
class OnlineResult:
    u_N: np.ndarray
    p_N: np.ndarray
    estimate: ErrorEstimate

    @property
    def rel_delta(self):
        nu = np.linalg.norm(self.u_N, axis=1)
        npr = np.linalg.norm(self.p_N, axis=1)
        tot = np.sqrt(nu**2 + npr**2)
        e = self.estimate
        return (_safe_div(e.delta_u, nu), _safe_div(e.delta_p, npr), _safe_div(e.delta, tot))


def _safe_div(a, b):
    return np.where(b > 0, a / np.where(b > 0, b, 1.0), np.inf)


class ReducedModel:
    """Basis, offline data and stability constants bundled for online use."""

    def __init__(self, ops: AssembledOperators, dec: AffineDecomposition, stability,
                 memory_cap=DEFAULT_MEMORY_CAP):
        self.ops = ops
        self.dec = dec
        self.rb = ReducedBasis.empty(ops)
        self.offline = OfflineResidualData.initialize(ops, memory_cap)
        self.stability = stability if isinstance(stability, StabilityCache) else \
            StabilityCache(stability)

    def add_snapshot(self, sol, xi):
        added = self.rb.extend(self.ops, sol.u, sol.p, xi)
        if added:
            self.offline.update(self.ops, self.rb)
        return added

    def solve(self, xis, chunk=256):
        """Batched online solve and estimate at the rows of ``xis``."""
        xis = np.atleast_2d(np.asarray(xis, float))
        if self.rb.N_Q == 0:
            raise RuntimeError("reduced basis is empty")
        us, ps, ests = [], [], []
        for s in range(0, len(xis), chunk):
            x = xis[s:s + chunk]
            for xi in x:
                self.dec.box.check(xi)
            tA = self.dec.theta_A_batch(x)
            tf = tA[:, self.dec.f_map]
            mat, rhs = self.offline.reduced_system(tA, tf)
            try:
                sol = np.linalg.solve(mat, rhs[..., None])[..., 0]
            except np.linalg.LinAlgError as exc:
                raise RuntimeError("singular reduced saddle system") from exc
            u, p = sol[:, :self.rb.N_V], sol[:, self.rb.N_V:]
            r1, r2 = self.offline.dual_norms(tA, tf, u, p)
            a, g = self.stability(x)
            ests.append(error_estimate(r1, r2, a, g, self.stability.beta))
            us.append(u)
            ps.append(p)
        est = ErrorEstimate(*(np.concatenate([getattr(e, f) for e in ests])
                              for f in ("delta_u", "delta_p", "delta", "r1", "r2",
                                        "alpha_lb", "gamma_ub")), self.stability.beta)
        return OnlineResult(np.vstack(us), np.vstack(ps), est)


def rb_solve(model: ReducedModel, xi):
    res = model.solve(np.asarray(xi, float)[None, :])
    return res.u_N[0], res.p_N[0]


def residual_dual_norms(model: ReducedModel, xi, u_N, p_N):
    tA = model.dec.theta_A(xi)
    tf = tA[model.dec.f_map]
    r1, r2 = model.offline.dual_norms(tA, tf, u_N, p_N)
    return float(r1[0]), float(r2[0])


def direct_dual_norms(ops: AssembledOperators, dec: AffineDecomposition, rb: ReducedBasis,
                      xi, u_N, p_N, extended=False):
    """Explicit high-dimensional residual and Gram-inverse norms (oracle).

    With ``extended`` the residuals are formed in long double and each Gram
    solve gets two refinement steps, so small residuals keep their digits.
    """
    A, f = dec.assemble_at(ops, xi)
    if not extended:
        u, p = rb.lift(u_N, p_N)
        r1 = f - A @ u - ops.B.T @ p
        r2 = ops.g - ops.B @ u
        z1 = ops.factor_M_V().solve(r1)
        z2 = ops.factor_M_Q().solve(r2)
        return float(np.sqrt(max(r1 @ z1, 0))), float(np.sqrt(max(r2 @ z2, 0)))
    ld = np.longdouble
    u = rb.V.astype(ld) @ np.asarray(u_N, ld)
    p = rb.Q.astype(ld) @ np.asarray(p_N, ld)
    B = ops.B.astype(ld).tocsr()
    r1 = f.astype(ld) - A.astype(ld).tocsr() @ u - B.T.tocsr() @ p
    r2 = ops.g.astype(ld) - B @ u
    out = []
    for r, gram, fac in ((r1, ops.M_V, ops.factor_M_V()), (r2, ops.M_Q, ops.factor_M_Q())):
        G = gram.astype(ld).tocsr()
        z = fac.solve(np.asarray(r, float)).astype(ld)
        for _ in range(2):
            z += fac.solve(np.asarray(r - G @ z, float))
        out.append(float(np.sqrt(max(r @ z, 0))))
    return tuple(out)


# ---------------------------------------------------------------------------
# greedy


@dataclass
class GreedyTrace:
    rows: list = field(default_factory=list)
    # iteration, N_V, max rel du, max rel dp, max rel d, max abs d, level

    def add(self, *row):
        self.rows.append(tuple(row))

    def write(self, path):
        with open(path, "w") as fh:
            fh.write("iteration,level,N_V,max_rel_delta_u,max_rel_delta_p,max_rel_delta,"
                     "max_delta\n")
            for it, nv, ru, rp, rd, d, lev in self.rows:
                fh.write(f"{it},{lev},{nv},{ru:.17g},{rp:.17g},{rd:.17g},{d:.17g}\n")


def initial_point(training, box):
    """Training point closest to the centroid in box-normalized coordinates."""
    t = box.to_unit(training)
    return int(np.argmin(np.sum((t - t.mean(axis=0)) ** 2, axis=1)))


def greedy_extend(model: ReducedModel, training, eps_RB, hf: HighFidelitySolver,
                  trace: GreedyTrace = None, level=0, max_extensions=10000, patience=3):
    """Extend the basis until the largest estimate on ``training`` is below ``eps_RB``."""
    training = np.atleast_2d(np.asarray(training, float))
    trace = trace if trace is not None else GreedyTrace()
    if len(training) == 0:
        return trace
    if model.rb.N_Q == 0:
        k = initial_point(training, model.dec.box)
        model.add_snapshot(hf.solve(training[k]), training[k])
    history = []
    for _ in range(max_extensions + 1):
        res = model.solve(training)
        d = res.estimate.delta
        k = int(np.argmax(d))  # first maximum: lowest index
        ru, rp, rd = res.rel_delta
        trace.add(len(trace.rows) + 1, model.rb.N_V, float(ru.max()), float(rp.max()),
                  float(rd.max()), float(d[k]), level)
        if d[k] < eps_RB:
            return trace
        history.append((k, d[k]))
        recent = history[-patience:]
        if len(recent) == patience and len({h[0] for h in recent}) == 1 and \
                all(recent[i + 1][1] >= recent[i][1] for i in range(patience - 1)):
            raise StagnationError(
                f"greedy stagnated at training point {k} (max estimate {d[k]:.3e}) "
                f"for {patience} iterations")
        model.add_snapshot(hf.solve(training[k]), training[k])
    raise StagnationError(f"greedy exceeded {max_extensions} extensions")


# ---------------------------------------------------------------------------
# reduced-basis adaptive ANOVA


@dataclass
class AnovaResult:
    mean_u: np.ndarray
    mean_p: np.ndarray
    var_u: np.ndarray
    var_p: np.ndarray
    n_points: int
    n_hf_solves: int
    levels: list  # per level: list of (direction, indicator, n_points, cumulative)
    trace: GreedyTrace
    model: ReducedModel = None
    state: AnovaState = None


def rb_anova_drive(model: ReducedModel, hf: HighFidelitySolver, eps_RB, eps_A, l0=1, L=2,
                   quad_points=5):
    """Adaptive RB-ANOVA: anchor-seeded basis, greedy training per level."""
    box = model.dec.box
    grid = AnovaGrid(box.lower, box.upper, quad_points, box.anchor())
    state = AnovaState(grid)
    n_u_red = lambda: model.rb.N_V  # noqa: E731
    c = grid.anchor
    if model.rb.N_Q == 0:
        model.add_snapshot(hf.solve(c), c)
    trace = GreedyTrace()
    for l in range(1, l0 + 1):
        state.activate(l, _all_of_order(grid.M, l))
    done = 1  # points already in Xi_0: the anchor
    reports = []
    active_levels = list(range(1, l0 + 1))
    for l in range(l0, L + 1):
        n_before = done
        training = state.points.coordinates(done)
        greedy_extend(model, training, eps_RB, hf, trace, level=l)
        done = len(state.points)
        X0 = state.points.coordinates(0, done)
        res = model.solve(X0)
        coef = np.hstack([res.u_N, res.p_N])
        state.compute_terms(coef)
        norm = gram_norm(n_u_red())
        rows = []
        for lev in active_levels:
            state.score_level(lev, norm)
        cumulative = done
        for T in state.levels[l]:
            rows.append((T, state.indicators[T], grid.p ** len(T), cumulative))
        reports.append({"level": l, "new_points": done - n_before, "rows": rows})
        if l < L:
            nxt = state.select_next_level(l, eps_A)
            if not nxt:
                break
            state.activate(l + 1, nxt)
            active_levels.append(l + 1)
    NV = model.rb.N_V
    mean = state.mean().reshape(-1)
    cov = state.variance(outer=True)
    V, Q = model.rb.V, model.rb.Q
    var_u = np.einsum("na,ab,nb->n", V, cov[:NV, :NV], V)
    var_p = np.einsum("na,ab,nb->n", Q, cov[NV:, NV:], Q)
    return AnovaResult(mean_u=V @ mean[:NV], mean_p=Q @ mean[NV:],
                       var_u=np.maximum(var_u, 0.0), var_p=np.maximum(var_p, 0.0),
                       n_points=len(state.points), n_hf_solves=hf.n_solves, levels=reports,
                       trace=trace, model=model, state=state)


def _all_of_order(M, l):
    import itertools
    return list(itertools.combinations(range(M), l))


__all__ = [
    "supremizer", "ReducedBasis", "OfflineResidualData", "ErrorEstimate", "error_estimate",
    "ReducedModel", "rb_solve", "residual_dual_norms", "direct_dual_norms", "greedy_extend",
    "rb_anova_drive", "GreedyTrace", "StagnationError", "AnovaResult", "next_level_directions",
]
