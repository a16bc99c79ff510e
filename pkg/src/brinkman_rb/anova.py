"""Anchored ANOVA with tensor Gauss-Legendre collocation.

The decomposition works on any vector-valued quantity of the parameter.
Collocation points are keyed by the node indices they place off the anchor,
so points shared by several directions are evaluated once.  Terms of a
direction ``T`` are stored on its tensor grid as arrays of shape
``(p,) * |T| + (ndof,)``; quadrature weights are normalized so that the
statistics are taken under the uniform law on the box.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np


def gauss_legendre(p, interval=(-1.0, 1.0)):
    """``p``-point Gauss-Legendre nodes and weights on ``[a, b]``."""
    if p < 1:
        raise ValueError("quadrature needs at least one point")
    a, b = map(float, interval)
    x, w = np.polynomial.legendre.leggauss(p)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def direction(indices):
    t = tuple(sorted(set(int(i) for i in indices)))
    if len(t) != len(tuple(indices)):
        raise ValueError(f"direction {tuple(indices)} has repeated indices")
    return t


def proper_subsets(T):
    for r in range(len(T)):
        yield from itertools.combinations(T, r)


class MissingTermError(RuntimeError):
    pass


@dataclass
class AnovaGrid:
    """Quadrature rules on each coordinate plus the anchor."""

    lower: np.ndarray
    upper: np.ndarray
    p: int
    anchor: np.ndarray = None

    def __post_init__(self):
        self.lower = np.asarray(self.lower, float)
        self.upper = np.asarray(self.upper, float)
        if self.anchor is None:
            self.anchor = 0.5 * (self.lower + self.upper)
        self.anchor = np.asarray(self.anchor, float)
        M = self.lower.size
        self.nodes = np.empty((M, self.p))
        self.weights = np.empty((M, self.p))  # probability weights
        for m in range(M):
            x, w = gauss_legendre(self.p, (self.lower[m], self.upper[m]))
            width = self.upper[m] - self.lower[m]
            self.nodes[m] = x
            self.weights[m] = w / width if width > 0 else np.full(self.p, 1.0 / self.p)
        self.mid = self.p // 2 if self.p % 2 else None
        if self.mid is not None:
            # keep the shared node bitwise equal to the anchor
            self.nodes[:, self.mid] = self.anchor

    @property
    def M(self):
        return self.lower.size

    def point_key(self, T, multi):
        return tuple((m, int(j)) for m, j in zip(T, multi) if j != self.mid)

    def point(self, key):
        xi = self.anchor.copy()
        for m, j in key:
            xi[m] = self.nodes[m, j]
        return xi

    def direction_weights(self, T):
        """Tensor of normalized weights on the grid of ``T``."""
        w = np.ones(())
        for m in T:
            w = np.multiply.outer(w, self.weights[m])
        return w


class PointSet:
    """Deduplicated collocation points in insertion order."""

    def __init__(self, grid: AnovaGrid):
        self.grid = grid
        self.index = {}
        self.keys = []
        self.add(())

    def __len__(self):
        return len(self.keys)

    def add(self, key):
        i = self.index.get(key)
        if i is None:
            i = len(self.keys)
            self.index[key] = i
            self.keys.append(key)
        return i

    def grid_indices(self, T, add=True):
        """Point indices of the tensor grid of ``T``, shape ``(p,) * |T|``."""
        p = self.grid.p
        out = np.empty((p,) * len(T), dtype=np.int64)
        for multi in itertools.product(range(p), repeat=len(T)):
            key = self.grid.point_key(T, multi)
            out[multi] = self.add(key) if add else self.index[key]
        return out

    def coordinates(self, start=0, stop=None):
        keys = self.keys[start:stop]
        return np.array([self.grid.point(k) for k in keys]).reshape(len(keys), self.grid.M)


def _embed(phi_S, S, T):
    """Reshape a term on the grid of ``S`` for broadcasting on the grid of ``T``."""
    shape = [phi_S.shape[S.index(t)] if t in S else 1 for t in T]
    return phi_S.reshape(shape + [phi_S.shape[-1]])


class AnovaState:
    """Active directions by level, the point set and the computed terms."""

    def __init__(self, grid: AnovaGrid):
        self.grid = grid
        self.points = PointSet(grid)
        self.levels = {0: [()]}  # level -> active directions
        self.effective = {}
        self.indicators = {}
        self.terms = {}
        self.means = {}
        self.degenerate = set()

    @property
    def active(self):
        return [T for l in sorted(self.levels) for T in self.levels[l]]

    def activate(self, level, directions):
        dirs = sorted(direction(T) for T in directions)
        if any(len(T) != level for T in dirs):
            raise ValueError(f"all directions at level {level} must have order {level}")
        self.levels[level] = dirs
        for T in dirs:
            self.points.grid_indices(T)
        return dirs

    def activate_up_to(self, level):
        for l in range(1, level + 1):
            self.activate(l, itertools.combinations(range(self.grid.M), l))

    # -- terms ----------------------------------------------------------------

    def compute_terms(self, values):
        """Recompute every active term from point values ``(n_points, ndof)``."""
        values = np.asarray(values)
        if values.ndim == 1:
            values = values[:, None]
        if len(values) < len(self.points):
            raise ValueError("values missing for some collocation points")
        self.terms = {(): values[self.points.index[()]].copy()}
        for T in self.active:
            if T == ():
                continue
            idx = self.points.grid_indices(T, add=False)
            phi = values[idx].copy()
            for S in proper_subsets(T):
                if S not in self.terms:
                    raise MissingTermError(f"term {S} needed by {T} has not been computed")
                phi -= _embed(self.terms[S], S, T)
            self.terms[T] = phi
        self.means = {T: self.term_mean(T) for T in self.terms}
        return self.terms

    def term_mean(self, T):
        phi = self.terms[T]
        # contract the last grid axis first so earlier positions stay valid
        for pos in reversed(range(len(T))):
            phi = np.tensordot(self.grid.weights[T[pos]], phi, axes=([0], [pos]))
        return phi

    def mean(self):
        return sum(self.means[T] for T in self.active)

    def _Z(self, S, T):
        """Z_{S\\T} on the grid of S & T (axes in sorted order of S & T)."""
        U = tuple(m for m in S if m in T)
        centred = self.terms[S] - self.means[S]
        out = centred
        for m in reversed(S):
            if m in U:
                continue
            out = np.tensordot(self.grid.weights[m], out, axes=([0], [S.index(m)]))
        w_U = self.grid.direction_weights(U)
        return out * w_U[..., None], U

    def covariance(self, S, T, outer=False):
        """``E[phi~_S phi~_T]``, elementwise or as an outer product matrix."""
        S, T = direction(S), direction(T)
        ndof = self.terms[()].shape[-1]
        if not S or not T:
            return np.zeros((ndof, ndof) if outer else ndof)
        zs, U = self._Z(S, T)
        zt, _ = self._Z(T, S)
        if not U:
            zs = zs.reshape(1, ndof)
            zt = zt.reshape(1, ndof)
            w = np.ones(1)
        else:
            w = self.grid.direction_weights(U).reshape(-1)
            zs = zs.reshape(-1, ndof)
            zt = zt.reshape(-1, ndof)
        if outer:
            return (zs / w[:, None]).T @ zt
        return np.sum(zs * zt / w[:, None], axis=0)

    def variance(self, outer=False):
        """Sum of covariances over all ordered pairs of overlapping directions."""
        dirs = [T for T in self.active if T]
        ndof = self.terms[()].shape[-1]
        total = np.zeros((ndof, ndof) if outer else ndof)
        for i, S in enumerate(dirs):
            for T in dirs[i:]:
                if not set(S) & set(T):
                    continue  # centred sums vanish
                c = self.covariance(S, T, outer)
                if S == T:
                    total += c
                else:
                    total += c + (c.T if outer else c)
        return total

    # -- adaptivity -----------------------------------------------------------

    def indicator(self, T, norm):
        """Relative size of the mean of ``T`` against all lower-order means."""
        num = norm(self.means[T])
        lower = sum(self.means[S] for S in self.active if len(S) < len(T))
        den = norm(lower)
        if den == 0.0:
            # degenerate lower-order means: keep the direction
            self.degenerate.add(T)
            return np.inf
        return float(num / den)

    def score_level(self, level, norm):
        scores = {T: self.indicator(T, norm) for T in self.levels.get(level, [])}
        self.indicators.update(scores)
        return scores

    def select_next_level(self, level, eps_A, norm=None):
        if norm is not None or any(T not in self.indicators for T in self.levels[level]):
            self.score_level(level, norm)
        eff = [T for T in self.levels[level] if self.indicators[T] > eps_A]
        self.effective[level] = eff
        nxt = next_level_directions(eff, level, self.grid.M)
        return nxt

    def report_rows(self, level):
        """``(direction, indicator, n_points)`` per active direction."""
        return [(T, self.indicators.get(T, np.nan), self.grid.p ** len(T))
                for T in self.levels.get(level, [])]


def next_level_directions(effective, level, M):
    """All order ``level + 1`` directions whose order-``level`` subsets are effective."""
    eff = set(direction(T) for T in effective)
    if level == 0:
        return [(m,) for m in range(M)] if () in eff else []
    cand = set()
    for T in eff:
        for m in range(M):
            if m not in T:
                cand.add(tuple(sorted(T + (m,))))
    return sorted(U for U in cand
                  if all(S in eff for S in itertools.combinations(U, level)))


def gram_norm(n_u, M_V=None, M_Q=None):
    """``|u|_V + |p|_Q`` of a stacked ``[u, p]`` vector.

    With no Gram matrices the Euclidean norms are used, which is exact for
    coefficient vectors of orthonormal reduced bases.
    """
    def norm(v):
        v = np.asarray(v).reshape(-1)
        u, p = v[:n_u], v[n_u:]
        nu = np.sqrt(max(u @ (M_V @ u), 0.0)) if M_V is not None else np.linalg.norm(u)
        npr = np.sqrt(max(p @ (M_Q @ p), 0.0)) if M_Q is not None else np.linalg.norm(p)
        return float(nu + npr)
    return norm
