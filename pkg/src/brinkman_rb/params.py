"""Random permeability models, the parameter box and affine coefficient maps."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ._kernels import radical_inverse
from .fem import ANISO, ISO, AssembledOperators

ANISO1 = "aniso1"  # k_x < k_y, vertical flow favoured
ANISO2 = "aniso2"  # k_x > k_y, horizontal flow favoured
KINDS = (ISO, ANISO1, ANISO2)


class OutOfBoxError(ValueError):
    pass


@dataclass
class ParameterBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise ValueError("lower and upper must be 1-D arrays of equal length")
        if np.any(self.lower > self.upper):
            raise ValueError("interval with a > b")
        if np.any(self.lower <= 0):
            raise ValueError("permeability intervals must be positive")

    @property
    def M(self):
        return self.lower.size

    @property
    def width(self):
        return self.upper - self.lower

    def anchor(self):
        return 0.5 * (self.lower + self.upper)

    def contains(self, xi, rtol=1e-12):
        xi = np.asarray(xi, dtype=float)
        slack = rtol * np.abs(self.upper)
        return bool(np.all(xi >= self.lower - slack) and np.all(xi <= self.upper + slack))

    def check(self, xi):
        xi = np.asarray(xi, dtype=float)
        if xi.shape != self.lower.shape:
            raise OutOfBoxError(f"parameter of length {xi.size}, expected {self.M}")
        if not self.contains(xi):
            bad = np.flatnonzero((xi < self.lower) | (xi > self.upper))
            raise OutOfBoxError(f"parameter outside the box in components {bad[:5].tolist()}")
        return xi

    def to_unit(self, xi):
        """Affine map of ``xi`` to ``[0,1]^M``; degenerate intervals map to 0."""
        w = self.width
        safe = np.where(w > 0, w, 1.0)
        return np.where(w > 0, (np.asarray(xi, float) - self.lower) / safe, 0.0)

    def from_unit(self, t):
        return self.lower + np.asarray(t, float) * self.width

    def to_dict(self):
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["lower"], float), np.array(d["upper"], float))


def anchor_point(box: ParameterBox):
    return box.anchor()


@dataclass
class PermeabilityModel:
    kind: str
    n_sub: int
    seed: int = 0
    iso_range: tuple = (-6.0, -3.0)
    small_range: tuple = (-6.0, -4.75)
    large_range: tuple = (-4.25, -3.0)
    r_range: tuple = (0.05, 0.15)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown permeability model {self.kind!r}")
        if self.n_sub < 1:
            raise ValueError("n_sub must be positive")

    @property
    def fem_kind(self):
        return ISO if self.kind == ISO else ANISO

    @property
    def M(self):
        n = self.n_sub**2
        return n if self.kind == ISO else 2 * n

    def index_map(self):
        """``(subdomain, axis)`` for every stochastic index, axis None for iso."""
        n = self.n_sub**2
        if self.kind == ISO:
            return [(k, None) for k in range(n)]
        return [(k, ax) for k in range(n) for ax in ("x", "y")]

    def exponent_ranges(self):
        """``(M, 2)`` array of log10 ranges for each index."""
        if self.kind == ISO:
            return np.tile(np.asarray(self.iso_range, float), (self.M, 1))
        small_axis = "x" if self.kind == ANISO1 else "y"
        return np.array([self.small_range if ax == small_axis else self.large_range
                         for _, ax in self.index_map()], dtype=float)


def make_rng(seed):
    return np.random.Generator(np.random.Philox(int(seed)))


def generate_intervals(model: PermeabilityModel) -> ParameterBox:
    """Random intervals ``[(1 - r) 10^c, (1 + r) 10^c]`` per stochastic index.

    ``c`` is an arcsine (Beta(1/2, 1/2)) draw mapped onto the exponent range
    and ``r`` is uniform on ``r_range``.
    """
    rng = make_rng(model.seed)
    M = model.M
    u_c = rng.random(M)
    u_r = rng.random(M)
    ranges = model.exponent_ranges()
    beta = np.sin(0.5 * np.pi * u_c) ** 2
    c = ranges[:, 0] + (ranges[:, 1] - ranges[:, 0]) * beta
    r = model.r_range[0] + (model.r_range[1] - model.r_range[0]) * u_r
    centre = 10.0**c
    return ParameterBox((1.0 - r) * centre, (1.0 + r) * centre)


def interval_from(c_exponent, r):
    centre = 10.0 ** float(c_exponent)
    return (1.0 - r) * centre, (1.0 + r) * centre


def save_box(box: ParameterBox, path, model: PermeabilityModel = None):
    payload = {"version": 1, "box": box.to_dict()}
    if model is not None:
        payload["model"] = {"kind": model.kind, "n_sub": model.n_sub, "seed": model.seed}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)


def load_box(path) -> ParameterBox:
    with open(path) as fh:
        return ParameterBox.from_dict(json.load(fh)["box"])


# ---------------------------------------------------------------------------


def first_primes(n):
    out = []
    k = 2
    while len(out) < n:
        if all(k % p for p in out if p * p <= k):
            out.append(k)
        k += 1
    return out


def halton(n, dim, start=1):
    """``n`` points of the unscrambled Halton sequence in ``[0,1)^dim``."""
    idx = np.arange(start, start + n, dtype=np.int64)
    return np.column_stack([radical_inverse(idx, b) for b in first_primes(dim)]) if dim else \
        np.zeros((n, 0))


def halton_in_box(n, box: ParameterBox, start=1):
    return box.from_unit(halton(n, box.M, start))


def uniform_in_box(n, box: ParameterBox, seed):
    return box.from_unit(make_rng(seed).random((n, box.M)))


# ---------------------------------------------------------------------------


@dataclass
class AffineDecomposition:
    """Coefficient maps ``theta_A``, ``theta_f`` tied to one operator set.

    ``theta_A = (1, 1/xi_0, ..., 1/xi_{M-1})``; ``f_map[j]`` is the index into
    ``theta_A`` paired with ``f_components[j]``.
    """

    box: ParameterBox
    f_map: np.ndarray
    index_map: list = field(default_factory=list)

    @property
    def M(self):
        return self.box.M

    @property
    def n_A(self):
        return self.M + 1

    @property
    def n_f(self):
        return self.f_map.size

    def theta_A(self, xi, check=True):
        xi = self.box.check(xi) if check else np.asarray(xi, float)
        return np.concatenate([[1.0], 1.0 / xi])

    def theta_f(self, xi, check=True):
        return self.theta_A(xi, check)[self.f_map]

    def theta_A_batch(self, xis):
        xis = np.atleast_2d(np.asarray(xis, float))
        return np.column_stack([np.ones(len(xis)), 1.0 / xis])

    def theta_f_batch(self, xis):
        return self.theta_A_batch(xis)[:, self.f_map]

    def assemble_at(self, ops: AssembledOperators, xi, check=True):
        tA = self.theta_A(xi, check)
        indptr, indices, data = affine_stack(ops)
        n = ops.n_u
        A = sp.csr_matrix((tA @ data, indices, indptr), shape=(n, n))
        tf = tA[self.f_map]
        f = np.asarray(ops.f_components).T @ tf
        return A, f


def affine_stack(ops: AssembledOperators):
    """Affine terms on their union pattern: ``(indptr, indices, data[n_A, nnz])``.

    ``A(xi)`` then has the same pattern for every parameter.
    """
    cached = ops._cache.get("affine_stack")
    if cached is not None:
        return cached
    terms = ops.affine_matrices
    n = ops.n_u
    union = abs(terms[0])
    for t in terms[1:]:
        union = union + abs(t)
    union = union.tocsr()
    union.sort_indices()
    rows = np.repeat(np.arange(n), np.diff(union.indptr))
    keys = rows.astype(np.int64) * n + union.indices
    data = np.zeros((len(terms), keys.size))
    for i, t in enumerate(terms):
        c = t.tocoo()
        pos = np.searchsorted(keys, c.row.astype(np.int64) * n + c.col)
        np.add.at(data[i], pos, c.data)
    out = (union.indptr.copy(), union.indices.copy(), data)
    ops._cache["affine_stack"] = out
    return out


def make_decomposition(ops: AssembledOperators, box: ParameterBox,
                       model: PermeabilityModel = None) -> AffineDecomposition:
    """Tie ``box`` to ``ops``: stochastic index ``m`` drives Darcy block ``m``."""
    if box.M != len(ops.darcy_blocks):
        raise ValueError(f"box has {box.M} components but operators have "
                         f"{len(ops.darcy_blocks)} Darcy blocks")
    f_map = np.array([0 if b is None else 1 + b for b in ops.f_blocks], dtype=int)
    imap = model.index_map() if model is not None else list(ops.darcy_labels)
    return AffineDecomposition(box=box, f_map=f_map, index_map=imap)
