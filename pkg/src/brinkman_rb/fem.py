"""Q2-P-1 mixed finite elements for Stokes-Brinkman on the unit square.

The square is split into ``n_sub x n_sub`` subdomains of ``n_elem x n_elem``
uniform square elements.  Velocity is continuous biquadratic, pressure is
discontinuous linear with the per-element basis ``{1, x - xc, y - yc}``.

Boundary conditions are fixed: parabolic inflow on x = 0, no-slip walls on
y = 0 and y = 1, do-nothing outflow on x = 1.  Dirichlet velocity dof are
eliminated; ``AssembledOperators`` only ever holds free dof.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .linalg import Factorization, finalize

ISO = "iso"
ANISO = "aniso"


@dataclass(frozen=True)
class MeshConfig:
    n_sub: int
    n_elem: int

    def __post_init__(self):
        if int(self.n_sub) < 1 or int(self.n_elem) < 1:
            raise ValueError(f"invalid mesh sizes n_sub={self.n_sub}, n_elem={self.n_elem}")

    @property
    def n_side(self):
        """Elements per side of the whole square."""
        return self.n_sub * self.n_elem

    @property
    def h(self):
        return 1.0 / self.n_side

    @property
    def n_elements(self):
        return self.n_side**2

    @property
    def nodes_per_side(self):
        return 2 * self.n_side + 1

    @property
    def n_nodes(self):
        return self.nodes_per_side**2


@dataclass(frozen=True)
class BoundaryConditions:
    """Parabolic x-velocity ``peak * 4 y (1 - y)`` on the inflow edge."""

    inflow_peak: float = 1.0

    def inflow(self, y):
        y = np.asarray(y, dtype=float)
        return self.inflow_peak * 4.0 * y * (1.0 - y)


@dataclass
class AssembledOperators:
    mesh: MeshConfig
    bc: BoundaryConditions
    model_kind: str
    viscosity: float
    A_S: sp.csr_matrix
    darcy_blocks: list
    darcy_labels: list  # (subdomain, axis) per block; axis None for iso
    B: sp.csr_matrix
    M_V: sp.csr_matrix
    M_Q: sp.csr_matrix
    M_L2: sp.csr_matrix  # velocity L2 mass, for moment error norms
    f_components: list
    f_blocks: list  # index into darcy_blocks per f component, None for Stokes
    g: np.ndarray
    lift: np.ndarray  # full nodal velocity of w, [w_x(all nodes), w_y(all nodes)]
    free_nodes: np.ndarray
    node_xy: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_u(self):
        return self.M_V.shape[0]

    @property
    def n_p(self):
        return self.M_Q.shape[0]

    @property
    def n_total(self):
        return self.n_u + self.n_p

    @property
    def affine_matrices(self):
        """``[A_S, A_D^1, ...]`` in affine-decomposition order."""
        return [self.A_S] + list(self.darcy_blocks)

    @property
    def n_A(self):
        return 1 + len(self.darcy_blocks)

    @property
    def n_f(self):
        return len(self.f_components)

    def factor_M_V(self):
        if "M_V" not in self._cache:
            self._cache["M_V"] = Factorization(self.M_V, "symmetric-positive-definite")
        return self._cache["M_V"]

    def factor_M_Q(self):
        if "M_Q" not in self._cache:
            self._cache["M_Q"] = Factorization(self.M_Q, "symmetric-positive-definite")
        return self._cache["M_Q"]

    def full_velocity(self, u):
        """Scatter free-dof velocity into the full nodal layout (no lift added)."""
        nn = self.mesh.n_nodes
        nf = self.free_nodes.size
        out = np.zeros(2 * nn)
        out[self.free_nodes] = u[:nf]
        out[nn + self.free_nodes] = u[nf:]
        return out


# ---------------------------------------------------------------------------
# reference element


def _lagrange_1d(s):
    s = np.asarray(s, dtype=float)
    val = np.stack([0.5 * s * (s - 1.0), 1.0 - s * s, 0.5 * s * (s + 1.0)])
    der = np.stack([s - 0.5, -2.0 * s, s + 0.5])
    return val, der


def _gauss3():
    x, w = np.polynomial.legendre.leggauss(3)
    return x, w


def reference_element(h):
    """Local matrices of one ``h x h`` element (identical for every element).

    Local velocity node ``l = 3 b + a`` sits at reference position
    ``(a - 1, b - 1)``.  Returns scalar stiffness and mass (9x9), pressure
    mass (3x3) and the two divergence blocks (3x9).
    """
    xq, wq = _gauss3()
    val, der = _lagrange_1d(xq)  # (3 basis, 3 points)
    # 2D basis at quadrature points (q = 3*j + i for point (xq[i], xq[j]))
    phi = np.einsum("ai,bj->jiba", val, val).reshape(9, 9)  # (quad point, local node)
    dphidx = np.einsum("ai,bj->jiba", der, val).reshape(9, 9) * (2.0 / h)
    dphidy = np.einsum("ai,bj->jiba", val, der).reshape(9, 9) * (2.0 / h)
    wts = np.outer(wq, wq).reshape(9) * (h / 2.0) ** 2  # (j, i) ordering
    xs = np.tile(xq, 3) * (h / 2.0)  # x - xc at quad point q = 3 j + i
    ys = np.repeat(xq, 3) * (h / 2.0)
    psi = np.stack([np.ones(9), xs, ys], axis=1)  # (quad, 3)

    K = np.einsum("q,qi,qj->ij", wts, dphidx, dphidx) + np.einsum(
        "q,qi,qj->ij", wts, dphidy, dphidy
    )
    M = np.einsum("q,qi,qj->ij", wts, phi, phi)
    Mq = np.einsum("q,qk,ql->kl", wts, psi, psi)
    Bx = -np.einsum("q,qk,qi->ki", wts, psi, dphidx)
    By = -np.einsum("q,qk,qi->ki", wts, psi, dphidy)
    return K, M, Mq, Bx, By


def element_nodes(mesh: MeshConfig):
    """Global node ids of every element, shape ``(n_elements, 9)``.

    Elements are row-major from the bottom-left; nodes likewise.
    """
    ns = mesh.n_side
    nps = mesh.nodes_per_side
    ey, ex = np.divmod(np.arange(ns * ns), ns)
    b, a = np.divmod(np.arange(9), 3)
    I = 2 * ex[:, None] + a[None, :]
    J = 2 * ey[:, None] + b[None, :]
    return J * nps + I


def element_subdomain(mesh: MeshConfig):
    ns = mesh.n_side
    ey, ex = np.divmod(np.arange(ns * ns), ns)
    return (ey // mesh.n_elem) * mesh.n_sub + ex // mesh.n_elem


def node_coordinates(mesh: MeshConfig):
    nps = mesh.nodes_per_side
    J, I = np.divmod(np.arange(nps * nps), nps)
    return np.column_stack([I, J]) * (mesh.h / 2.0)


def element_centroids(mesh: MeshConfig):
    ns = mesh.n_side
    ey, ex = np.divmod(np.arange(ns * ns), ns)
    return np.column_stack([ex + 0.5, ey + 0.5]) * mesh.h


def _scatter(rows, cols, local, shape, mask=None):
    if mask is not None:
        rows, cols = rows[mask], cols[mask]
    n_el, nl = rows.shape
    _, ml = cols.shape
    r = np.repeat(rows, ml, axis=1).ravel()
    c = np.tile(cols, (1, nl)).ravel()
    v = np.tile(local.ravel(), n_el)
    out = finalize(sp.coo_matrix((v, (r, c)), shape=shape).tocsr())
    if rows is cols or (rows.shape == cols.shape and np.array_equal(rows, cols)):
        # summation order differs between (i, j) and (j, i); a + a' is exactly symmetric
        out = finalize(0.5 * (out + out.T))
    return out


# ---------------------------------------------------------------------------


def count_affine_terms(model_kind, n_sub):
    """``(n_A, n_f)`` of the affine decomposition."""
    if model_kind == ISO:
        return n_sub * n_sub + 1, n_sub + 1
    if model_kind in (ANISO, "aniso1", "aniso2"):
        return 2 * n_sub * n_sub + 1, n_sub + 1
    raise ValueError(f"unknown model kind {model_kind!r}")


def build_operators(mesh: MeshConfig, bc: BoundaryConditions = None, model_kind=ISO,
                    viscosity=1e-3) -> AssembledOperators:
    """Assemble every parameter-independent operator on the free dof."""
    if viscosity <= 0:
        raise ValueError("viscosity must be positive")
    if model_kind in ("aniso1", "aniso2"):
        model_kind = ANISO
    if model_kind not in (ISO, ANISO):
        raise ValueError(f"unknown model kind {model_kind!r}")
    bc = bc or BoundaryConditions()
    nn = mesh.n_nodes
    ne = mesh.n_elements
    h = mesh.h
    K, M, Mq, Bx, By = reference_element(h)
    en = element_nodes(mesh)
    sub = element_subdomain(mesh)
    pdofs = 3 * np.arange(ne)[:, None] + np.arange(3)[None, :]

    K_full = _scatter(en, en, K, (nn, nn))
    M_full = _scatter(en, en, M, (nn, nn))
    Bx_full = _scatter(pdofs, en, Bx, (3 * ne, nn))
    By_full = _scatter(pdofs, en, By, (3 * ne, nn))
    M_Q = _scatter(pdofs, pdofs, Mq, (3 * ne, 3 * ne))

    xy = node_coordinates(mesh)
    nps = mesh.nodes_per_side
    J, I = np.divmod(np.arange(nn), nps)
    dirichlet = (I == 0) | (J == 0) | (J == nps - 1)
    free_nodes = np.flatnonzero(~dirichlet)
    free = np.concatenate([free_nodes, nn + free_nodes])

    lift = np.zeros(2 * nn)
    inflow = I == 0
    lift[:nn][inflow] = bc.inflow(xy[inflow, 1])

    zero = sp.csr_matrix((nn, nn))

    def vec(a, b=None):
        return sp.bmat([[a, None], [None, a if b is None else b]], format="csr")

    def restrict(full):
        return finalize(full[free][:, free])

    MV_full = vec(K_full)
    M_V = restrict(MV_full)
    A_S = finalize(viscosity * M_V)
    AS_full = viscosity * MV_full
    M_L2 = restrict(vec(M_full))
    B_full = finalize(sp.hstack([Bx_full, By_full], format="csr"))
    B = finalize(B_full[:, free])

    darcy_blocks, darcy_labels, f_components, f_blocks = [], [], [], []
    f_components.append(-(AS_full[free] @ lift))
    f_blocks.append(None)
    for k in range(mesh.n_sub**2):
        # Darcy drag nu K^{-1}: the viscosity sits in the block, 1/k in theta
        Mk = viscosity * _scatter(en, en, M, (nn, nn), mask=sub == k)
        left_column = k % mesh.n_sub == 0
        if model_kind == ISO:
            axes = [(None, vec(Mk))]
        else:
            axes = [("x", vec(Mk, zero)), ("y", vec(zero, Mk))]
        for axis, full in axes:
            darcy_blocks.append(restrict(full))
            darcy_labels.append((k, axis))
            # the lift lives on x = 0 and has no y component
            if left_column and axis in (None, "x"):
                f_components.append(-(full[free] @ lift))
                f_blocks.append(len(darcy_blocks) - 1)
    g = -(B_full @ lift)

    return AssembledOperators(
        mesh=mesh, bc=bc, model_kind=model_kind, viscosity=viscosity, A_S=A_S,
        darcy_blocks=darcy_blocks, darcy_labels=darcy_labels, B=B, M_V=M_V, M_Q=M_Q,
        M_L2=M_L2, f_components=f_components, f_blocks=f_blocks, g=g, lift=lift,
        free_nodes=free_nodes, node_xy=xy,
    )


# ---------------------------------------------------------------------------
# high-fidelity solves


@dataclass
class FieldSolution:
    u: np.ndarray
    p: np.ndarray
    xi: np.ndarray = None
    divergence_residual: float = 0.0


def saddle_matrix(ops: AssembledOperators, A_xi):
    return sp.bmat([[A_xi, ops.B.T], [ops.B, None]], format="csc")


def solve_high_fidelity(ops: AssembledOperators, A_xi, f_xi, xi=None) -> FieldSolution:
    """Direct solve of the parametrized saddle-point system."""
    fac = Factorization(saddle_matrix(ops, A_xi))
    rhs = np.concatenate([f_xi, ops.g])
    sol = fac.solve(rhs)
    u, p = sol[: ops.n_u], sol[ops.n_u:]
    div = float(np.max(np.abs(ops.B @ u - ops.g), initial=0.0))
    tol = 1e-8 * max(1.0, float(np.max(np.abs(ops.g), initial=0.0)))
    if div > tol:
        raise RuntimeError(f"mass conservation violated: |Bu - g|_inf = {div:.3e}")
    return FieldSolution(u, p, None if xi is None else np.asarray(xi, float), div)


class HighFidelitySolver:
    """Counts solves and records the worst divergence residual seen."""

    def __init__(self, ops: AssembledOperators, decomposition):
        self.ops = ops
        self.dec = decomposition
        self.n_solves = 0
        self.max_divergence_residual = 0.0

    def solve(self, xi) -> FieldSolution:
        A_xi, f_xi = self.dec.assemble_at(self.ops, xi)
        sol = solve_high_fidelity(self.ops, A_xi, f_xi, xi)
        self.n_solves += 1
        self.max_divergence_residual = max(self.max_divergence_residual,
                                           sol.divergence_residual)
        return sol


# ---------------------------------------------------------------------------
# field files


VELOCITY = "velocity"
PRESSURE = "pressure"


def write_field(values, space, path, ops: AssembledOperators, add_lift=False):
    """Write a velocity or pressure field as CSV with 17 significant digits.

    Velocity rows are ``x, y, u_x, u_y`` for every mesh node; ``values`` may
    be a free-dof vector (Dirichlet nodes are then zero, or the lift when
    ``add_lift``) or a full nodal vector of length ``2 * n_nodes``.
    Pressure rows are ``x, y, p`` at element centroids.
    """
    values = np.asarray(values, dtype=float)
    nn = ops.mesh.n_nodes
    fmt = "%.17g"
    if space == VELOCITY:
        if values.size == ops.n_u:
            full = ops.full_velocity(values)
        elif values.size == 2 * nn:
            full = values.copy()
        else:
            raise ValueError(f"velocity vector of length {values.size} does not match the mesh")
        if add_lift:
            full = full + ops.lift
        table = np.column_stack([ops.node_xy, full[:nn], full[nn:]])
        header = ["x", "y", "u_x", "u_y"]
    elif space == PRESSURE:
        if values.size != ops.n_p:
            raise ValueError(f"pressure vector of length {values.size} does not match the mesh")
        table = np.column_stack([element_centroids(ops.mesh), values[0::3]])
        header = ["x", "y", "p"]
    else:
        raise ValueError(f"unknown space {space!r}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in table:
            w.writerow([fmt % v for v in row])
    return path


def read_field(path):
    """Read a field CSV back as ``(header, array)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]])
