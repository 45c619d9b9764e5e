"""Q1 finite-element assembly for -div(alpha grad u) + beta u and the heat equation.

Operators are stored term-wise so that the parametric stiffness operator is
``A(mu) = theta_K * K + theta_M * M``: ``(alpha, beta)`` for the steady
diffusion-reaction problems and ``(alpha, 1/dt)`` for backward Euler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.io
import scipy.linalg as la
import scipy.sparse as sp

from .errors import MeshError
from .mesh import IndexSets, Mesh, Side, build_index_sets, parse_face, tensor_cells

# 2-point Gauss rule on [0, 1]
_GAUSS_X = np.array([0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)])
_GAUSS_W = np.array([0.5, 0.5])


@dataclass(frozen=True)
class ParameterSample:
    """One parameter instance.

    ``beta`` is unused for the heat equation; ``gamma1``/``gamma2`` scale the
    two subdomain sources of the parametrized-source problem.
    """

    alpha: float
    beta: float = 0.0
    gamma1: float = 0.0
    gamma2: float = 0.0
    t_index: int | None = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.beta < 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")

    def values(self, names: Sequence[str]) -> list[float]:
        return [float(getattr(self, n)) for n in names]

    @classmethod
    def from_values(cls, values: Sequence[float], names: Sequence[str]) -> "ParameterSample":
        if len(values) != len(names):
            raise ValueError(f"expected {len(names)} values ({', '.join(names)}), got {len(values)}")
        return cls(**{n: float(v) for n, v in zip(names, values)})


@dataclass(frozen=True)
class TimeScheme:
    dt: float
    n_steps: int
    method: str = "backward_euler"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        if self.method != "backward_euler":
            raise ValueError(f"unsupported time scheme {self.method!r}")

    def time(self, step: int) -> float:
        """Time at the end of step ``step`` (1-based), rounded to kill drift."""
        return round(step * self.dt, 12)


# --- sources -----------------------------------------------------------------


@dataclass(frozen=True)
class SourceTerm:
    """``coeff(mu, t) * func(x)`` restricted to one region.

    ``region`` is ``'all'``, ``'slave'`` or ``'master'``; on a global mesh the
    region of a cell is decided by its centroid.
    """

    func: Callable[[np.ndarray], np.ndarray]
    coeff: Callable[[ParameterSample, float | None], float]
    region: str = "all"


@dataclass(frozen=True)
class SourceSpec:
    name: str
    terms: tuple[SourceTerm, ...] = ()

    def coefficients(self, mu: ParameterSample, t: float | None = None) -> np.ndarray:
        return np.array([term.coeff(mu, t) for term in self.terms], dtype=float)


def _coord(x, k, default):
    return x[..., k] if x.shape[-1] > k else np.full(x.shape[:-1], default)


def _test1_f(x):
    # out-of-plane coordinate fixed at z = 1 in 2D
    X, Y, Z = x[..., 0], _coord(x, 1, 0.0), _coord(x, 2, 1.0)
    return np.pi / 4 * Y * X**2 * np.sin(np.pi / 2 * Y) * np.exp(Z - 1.0)


def _test2_f1(x):
    X, Y, Z = x[..., 0], _coord(x, 1, 0.0), _coord(x, 2, 1.0)
    return np.sin(np.pi / 2 * X**2 * Z) + X * Y


def _test2_f2(x):
    X, Y, Z = x[..., 0], _coord(x, 1, 0.0), _coord(x, 2, 1.0)
    return np.exp(-((X - 1.0) ** 2 + (Y - 1.0) ** 2 + (Z - 1.0) ** 2) / 2.0)


def heat_gate(t: float | None) -> float:
    return 1.0 if t is not None and 0.2 < t < 0.5 else 0.0


def _one(mu, t):
    return 1.0


SOURCES: dict[str, SourceSpec] = {
    "zero": SourceSpec("zero"),
    "one": SourceSpec("one", (SourceTerm(lambda x: np.ones(x.shape[:-1]), _one),)),
    "test1": SourceSpec("test1", (SourceTerm(_test1_f, _one),)),
    "test2": SourceSpec(
        "test2",
        (
            SourceTerm(_test2_f1, lambda mu, t: mu.gamma1, "slave"),
            SourceTerm(_test2_f2, lambda mu, t: mu.gamma2, "master"),
        ),
    ),
    "heat": SourceSpec(
        "heat",
        (SourceTerm(lambda x: (x[..., 0] < 0.0).astype(float), lambda mu, t: heat_gate(t)),),
    ),
}


def get_source(name: str) -> SourceSpec:
    try:
        return SOURCES[name]
    except KeyError:
        raise ValueError(f"unknown source id {name!r}; known: {sorted(SOURCES)}") from None


# --- reference element ---------------------------------------------------------


def _reference_tables(dim: int):
    """Shape values, reference gradients and weights at the tensor Gauss points.

    Returns ``N (Q, n)``, ``dN (Q, n, dim)`` on the unit cell and ``w (Q,)``.
    """
    pts = list(product(range(2), repeat=dim))
    nloc = 2**dim
    N = np.ones((len(pts), nloc))
    dN = np.ones((len(pts), nloc, dim))
    w = np.ones(len(pts))
    local_bits = list(product((0, 1), repeat=dim))
    for q, qi in enumerate(pts):
        xi = _GAUSS_X[list(qi)]
        w[q] = np.prod(_GAUSS_W[list(qi)])
        for a, bits in enumerate(local_bits):
            phi = [xi[k] if b else 1.0 - xi[k] for k, b in enumerate(bits)]
            dphi = [1.0 if b else -1.0 for b in bits]
            N[q, a] = np.prod(phi)
            for k in range(dim):
                dN[q, a, k] = dphi[k] * np.prod([phi[j] for j in range(dim) if j != k])
    return N, dN, w


def element_matrices(widths: np.ndarray):
    """Stiffness and mass matrices of axis-aligned Q1 cells with given widths.

    Parameters
    ----------
    widths : ndarray, shape (C, dim)

    Returns
    -------
    Ke, Me : ndarray, shape (C, 2**dim, 2**dim)
    """
    widths = np.atleast_2d(widths)
    dim = widths.shape[1]
    N, dN, w = _reference_tables(dim)
    uniq, inverse = np.unique(widths, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    det = np.prod(uniq, axis=1)
    G = dN[None, :, :, :] / uniq[:, None, None, :]
    Ku = np.einsum("q,u,uqad,uqbd->uab", w, det, G, G)
    Mu = np.einsum("q,u,qa,qb->uab", w, det, N, N)
    return Ku[inverse], Mu[inverse]


def _scatter(cells: np.ndarray, Ae: np.ndarray, n: int) -> sp.csr_matrix:
    nloc = cells.shape[1]
    rows = np.repeat(cells, nloc, axis=1).ravel()
    cols = np.tile(cells, (1, nloc)).ravel()
    A = sp.coo_matrix((Ae.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def assemble_stiffness_mass(mesh: Mesh) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Global ``K = int grad(phi_a).grad(phi_b)`` and ``M = int phi_a phi_b``."""
    Ke, Me = element_matrices(mesh.cell_widths())
    return _scatter(mesh.cells, Ke, mesh.n_nodes), _scatter(mesh.cells, Me, mesh.n_nodes)


def assemble_interface_mass(mesh: Mesh) -> np.ndarray:
    """Dense mass matrix of the interface trace space, in interface-local order."""
    n_gamma = len(mesh.interface_nodes)
    if n_gamma == 0:
        raise MeshError("mesh has no interface nodes")
    if mesh.dim == 1:
        return np.ones((1, 1))
    a = mesh.geometry.interface_axis
    facet_axes = [ax for k, ax in enumerate(mesh.axes) if k != a]
    shape = [len(ax) for ax in facet_axes]
    cells = tensor_cells(shape)
    grids = np.meshgrid(*facet_axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    widths = pts[cells[:, -1]] - pts[cells[:, 0]]
    _, Me = element_matrices(widths)
    return _scatter(cells, Me, n_gamma).toarray()


def _region_mask(mesh: Mesh, region: str) -> np.ndarray:
    if region == "all":
        return np.ones(len(mesh.cells), dtype=bool)
    side = Side(region)
    if mesh.side is not Side.GLOBAL:
        return np.full(len(mesh.cells), mesh.side is side)
    geom = mesh.geometry
    c = mesh.cell_centroids()[:, geom.interface_axis]
    return c < geom.interface_coord if side is Side.SLAVE else c > geom.interface_coord


def assemble_load_term(mesh: Mesh, term: SourceTerm) -> np.ndarray:
    """``int func * phi_a`` over the cells of ``term.region``."""
    N, _, w = _reference_tables(mesh.dim)
    mask = _region_mask(mesh, term.region)
    cells = mesh.cells[mask]
    out = np.zeros(mesh.n_nodes)
    if len(cells) == 0:
        return out
    lo = mesh.nodes[cells[:, 0]]
    widths = mesh.nodes[cells[:, -1]] - lo
    # quadrature points in physical coordinates, shape (C, Q, dim)
    ref = np.array(list(product(range(2), repeat=mesh.dim)))
    xq = lo[:, None, :] + _GAUSS_X[ref][None, :, :] * widths[:, None, :]
    fq = np.asarray(term.func(xq), dtype=float)
    det = np.prod(widths, axis=1)
    be = np.einsum("q,c,cq,qa->ca", w, det, fq, N)
    np.add.at(out, cells.ravel(), be.ravel())
    return out


def assemble_load(mesh: Mesh, source: SourceSpec | str, mu: ParameterSample, t: float | None = None) -> np.ndarray:
    if isinstance(source, str):
        source = get_source(source)
    out = np.zeros(mesh.n_nodes)
    for c, term in zip(source.coefficients(mu, t), source.terms):
        if c != 0.0:
            out += c * assemble_load_term(mesh, term)
    return out


def dirichlet_vector(mesh: Mesh, values: Mapping[str, float]) -> np.ndarray:
    """Full-length vector holding ``g_D`` on Dirichlet nodes and zero elsewhere."""
    g = np.zeros(mesh.n_nodes)
    for name in mesh.geometry.dirichlet_faces:
        axis, upper = parse_face(name)
        outer = mesh.geometry.hi[axis] if upper else mesh.geometry.lo[axis]
        on_face = mesh.nodes[:, axis] == outer
        g[on_face] = float(values.get(name, 0.0))
    return g


def apply_dirichlet_lift(A, index_sets: IndexSets, g_D: np.ndarray) -> np.ndarray:
    """Return ``A(internal, dirichlet) @ g_D``, the lift moved to the right-hand side."""
    g_D = np.asarray(g_D, dtype=float)
    if g_D.shape != (len(index_sets.dirichlet),):
        raise ValueError(f"g_D has shape {g_D.shape}, expected ({len(index_sets.dirichlet)},)")
    A = sp.csr_matrix(A)
    return A[index_sets.internal][:, index_sets.dirichlet] @ g_D


def h1_relative_error(u_a: np.ndarray, u_b: np.ndarray, K, M) -> float:
    """``|u_a - u_b|_H1 / |u_a|_H1`` with the discrete H1 norm ``(K + M)``."""
    u_a = np.asarray(u_a, dtype=float)
    u_b = np.asarray(u_b, dtype=float)
    if u_a.shape != u_b.shape:
        raise ValueError("vectors must have equal length")
    H = K + M
    ref = float(u_a @ (H @ u_a))
    if ref <= 0.0:
        raise ZeroDivisionError("reference field has zero H1 norm")
    d = u_a - u_b
    return math.sqrt(max(float(d @ (H @ d)), 0.0) / ref)


@dataclass(frozen=True, eq=False)
class AssembledOperators:
    """Affine FE operators of one subdomain (or of the whole box)."""

    mesh: Mesh
    index_sets: IndexSets | None
    K: sp.csr_matrix
    M: sp.csr_matrix
    M_gamma: np.ndarray | None
    f_affine: tuple[np.ndarray, ...]
    source: SourceSpec
    g_D: np.ndarray
    _chol: tuple | None = field(default=None, repr=False)

    def operator(self, theta: Sequence[float]) -> sp.csr_matrix:
        return theta[0] * self.K + theta[1] * self.M

    def load(self, mu: ParameterSample, t: float | None = None) -> np.ndarray:
        out = np.zeros(self.mesh.n_nodes)
        for c, f in zip(self.source.coefficients(mu, t), self.f_affine):
            out += c * f
        return out

    def solve_interface_mass(self, r: np.ndarray) -> np.ndarray:
        """Riesz representative ``z`` with ``M_gamma z = r`` (dense Cholesky)."""
        return la.cho_solve(self._chol, r)

    def export_matrix_market(self, prefix) -> None:
        scipy.io.mmwrite(f"{prefix}_K.mtx", self.K)
        scipy.io.mmwrite(f"{prefix}_M.mtx", self.M)
        if self.M_gamma is not None:
            scipy.io.mmwrite(f"{prefix}_Mgamma.mtx", self.M_gamma)


def assemble_operators(mesh: Mesh, source: SourceSpec | str, dirichlet_values: Mapping[str, float]) -> AssembledOperators:
    if isinstance(source, str):
        source = get_source(source)
    K, M = assemble_stiffness_mass(mesh)
    f_affine = tuple(assemble_load_term(mesh, term) for term in source.terms)
    g_D = dirichlet_vector(mesh, dirichlet_values)
    if mesh.side is Side.GLOBAL:
        return AssembledOperators(mesh, None, K, M, None, f_affine, source, g_D)
    idx = build_index_sets(mesh, mesh.side)
    M_gamma = assemble_interface_mass(mesh)
    chol = la.cho_factor(M_gamma)
    return AssembledOperators(mesh, idx, K, M, M_gamma, f_affine, source, g_D, chol)
