"""Offline training: POD bases, DEIM interface bases and precomputed couplings.

Notation used below. ``q`` runs over the affine operator terms ``(K, M)``
with coefficients ``theta(mu)``; ``p`` over the load terms. For the slave,
``T`` is a term matrix, ``I1`` the internal DoFs, ``G1`` the interface and
``D1`` the Dirichlet DoFs; ``P_D = Phi_D Phi_D[I1D]^{-1}`` lifts Dirichlet
samples to the whole slave interface.

Stored slave arrays::

    A1[q] = V1^T T[I1, I1] V1          F1[p] = V1^T f_p[I1]
    C1[q] = V1^T T[I1, G1] P_D         L1[q] = V1^T T[I1, D1] g_D

and the sampled interface residual ``S (T u - f)|G1`` split the same way
(``Rint``, ``Rgam``, ``Rdir``, ``Rf``). ``S`` maps a full slave residual to the
slave primal residual at the Neumann sample points. Master arrays are
``A2``, ``F2``, ``L2``; ``Nc`` maps those samples to the reduced master
Neumann load and ``W`` evaluates the master trace at the paired Dirichlet
points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as la

from . import _io
from .errors import EmptyTrainingError, TrainingError
from .fem import AssembledOperators
from .fom import SnapshotSet
from .mesh import Mesh
from .problems import Discretization, Problem

FORMAT = "ddrom-rom/1"
SAMPLING_MODES = ("riesz", "sampled_inverse")
NEUMANN_TRANSFERS = ("nearest", "interpolate")


@dataclass(frozen=True, eq=False)
class PodBasis:
    """Orthonormal POD basis ``V`` (N x n) and all singular values of the snapshots."""

    V: np.ndarray
    singular_values: np.ndarray
    energy_tol: float

    @property
    def n(self) -> int:
        return self.V.shape[1]

    def truncate(self, n: int) -> "PodBasis":
        if not 1 <= n <= self.n:
            raise ValueError(f"cannot truncate rank-{self.n} basis to {n}")
        return PodBasis(self.V[:, :n], self.singular_values, self.energy_tol)


def _numerical_rank(s: np.ndarray, shape) -> int:
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > s[0] * max(shape) * np.finfo(float).eps))


def pod(snapshots: np.ndarray, energy_tol: float, n_max: int | None = None) -> PodBasis:
    """Truncated thin-SVD basis of a snapshot matrix.

    Keeps the smallest ``n`` with ``sqrt(sum_{j>n} s_j^2 / sum_j s_j^2) <= energy_tol``,
    never more than the numerical rank and never more than ``n_max``. Each
    vector is signed so that its largest-magnitude entry is positive.

    Examples
    --------
    >>> s = np.array([[3.0], [4.0]])
    >>> pod(s, 1e-8).V.ravel()
    array([0.6, 0.8])
    """
    S = np.asarray(snapshots, dtype=float)
    if S.ndim != 2 or S.shape[1] == 0:
        raise ValueError("snapshot matrix needs at least one column")
    U, s, _ = np.linalg.svd(S, full_matrices=False)
    rank = _numerical_rank(s, S.shape)
    if rank == 0:
        raise ValueError("snapshot matrix is identically zero")
    energy = s**2
    # tail[k] = relative energy discarded when keeping k modes
    tail = np.sqrt(np.maximum(np.concatenate([np.cumsum(energy[::-1])[::-1], [0.0]]) / energy.sum(), 0.0))
    n = int(np.argmax(tail <= energy_tol))
    n = max(1, min(n, rank))
    if n_max is not None:
        n = min(n, int(n_max))
    V = U[:, :n].copy()
    flip = np.sign(V[np.argmax(np.abs(V), axis=0), np.arange(n)])
    V *= np.where(flip == 0, 1.0, flip)
    return PodBasis(V, s, float(energy_tol))


def deim_select(phi: np.ndarray) -> np.ndarray:
    """Greedy DEIM magic points of the columns of ``phi``, in selection order.

    The first ``m`` indices are the selection for ``phi[:, :m]``.

    Examples
    --------
    >>> deim_select(np.eye(5)[:, [3, 1]]).tolist()
    [3, 1]
    """
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    if phi.shape[0] < phi.shape[1]:
        raise ValueError("more basis vectors than rows")
    idx = [int(np.argmax(np.abs(phi[:, 0])))]
    for k in range(1, phi.shape[1]):
        B = phi[idx, :k]
        c = np.linalg.solve(B, phi[idx, k])
        res = phi[:, k] - phi[:, :k] @ c
        nxt = int(np.argmax(np.abs(res)))
        if nxt in idx or res[nxt] == 0.0:
            raise np.linalg.LinAlgError("DEIM interpolation matrix is singular; basis is rank deficient")
        idx.append(nxt)
    out = np.array(idx, dtype=np.int64)
    cond = np.linalg.cond(phi[out])
    if not np.isfinite(cond) or cond > 1e14:
        raise np.linalg.LinAlgError(f"DEIM interpolation matrix is ill conditioned (cond={cond:.3g})")
    return out


def deim_operator(phi: np.ndarray, magic: np.ndarray) -> np.ndarray:
    """``phi @ inv(phi[magic])``: rebuilds a vector from its samples at ``magic``."""
    return la.solve(phi[magic].T, phi.T).T


def interface_interpolation(points: np.ndarray, mesh: Mesh) -> np.ndarray:
    """Multilinear interpolation weights of ``mesh``'s interface trace at ``points``.

    Returns a dense ``(len(points), n_gamma)`` matrix. Points outside the
    interface are clamped to it.
    """
    a = mesh.geometry.interface_axis
    facet_axes = [ax for k, ax in enumerate(mesh.axes) if k != a]
    pts = np.delete(np.atleast_2d(points), a, axis=1)
    shape = [len(ax) for ax in facet_axes]
    out = np.zeros((len(pts), int(np.prod(shape))))
    if not facet_axes:
        out[:, 0] = 1.0
        return out
    lo_idx, frac = [], []
    for k, ax in enumerate(facet_axes):
        x = np.clip(pts[:, k], ax[0], ax[-1])
        i = np.clip(np.searchsorted(ax, x, side="right") - 1, 0, len(ax) - 2)
        lo_idx.append(i)
        frac.append((x - ax[i]) / (ax[i + 1] - ax[i]))
    rows = np.arange(len(pts))
    for bits in np.ndindex(*(2,) * len(facet_axes)):
        w = np.ones(len(pts))
        idx = [li + b for li, b in zip(lo_idx, bits)]
        for f, b in zip(frac, bits):
            w = w * (f if b else 1.0 - f)
        np.add.at(out, (rows, np.ravel_multi_index(idx, shape)), w)
    return out


def pair_magic_points(magic: Sequence[int], source_mesh: Mesh, target_mesh: Mesh) -> np.ndarray:
    """Nearest interface node of ``target_mesh`` for each interface node in ``magic``.

    Indices are interface-local on both sides. The scan runs in node order
    and keeps the last node attaining the minimum distance.
    """
    src = source_mesh.interface_points[np.asarray(magic, dtype=np.int64)]
    tgt = target_mesh.interface_points
    if len(tgt) == 0:
        raise ValueError("target mesh has no interface nodes")
    d = np.linalg.norm(src[:, None, :] - tgt[None, :, :], axis=-1)
    # argmin returns the first hit; search the reversed scan to get the last
    return (len(tgt) - 1 - np.argmin(d[:, ::-1], axis=1)).astype(np.int64)


@dataclass(frozen=True, eq=False)
class TrainedBases:
    """Full-rank POD/DEIM data from which any nested truncation is assembled."""

    V1: PodBasis
    V2: PodBasis
    phi_D: PodBasis
    phi_N: PodBasis
    magic_D: np.ndarray
    magic_N: np.ndarray
    default_ranks: dict[str, int]


def fit_bases(snapshots: SnapshotSet, tols: dict[str, float]) -> TrainedBases:
    """POD of all four snapshot sets at numerical rank, plus nested DEIM points.

    ``default_ranks`` records the ranks selected by ``tols`` (keys ``eps1``,
    ``eps2``, ``epsD``, ``epsN``).
    """
    if snapshots.n_columns == 0:
        raise EmptyTrainingError()
    ranks = {}
    full = {}
    for key, S, tol in (
        ("n1", snapshots.S1, tols.get("eps1", 1e-5)),
        ("n2", snapshots.S2, tols.get("eps2", 1e-5)),
        ("M1", snapshots.S_D, tols.get("epsD", 1e-5)),
        ("M2", snapshots.S_N, tols.get("epsN", 1e-5)),
    ):
        try:
            full[key] = pod(S, 0.0)
            ranks[key] = pod(S, tol).n
        except ValueError as exc:
            raise TrainingError("POD", f"{key}: {exc}") from exc
    try:
        magic_D = deim_select(full["M1"].V)
        magic_N = deim_select(full["M2"].V)
    except np.linalg.LinAlgError as exc:
        raise TrainingError("DEIM", str(exc)) from exc
    return TrainedBases(full["n1"], full["n2"], full["M1"], full["M2"], magic_D, magic_N, ranks)


@dataclass(frozen=True, eq=False)
class DeimInterfaceModel:
    phi_D: np.ndarray
    magic_D_slave: np.ndarray
    paired_D_master: np.ndarray
    phi_N: np.ndarray
    magic_N_master: np.ndarray
    paired_N_slave: np.ndarray
    P_D: np.ndarray
    W: np.ndarray
    Nc: np.ndarray
    C1: tuple[np.ndarray, ...]

    @property
    def M1(self) -> int:
        return len(self.magic_D_slave)

    @property
    def M2(self) -> int:
        return len(self.magic_N_master)

    @property
    def dirichlet_coupling(self) -> tuple[np.ndarray, ...]:
        """Per affine term, the slave load caused by the master reduced state (n1 x n2)."""
        return tuple(c @ self.W for c in self.C1)

    @property
    def neumann_coupling(self) -> np.ndarray:
        return self.Nc


@dataclass(frozen=True, eq=False)
class RomModel:
    """Reduced arrays of both subproblems plus the interface model."""

    problem: Problem
    V1: np.ndarray
    V2: np.ndarray
    A1: tuple[np.ndarray, ...]
    F1: tuple[np.ndarray, ...]
    L1: tuple[np.ndarray, ...]
    A2: tuple[np.ndarray, ...]
    F2: tuple[np.ndarray, ...]
    L2: tuple[np.ndarray, ...]
    Rint: tuple[np.ndarray, ...]
    Rgam: tuple[np.ndarray, ...]
    Rdir: tuple[np.ndarray, ...]
    Rf: tuple[np.ndarray, ...]
    G: np.ndarray
    deim: DeimInterfaceModel
    internal1: np.ndarray
    gamma1: np.ndarray
    g_D1: np.ndarray
    internal2: np.ndarray
    gamma2: np.ndarray
    g_D2: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n1(self) -> int:
        return self.V1.shape[1]

    @property
    def n2(self) -> int:
        return self.V2.shape[1]

    @property
    def ranks(self) -> dict[str, int]:
        return {"n1": self.n1, "n2": self.n2, "M1": self.deim.M1, "M2": self.deim.M2}

    @property
    def A_n_affine(self):
        return {"slave": self.A1, "master": self.A2}

    @property
    def f_n_affine(self):
        return {"slave": self.F1, "master": self.F2}

    @property
    def lift_terms(self):
        return {"slave": self.L1, "master": self.L2}

    def save(self, path) -> None:
        arrays = {
            "V1": self.V1, "V2": self.V2, "G": self.G,
            "internal1": self.internal1, "gamma1": self.gamma1, "g_D1": self.g_D1,
            "internal2": self.internal2, "gamma2": self.gamma2, "g_D2": self.g_D2,
        }
        for name in ("A1", "F1", "L1", "A2", "F2", "L2", "Rint", "Rgam", "Rdir", "Rf"):
            for k, a in enumerate(getattr(self, name)):
                arrays[f"{name}_{k}"] = a
        d = self.deim
        for name in ("phi_D", "magic_D_slave", "paired_D_master", "phi_N", "magic_N_master", "paired_N_slave", "P_D", "W", "Nc"):
            arrays[f"deim_{name}"] = getattr(d, name)
        for k, a in enumerate(d.C1):
            arrays[f"deim_C1_{k}"] = a
        meta = {
            "format": FORMAT,
            "problem": self.problem.to_dict(),
            "n_terms": {"q": len(self.A1), "p": len(self.F1)},
            "ranks": self.ranks,
            "meta": self.meta,
        }
        _io.save_bundle(path, arrays, meta)

    @classmethod
    def load(cls, path) -> "RomModel":
        arrays, meta = _io.load_bundle(path)
        if meta.get("format") != FORMAT:
            raise ValueError(f"{path} is not a reduced model ({meta.get('format')!r})")
        nq, np_ = meta["n_terms"]["q"], meta["n_terms"]["p"]

        def terms(name, n):
            return tuple(arrays[f"{name}_{k}"] for k in range(n))

        deim = DeimInterfaceModel(
            **{n: arrays[f"deim_{n}"] for n in (
                "phi_D", "magic_D_slave", "paired_D_master", "phi_N", "magic_N_master", "paired_N_slave", "P_D", "W", "Nc")},
            C1=terms("deim_C1", nq),
        )
        return cls(
            problem=Problem.from_dict(meta["problem"]),
            V1=arrays["V1"], V2=arrays["V2"],
            A1=terms("A1", nq), F1=terms("F1", np_), L1=terms("L1", nq),
            A2=terms("A2", nq), F2=terms("F2", np_), L2=terms("L2", nq),
            Rint=terms("Rint", nq), Rgam=terms("Rgam", nq), Rdir=terms("Rdir", nq), Rf=terms("Rf", np_),
            G=arrays["G"], deim=deim,
            internal1=arrays["internal1"], gamma1=arrays["gamma1"], g_D1=arrays["g_D1"],
            internal2=arrays["internal2"], gamma2=arrays["gamma2"], g_D2=arrays["g_D2"],
            meta=meta.get("meta", {}),
        )


def precompute_couplings(
    V1: np.ndarray,
    V2: np.ndarray,
    phi_D: np.ndarray,
    phi_N: np.ndarray,
    magic_D: np.ndarray,
    paired_D: np.ndarray,
    magic_N: np.ndarray,
    paired_N: np.ndarray,
    ops1: AssembledOperators,
    ops2: AssembledOperators,
    sampling: str = "riesz",
    neumann_transfer: str = "nearest",
) -> dict:
    """Offline products linking the two reduced subproblems.

    ``sampling='riesz'`` samples the exact slave primal residual
    ``M_G1^{-1} r_G1``; ``'sampled_inverse'`` samples the residual itself and
    applies the sampled block of ``M_G1^{-1}``. ``neumann_transfer`` picks how
    a master Neumann point reads the slave primal residual: the value at the
    paired nearest node, or the multilinear interpolant at its location.
    """
    if sampling not in SAMPLING_MODES:
        raise ValueError(f"sampling must be one of {SAMPLING_MODES}")
    if neumann_transfer not in NEUMANN_TRANSFERS:
        raise ValueError(f"neumann_transfer must be one of {NEUMANN_TRANSFERS}")
    if sampling == "sampled_inverse" and neumann_transfer != "nearest":
        raise ValueError("sampled_inverse sampling needs nearest-node Neumann transfer")
    i1, i2 = ops1.index_sets, ops2.index_sets
    if V1.shape[0] != i1.n_internal or V2.shape[0] != i2.n_internal:
        raise ValueError("basis row counts do not match the subdomain internal DoFs")
    if phi_D.shape[0] != i1.n_gamma or phi_N.shape[0] != i2.n_gamma:
        raise ValueError("interface basis row counts do not match the interface sizes")
    P_D = deim_operator(phi_D, magic_D)
    P_N = deim_operator(phi_N, magic_N)
    gD1 = ops1.g_D[i1.dirichlet]
    gD2 = ops2.g_D[i2.dirichlet]

    Minv = ops1.solve_interface_mass(np.eye(i1.n_gamma))
    if neumann_transfer == "interpolate":
        S = interface_interpolation(ops2.mesh.interface_points[magic_N], ops1.mesh) @ Minv
        Binv = np.eye(len(paired_N))
    elif sampling == "riesz":
        S = Minv[paired_N]
        Binv = np.eye(len(paired_N))
    else:
        S = np.eye(i1.n_gamma)[paired_N]
        Binv = Minv[np.ix_(paired_N, paired_N)]

    out = {k: [] for k in ("A1", "C1", "L1", "Rint", "Rgam", "Rdir", "A2", "L2")}
    for T1, T2 in ((ops1.K, ops2.K), (ops1.M, ops2.M)):
        r1 = T1[i1.internal]
        g1 = T1[i1.gamma]
        out["A1"].append(V1.T @ (r1[:, i1.internal] @ V1))
        out["C1"].append(V1.T @ (r1[:, i1.gamma] @ P_D))
        out["L1"].append(V1.T @ (r1[:, i1.dirichlet] @ gD1))
        out["Rint"].append(S @ (g1[:, i1.internal] @ V1))
        out["Rgam"].append(S @ (g1[:, i1.gamma] @ P_D))
        out["Rdir"].append(S @ (g1[:, i1.dirichlet] @ gD1))
        r2 = T2[i2.internal]
        out["A2"].append(V2.T @ (r2[:, i2.internal] @ V2))
        out["L2"].append(V2.T @ (r2[:, i2.dirichlet] @ gD2))
    out["F1"] = [V1.T @ f[i1.internal] for f in ops1.f_affine]
    out["Rf"] = [S @ f[i1.gamma] for f in ops1.f_affine]
    out["F2"] = [V2.T @ f[i2.internal] for f in ops2.f_affine]

    gpos = i2.gamma_in_internal
    out["W"] = V2[gpos[paired_D]]
    out["Nc"] = V2[gpos].T @ (ops2.M_gamma @ P_N) @ Binv
    out["P_D"] = P_D
    out["G"] = P_D.T @ P_D
    return out


def assemble_rom(
    bases: TrainedBases,
    disc: Discretization,
    n1: int | None = None,
    n2: int | None = None,
    M1: int | None = None,
    M2: int | None = None,
    sampling: str = "riesz",
    neumann_transfer: str = "nearest",
    meta: dict | None = None,
) -> RomModel:
    """Reduced model at the requested nested ranks.

    Unspecified ranks fall back to ``bases.default_ranks``; when neither
    ``M1`` nor ``M2`` is given both take the larger default, clipped to the
    available interface ranks.
    """
    r = bases.default_ranks
    n1 = r["n1"] if n1 is None else n1
    n2 = r["n2"] if n2 is None else n2
    if M1 is None and M2 is None:
        M1 = M2 = max(r["M1"], r["M2"])
        M1, M2 = min(M1, bases.phi_D.n), min(M2, bases.phi_N.n)
    M1 = r["M1"] if M1 is None else M1
    M2 = r["M2"] if M2 is None else M2
    for name, val, avail in (("n1", n1, bases.V1.n), ("n2", n2, bases.V2.n), ("M1", M1, bases.phi_D.n), ("M2", M2, bases.phi_N.n)):
        if not 1 <= val <= avail:
            raise TrainingError("RANK", f"{name}={val} outside trained range [1, {avail}]")
    ops1, ops2 = disc.slave, disc.master
    V1 = bases.V1.V[:, :n1]
    V2 = bases.V2.V[:, :n2]
    phi_D = bases.phi_D.V[:, :M1]
    phi_N = bases.phi_N.V[:, :M2]
    magic_D = bases.magic_D[:M1]
    magic_N = bases.magic_N[:M2]
    paired_D = pair_magic_points(magic_D, ops1.mesh, ops2.mesh)
    paired_N = pair_magic_points(magic_N, ops2.mesh, ops1.mesh)
    c = precompute_couplings(V1, V2, phi_D, phi_N, magic_D, paired_D, magic_N, paired_N, ops1, ops2, sampling, neumann_transfer)
    deim = DeimInterfaceModel(
        phi_D, magic_D, paired_D, phi_N, magic_N, paired_N, c["P_D"], c["W"], c["Nc"], tuple(c["C1"])
    )
    i1, i2 = ops1.index_sets, ops2.index_sets
    info = {"sampling": sampling, "neumann_transfer": neumann_transfer, "default_ranks": dict(r)}
    info.update(meta or {})
    return RomModel(
        problem=disc.problem,
        V1=V1, V2=V2,
        A1=tuple(c["A1"]), F1=tuple(c["F1"]), L1=tuple(c["L1"]),
        A2=tuple(c["A2"]), F2=tuple(c["F2"]), L2=tuple(c["L2"]),
        Rint=tuple(c["Rint"]), Rgam=tuple(c["Rgam"]), Rdir=tuple(c["Rdir"]), Rf=tuple(c["Rf"]),
        G=c["G"], deim=deim,
        internal1=i1.internal, gamma1=i1.gamma, g_D1=ops1.g_D.copy(),
        internal2=i2.internal, gamma2=i2.gamma, g_D2=ops2.g_D.copy(),
        meta=info,
    )


def train(
    snapshots: SnapshotSet,
    tols: dict[str, float],
    disc: Discretization,
    ranks: dict[str, int] | None = None,
    sampling: str = "riesz",
    neumann_transfer: str = "nearest",
) -> RomModel:
    """POD, DEIM, pairing and coupling precomputation in one call."""
    bases = fit_bases(snapshots, tols)
    ranks = ranks or {}
    try:
        return assemble_rom(bases, disc, sampling=sampling, neumann_transfer=neumann_transfer, meta={"tols": dict(tols), "n_snapshots": snapshots.n_columns}, **ranks)
    except ValueError as exc:
        raise TrainingError("COUPLING", str(exc)) from exc
