"""Full-order Dirichlet-Neumann coupled solver and snapshot generation.

Per iteration ``k``:

1. slave (Dirichlet) solve with trace ``u_G1 = R12 lam^k``;
2. slave interface residual ``r_G1 = (A1 u_N1 - f_N1)|G1``;
3. master (Neumann) solve with ``r_G2 = -M_G2 R21 M_G1^{-1} r_G1``
   scatter-added into the interface rows;
4. stop when ``|u_G1 - R12 u_G2| < tol`` (both traces from this sweep),
   else relax ``lam^{k+1} = omega u_G2 + (1 - omega) lam^k``.

In the conforming case the residual transfer collapses to ``r_G2 = -r_G1``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse.linalg as spla

from . import _io
from .errors import NonConvergedError, SingularSystemError
from .fem import AssembledOperators, ParameterSample, TimeScheme, assemble_operators
from .mesh import Conformity, Mesh, Side, build_global_mesh, conformity_check, node_map
from .problems import Discretization, Problem


@dataclass(frozen=True)
class DnConfig:
    omega: float = 0.25
    tol_interface: float = 1e-10
    max_iters: int = 200
    initial_guess: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 < self.omega <= 1.0:
            raise ValueError("omega must lie in (0, 1]")
        if not self.tol_interface > 0:
            raise ValueError("tol_interface must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass(frozen=True, eq=False)
class InterfaceTransfer:
    """Interface interpolation ``R12: G2 -> G1`` and ``R21: G1 -> G2``."""

    R12: np.ndarray
    R21: np.ndarray
    conforming: bool = False

    @classmethod
    def identity(cls, n: int) -> "InterfaceTransfer":
        eye = np.eye(n)
        return cls(eye, eye, conforming=True)

    @classmethod
    def nearest_node(cls, slave: Mesh, master: Mesh) -> "InterfaceTransfer":
        """Piecewise-constant transfer by nearest interface node in each direction."""
        from .offline import pair_magic_points

        n1, n2 = len(slave.interface_nodes), len(master.interface_nodes)
        R12 = np.zeros((n1, n2))
        R12[np.arange(n1), pair_magic_points(np.arange(n1), slave, master)] = 1.0
        R21 = np.zeros((n2, n1))
        R21[np.arange(n2), pair_magic_points(np.arange(n2), master, slave)] = 1.0
        return cls(R12, R21, conforming=False)


@dataclass(eq=False)
class FomState:
    u1_full: np.ndarray
    u2_full: np.ndarray
    u_gamma1: np.ndarray
    u_gamma2: np.ndarray
    r_gamma1: np.ndarray
    r_gamma2: np.ndarray
    z_gamma1: np.ndarray
    z_gamma2: np.ndarray
    iters: int
    converged: bool
    gap_history: list[float] = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def gap(self) -> float:
        return self.gap_history[-1] if self.gap_history else float("nan")


class SubdomainSolver:
    """Factorized interior block of ``A(theta)`` for one subdomain."""

    def __init__(self, ops: AssembledOperators, theta: Sequence[float]):
        self.ops = ops
        idx = ops.index_sets
        self.A = ops.operator(theta).tocsr()
        A_i = self.A[idx.internal]
        self.A_ii = A_i[:, idx.internal].tocsc()
        self.A_ig = A_i[:, idx.gamma].tocsr()
        self.lift = A_i[:, idx.dirichlet] @ ops.g_D[idx.dirichlet]
        try:
            self._lu = spla.splu(self.A_ii)
        except RuntimeError as exc:
            raise SingularSystemError(f"{idx.side.value} subdomain system is singular: {exc}") from exc
        if idx.side is Side.MASTER:
            self._gpos = idx.gamma_in_internal

    def _solve(self, b: np.ndarray) -> np.ndarray:
        x = self._lu.solve(b)
        # one step of iterative refinement keeps interface residuals at round-off
        x += self._lu.solve(b - self.A_ii @ x)
        if not np.all(np.isfinite(x)):
            raise SingularSystemError("subdomain solve produced non-finite values")
        return x

    def _full(self, u_internal: np.ndarray, u_gamma: np.ndarray | None = None) -> np.ndarray:
        idx = self.ops.index_sets
        u = self.ops.g_D.copy()
        u[idx.internal] = u_internal
        if u_gamma is not None:
            u[idx.gamma] = u_gamma
        return u

    def dirichlet_solve(self, f_N: np.ndarray, u_gamma: np.ndarray) -> np.ndarray:
        idx = self.ops.index_sets
        b = f_N[idx.internal] - self.lift - self.A_ig @ u_gamma
        return self._full(self._solve(b), u_gamma)

    def neumann_solve(self, f_N: np.ndarray, r_gamma: np.ndarray) -> np.ndarray:
        idx = self.ops.index_sets
        b = f_N[idx.internal] - self.lift
        b[self._gpos] += r_gamma
        return self._full(self._solve(b))

    def residual(self, u_full: np.ndarray, f_N: np.ndarray) -> np.ndarray:
        g = self.ops.index_sets.gamma
        return self.A[g] @ u_full - f_N[g]


def _transfer_for(ops1: AssembledOperators, ops2: AssembledOperators, transfer):
    if transfer is not None:
        return transfer
    if conformity_check(ops1.mesh, ops2.mesh) is not Conformity.CONFORMING:
        raise ValueError("non-conforming meshes need an explicit InterfaceTransfer")
    return InterfaceTransfer.identity(ops1.index_sets.n_gamma)


def _dn_loop(s1: SubdomainSolver, s2: SubdomainSolver, f1, f2, transfer: InterfaceTransfer, cfg: DnConfig, lam):
    ops1, ops2 = s1.ops, s2.ops
    g2 = ops2.index_sets.gamma
    history = []
    converged = False
    for k in range(1, cfg.max_iters + 1):
        u_g1 = transfer.R12 @ lam
        u1 = s1.dirichlet_solve(f1, u_g1)
        r1 = s1.residual(u1, f1)
        if transfer.conforming:
            r2 = -r1
        else:
            r2 = -(ops2.M_gamma @ (transfer.R21 @ ops1.solve_interface_mass(r1)))
        u2 = s2.neumann_solve(f2, r2)
        u_g2 = u2[g2]
        gap = float(np.linalg.norm(u_g1 - transfer.R12 @ u_g2))
        history.append(gap)
        if gap < cfg.tol_interface:
            converged = True
            break
        lam = cfg.omega * u_g2 + (1.0 - cfg.omega) * lam
    r2_meas = s2.residual(u2, f2)
    return FomState(
        u1_full=u1,
        u2_full=u2,
        u_gamma1=u_g1,
        u_gamma2=u_g2,
        r_gamma1=r1,
        r_gamma2=r2_meas,
        z_gamma1=ops1.solve_interface_mass(r1),
        z_gamma2=ops2.solve_interface_mass(r2_meas),
        iters=k,
        converged=converged,
        gap_history=history,
    )


def _initial_lam(ops2: AssembledOperators, cfg: DnConfig) -> np.ndarray:
    n = ops2.index_sets.n_gamma
    if cfg.initial_guess is None:
        return np.zeros(n)
    lam = np.asarray(cfg.initial_guess, dtype=float)
    if lam.shape != (n,):
        raise ValueError(f"initial guess has shape {lam.shape}, expected ({n},)")
    return lam.copy()


def dn_solve_fom(
    ops1: AssembledOperators,
    ops2: AssembledOperators,
    mu: ParameterSample,
    cfg: DnConfig = DnConfig(),
    transfer: InterfaceTransfer | None = None,
    theta: Sequence[float] | None = None,
) -> FomState:
    """Steady Dirichlet-Neumann solve; ``theta`` defaults to ``(alpha, beta)``.

    Hitting ``max_iters`` is reported through ``converged=False``.
    """
    t0 = time.perf_counter()
    transfer = _transfer_for(ops1, ops2, transfer)
    theta = (mu.alpha, mu.beta) if theta is None else theta
    s1, s2 = SubdomainSolver(ops1, theta), SubdomainSolver(ops2, theta)
    state = _dn_loop(s1, s2, ops1.load(mu), ops2.load(mu), transfer, cfg, _initial_lam(ops2, cfg))
    state.elapsed = time.perf_counter() - t0
    return state


def dn_solve_fom_unsteady(
    ops1: AssembledOperators,
    ops2: AssembledOperators,
    mu: ParameterSample,
    cfg: DnConfig,
    scheme: TimeScheme,
    transfer: InterfaceTransfer | None = None,
) -> list[FomState]:
    """Backward Euler from ``u = 0`` with a DN loop per step.

    Each step solves ``(M/dt + alpha K) u^{n+1} = M u^n / dt + f^{n+1}``; the
    loop of step ``n+1`` starts from the converged master trace of step ``n``.
    """
    transfer = _transfer_for(ops1, ops2, transfer)
    theta = (mu.alpha, 1.0 / scheme.dt)
    t0 = time.perf_counter()
    s1, s2 = SubdomainSolver(ops1, theta), SubdomainSolver(ops2, theta)
    setup = time.perf_counter() - t0
    u1 = np.zeros(ops1.mesh.n_nodes)
    u2 = np.zeros(ops2.mesh.n_nodes)
    lam = _initial_lam(ops2, cfg)
    states = []
    for n in range(1, scheme.n_steps + 1):
        t0 = time.perf_counter()
        t = scheme.time(n)
        f1 = ops1.load(mu, t) + (ops1.M @ u1) / scheme.dt
        f2 = ops2.load(mu, t) + (ops2.M @ u2) / scheme.dt
        st = _dn_loop(s1, s2, f1, f2, transfer, cfg, lam)
        st.elapsed = time.perf_counter() - t0 + (setup if n == 1 else 0.0)
        states.append(st)
        u1, u2, lam = st.u1_full, st.u2_full, st.u_gamma2
    return states


def monolithic_solve(problem: Problem, mu: ParameterSample, n_cells_slave=None, n_cells_master=None):
    """Direct solve of the undecomposed steady problem on one conforming mesh.

    Returns ``(mesh, u)``. Default resolutions are the problem's slave cell
    counts extended conformingly to the master box.
    """
    from .mesh import conforming_counts

    g = problem.geometry
    cs = problem.cells_slave if n_cells_slave is None else n_cells_slave
    cm = conforming_counts(g, cs, Side.SLAVE) if n_cells_master is None else n_cells_master
    mesh = build_global_mesh(g, cs, cm)
    ops = assemble_operators(mesh, problem.source_spec, problem.dirichlet_values)
    return mesh, solve_global(ops, problem.theta(mu), ops.load(mu))


def solve_global(ops: AssembledOperators, theta, f: np.ndarray) -> np.ndarray:
    A = ops.operator(theta).tocsr()
    dirichlet = np.flatnonzero(ops.mesh.tags == 1)
    free = np.setdiff1d(np.arange(ops.mesh.n_nodes), dirichlet)
    u = ops.g_D.copy()
    b = f[free] - A[free][:, dirichlet] @ u[dirichlet]
    A_ff = A[free][:, free].tocsc()
    try:
        lu = spla.splu(A_ff)
    except RuntimeError as exc:
        raise SingularSystemError(f"global system is singular: {exc}") from exc
    x = lu.solve(b)
    x += lu.solve(b - A_ff @ x)
    u[free] = x
    return u


# --- snapshots -----------------------------------------------------------------


@dataclass(eq=False)
class SnapshotSet:
    """Converged snapshots, one column per parameter (and time step).

    ``S1``/``S2`` hold slave/master solutions on their internal DoFs, ``S_D``
    the slave interface traces and ``S_N`` the master primal residuals.
    """

    S1: np.ndarray
    S2: np.ndarray
    S_D: np.ndarray
    S_N: np.ndarray
    params: list[ParameterSample]
    param_names: tuple[str, ...]
    times: list[float | None] = field(default_factory=list)
    iters_slave_res: list[int] = field(default_factory=list)
    iters_master_res: list[int] = field(default_factory=list)

    def __post_init__(self):
        n = self.S1.shape[1]
        if not (self.S2.shape[1] == self.S_D.shape[1] == self.S_N.shape[1] == n == len(self.params)):
            raise ValueError("snapshot matrices and parameter list disagree on column count")

    @property
    def n_columns(self) -> int:
        return self.S1.shape[1]

    def save(self, path) -> None:
        meta = {
            "format": "ddrom-snapshots/1",
            "param_names": list(self.param_names),
            "params": [p.values(self.param_names) for p in self.params],
            "t_index": [p.t_index for p in self.params],
            "times": list(self.times),
            "iters_slave_res": list(self.iters_slave_res),
            "iters_master_res": list(self.iters_master_res),
        }
        _io.save_bundle(path, {"S1": self.S1, "S2": self.S2, "S_D": self.S_D, "S_N": self.S_N}, meta)

    @classmethod
    def load(cls, path) -> "SnapshotSet":
        arrays, meta = _io.load_bundle(path)
        if meta.get("format") != "ddrom-snapshots/1":
            raise ValueError(f"{path} is not a snapshot set")
        names = tuple(meta["param_names"])
        params = [
            ParameterSample(**dict(zip(names, v)), t_index=ti) for v, ti in zip(meta["params"], meta["t_index"])
        ]
        return cls(
            arrays["S1"], arrays["S2"], arrays["S_D"], arrays["S_N"], params, names,
            meta["times"], meta["iters_slave_res"], meta["iters_master_res"],
        )


def twin_solve(disc: Discretization, mu: ParameterSample, cfg: DnConfig, scheme: TimeScheme | None = None):
    """Solve on both twin conforming discretizations.

    Returns ``(at_slave_res, at_master_res)``: lists of :class:`FomState`,
    one per time step (a single entry for steady problems).
    """
    out = []
    for ops1, ops2 in (disc.slave_res, disc.master_res):
        if disc.problem.unsteady:
            out.append(dn_solve_fom_unsteady(ops1, ops2, mu, cfg, scheme))
        else:
            out.append([dn_solve_fom(ops1, ops2, mu, cfg, theta=disc.problem.theta(mu))])
    return out[0], out[1]


def generate_snapshots(
    disc: Discretization,
    params: Sequence[ParameterSample],
    cfg: DnConfig = DnConfig(),
    scheme: TimeScheme | None = None,
) -> SnapshotSet:
    """Collect slave data at the slave resolution and master data at the master resolution.

    Raises NonConvergedError naming the first parameter whose DN loop failed.
    """
    problem = disc.problem
    if problem.unsteady and scheme is None:
        raise ValueError("unsteady problem needs a TimeScheme")
    i1 = disc.slave.index_sets
    i2 = disc.master.index_sets
    cols = {"S1": [], "S2": [], "S_D": [], "S_N": []}
    plist, times, it_s, it_m = [], [], [], []
    for mu in params:
        run_s, run_m = twin_solve(disc, mu, cfg, scheme)
        for step, (sc, sf) in enumerate(zip(run_s, run_m), start=1):
            for st in (sc, sf):
                if not st.converged:
                    raise NonConvergedError(
                        f"DN loop did not converge for mu={mu} (step {step}) after {st.iters} iterations",
                        mu=mu, iters=st.iters, gap=st.gap,
                    )
            cols["S1"].append(sc.u1_full[i1.internal])
            cols["S_D"].append(sc.u_gamma1)
            cols["S2"].append(sf.u2_full[i2.internal])
            cols["S_N"].append(sf.z_gamma2)
            if problem.unsteady:
                plist.append(ParameterSample(**{n: getattr(mu, n) for n in problem.param_names}, t_index=step))
                times.append(scheme.time(step))
            else:
                plist.append(mu)
                times.append(None)
            it_s.append(sc.iters)
            it_m.append(sf.iters)

    def stack(name, rows):
        return np.column_stack(cols[name]) if cols[name] else np.zeros((rows, 0))

    return SnapshotSet(
        stack("S1", i1.n_internal),
        stack("S2", i2.n_internal),
        stack("S_D", i1.n_gamma),
        stack("S_N", i2.n_gamma),
        plist,
        problem.param_names,
        times,
        it_s,
        it_m,
    )


def subdomain_node_maps(problem: Problem, ops1: AssembledOperators, ops2: AssembledOperators, global_mesh: Mesh):
    """Positions of each subdomain's nodes in a conforming global mesh."""
    return node_map(global_mesh, ops1.mesh), node_map(global_mesh, ops2.mesh)
