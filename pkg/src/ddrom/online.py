"""Online reduced Dirichlet-Neumann iteration.

The online unknown passed across the interface is ``lam``, the master trace at
the ``M1`` paired Dirichlet points. One sweep:

1. slave solve ``A1(mu) un1 = b1 - C1(mu) lam``;
2. primal-residual samples ``z = Rint(mu) un1 + Rgam(mu) lam + r0``;
3. master solve ``A2(mu) un2 = b2 - Nc z``;
4. master trace at the paired points ``s = W un2``;
5. stop if ``|P_D (lam - s)| < tol``, otherwise relax ``lam <- omega s + (1 - omega) lam``.

Everything is ``O(n1 + n2 + M1 + M2)`` in size; no full-order matrix is touched.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as la

from .fem import ParameterSample, TimeScheme
from .fom import DnConfig
from .offline import RomModel


@dataclass(eq=False)
class RomState:
    un1: np.ndarray
    un2: np.ndarray
    lam: np.ndarray
    u_gamma1: np.ndarray
    master_trace_at_pairs: np.ndarray
    r_slave_at_magic: np.ndarray
    iters: int
    converged: bool
    gap_history: list[float] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def gap(self) -> float:
        return self.gap_history[-1] if self.gap_history else float("nan")

    def diagnostics(self, mu: ParameterSample | None = None) -> dict:
        rec = {
            "iters": self.iters,
            "converged": self.converged,
            "gap": self.gap,
            "gap_history": list(self.gap_history),
            "timings": dict(self.timings),
            "n1": len(self.un1),
            "n2": len(self.un2),
        }
        if mu is not None:
            rec["mu"] = {k: v for k, v in asdict(mu).items() if v is not None}
        return rec

    def to_json(self, mu: ParameterSample | None = None) -> str:
        return json.dumps(self.diagnostics(mu), sort_keys=True)


def _combine(terms, coeffs):
    out = coeffs[0] * terms[0]
    for c, t in zip(coeffs[1:], terms[1:]):
        out = out + c * t
    return out


DIVERGENCE_FACTOR = 1e8


class _Online:
    """Parameter-dependent reduced matrices, factorized once per ``mu``."""

    def __init__(self, model: RomModel, mu: ParameterSample, theta):
        self.model = model
        m = model
        self.theta = np.asarray(theta, dtype=float)
        self.A1 = la.lu_factor(_combine(m.A1, self.theta))
        self.A2 = la.lu_factor(_combine(m.A2, self.theta))
        self.C1 = _combine(m.deim.C1, self.theta)
        self.Rint = _combine(m.Rint, self.theta)
        self.Rgam = _combine(m.Rgam, self.theta)
        self.lift1 = _combine(m.L1, self.theta)
        self.lift2 = _combine(m.L2, self.theta)
        self.rdir = _combine(m.Rdir, self.theta)
        self.mu = mu

    def loads(self, t=None, prev=None, dt=None):
        """Right-hand sides ``b1``, ``b2`` and the residual offset ``r0``."""
        m = self.model
        c = m.problem.source_spec.coefficients(self.mu, t)
        n1, n2, M2 = m.n1, m.n2, m.deim.M2
        f1 = _combine(m.F1, c) if len(c) else np.zeros(n1)
        f2 = _combine(m.F2, c) if len(c) else np.zeros(n2)
        rf = _combine(m.Rf, c) if len(c) else np.zeros(M2)
        if prev is not None:
            un1p, lamp, un2p = prev
            # previous state enters through the mass terms only
            f1 = f1 + (m.A1[1] @ un1p + m.deim.C1[1] @ lamp + m.L1[1]) / dt
            rf = rf + (m.Rint[1] @ un1p + m.Rgam[1] @ lamp + m.Rdir[1]) / dt
            f2 = f2 + (m.A2[1] @ un2p + m.L2[1]) / dt
        return f1 - self.lift1, f2 - self.lift2, self.rdir - rf

    def iterate(self, b1, b2, r0, cfg: DnConfig, lam0: np.ndarray) -> RomState:
        m = self.model
        G = m.G
        lam = lam0.copy()
        history = []
        converged = False
        for k in range(1, cfg.max_iters + 1):
            un1 = la.lu_solve(self.A1, b1 - self.C1 @ lam)
            z = self.Rint @ un1 + self.Rgam @ lam + r0
            un2 = la.lu_solve(self.A2, b2 - m.deim.Nc @ z)
            s = m.deim.W @ un2
            d = lam - s
            gap = float(np.sqrt(max(d @ (G @ d), 0.0)))
            history.append(gap)
            if gap < cfg.tol_interface:
                converged = True
                break
            if not np.isfinite(gap) or gap > DIVERGENCE_FACTOR * max(history[0], 1.0):
                # a very poor reduced slave can make the relaxed map expansive
                break
            lam = cfg.omega * s + (1.0 - cfg.omega) * lam
        return RomState(
            un1=un1,
            un2=un2,
            lam=lam,
            u_gamma1=m.deim.P_D @ lam,
            master_trace_at_pairs=s,
            r_slave_at_magic=z,
            iters=k,
            converged=converged,
            gap_history=history,
        )


def _initial(model: RomModel, cfg: DnConfig) -> np.ndarray:
    if cfg.initial_guess is None:
        return np.zeros(model.deim.M1)
    g = np.asarray(cfg.initial_guess, dtype=float)
    if g.shape == (model.deim.M1,):
        return g.copy()
    if g.shape == (len(model.gamma2),):
        return g[model.deim.paired_D_master]
    raise ValueError(f"initial guess of shape {g.shape} fits neither the master interface nor the paired points")


def _check_mu(model: RomModel, mu: ParameterSample) -> None:
    if not isinstance(mu, ParameterSample):
        raise TypeError("mu must be a ParameterSample")


def rom_solve(model: RomModel, mu: ParameterSample, cfg: DnConfig = DnConfig()) -> RomState:
    """Reduced steady DN solve; non-convergence is flagged, not raised.

    The loop stops early, unconverged, once the gap exceeds
    ``DIVERGENCE_FACTOR`` times its first value.
    """
    _check_mu(model, mu)
    if model.problem.unsteady:
        raise ValueError("model was trained on an unsteady problem; use rom_solve_unsteady")
    t0 = time.perf_counter()
    on = _Online(model, mu, model.problem.theta(mu))
    b1, b2, r0 = on.loads()
    t1 = time.perf_counter()
    state = on.iterate(b1, b2, r0, cfg, _initial(model, cfg))
    t2 = time.perf_counter()
    state.timings = {"setup": t1 - t0, "iterate": t2 - t1, "total": t2 - t0}
    return state


def rom_solve_unsteady(model: RomModel, mu: ParameterSample, cfg: DnConfig, scheme: TimeScheme) -> list[RomState]:
    """Backward Euler from zero; each step warm-starts from the previous master samples."""
    _check_mu(model, mu)
    t0 = time.perf_counter()
    on = _Online(model, mu, model.problem.theta(mu, scheme.dt))
    setup = time.perf_counter() - t0
    prev = (np.zeros(model.n1), np.zeros(model.deim.M1), np.zeros(model.n2))
    lam = _initial(model, cfg)
    states = []
    for n in range(1, scheme.n_steps + 1):
        t1 = time.perf_counter()
        b1, b2, r0 = on.loads(scheme.time(n), prev, scheme.dt)
        st = on.iterate(b1, b2, r0, cfg, lam)
        elapsed = time.perf_counter() - t1
        st.timings = {"setup": setup if n == 1 else 0.0, "iterate": elapsed, "total": elapsed + (setup if n == 1 else 0.0)}
        states.append(st)
        prev = (st.un1, st.lam, st.un2)
        lam = st.master_trace_at_pairs
    return states


def reconstruct(model: RomModel, state: RomState) -> tuple[np.ndarray, np.ndarray]:
    """Full slave and master vectors from a reduced state."""
    u1 = model.g_D1.copy()
    u1[model.internal1] = model.V1 @ state.un1
    u1[model.gamma1] = model.deim.P_D @ state.lam
    u2 = model.g_D2.copy()
    u2[model.internal2] = model.V2 @ state.un2
    return u1, u2
