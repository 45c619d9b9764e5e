"""Problem definitions and their twin conforming discretizations.

A :class:`Problem` fixes the PDE family, the split box, boundary data and the
two subdomain resolutions. :func:`discretize` builds the two conforming
global discretizations used to produce snapshots: one extends the slave
resolution to the master box, the other extends the master resolution to the
slave box. The slave mesh of the first and the master mesh of the second form
the non-conforming pair the reduced model runs on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .fem import AssembledOperators, ParameterSample, SourceSpec, assemble_operators, get_source
from .mesh import BoxGeometry, Conformity, Side, build_subdomain_mesh, conformity_check, conforming_counts

KINDS = {
    "diffusion_reaction": ("test1", ("alpha", "beta")),
    "diffusion_reaction_sources": ("test2", ("alpha", "beta", "gamma1", "gamma2")),
    "heat": ("heat", ("alpha",)),
}


@dataclass(frozen=True, eq=False)
class Problem:
    kind: str
    geometry: BoxGeometry
    cells_slave: tuple[int, ...]
    cells_master: tuple[int, ...]
    source: str | None = None
    dirichlet_values: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}; known: {sorted(KINDS)}")
        if self.source is None:
            object.__setattr__(self, "source", KINDS[self.kind][0])
        get_source(self.source)
        object.__setattr__(self, "cells_slave", tuple(int(c) for c in self.cells_slave))
        object.__setattr__(self, "cells_master", tuple(int(c) for c in self.cells_master))
        object.__setattr__(self, "dirichlet_values", {k: float(v) for k, v in self.dirichlet_values.items()})

    @property
    def unsteady(self) -> bool:
        return self.kind == "heat"

    @property
    def param_names(self) -> tuple[str, ...]:
        return KINDS[self.kind][1]

    @property
    def source_spec(self) -> SourceSpec:
        return get_source(self.source)

    def theta(self, mu: ParameterSample, dt: float | None = None) -> tuple[float, float]:
        """Coefficients of ``(K, M)`` in the subdomain operator."""
        if self.unsteady:
            if dt is None:
                raise ValueError("heat problem needs a time step")
            return (mu.alpha, 1.0 / dt)
        return (mu.alpha, mu.beta)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "geometry": self.geometry.to_dict(),
            "cells_slave": list(self.cells_slave),
            "cells_master": list(self.cells_master),
            "source": self.source,
            "dirichlet_values": dict(self.dirichlet_values),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Problem":
        return cls(
            kind=d["kind"],
            geometry=BoxGeometry.from_dict(d["geometry"]),
            cells_slave=tuple(d["cells_slave"]),
            cells_master=tuple(d["cells_master"]),
            source=d.get("source"),
            dirichlet_values=d.get("dirichlet_values", {}),
        )


def test1_analog(n: int = 8, refine: int = 2, kind: str = "diffusion_reaction") -> Problem:
    """Planar analog of the hollow-spheroid diffusion-reaction test.

    The radial direction maps to x: the slave spans ``0.5 < x < 1.5`` with
    ``u = 0.01`` on its far face (the inner sphere), the master spans
    ``1.5 < x < 3`` with ``u = 0`` on its far face. Lateral faces are
    homogeneous Neumann. The master mesh is ``refine`` times finer.
    """
    geom = BoxGeometry(lo=(0.5, -1.0), hi=(3.0, 1.0), interface_coord=1.5, dirichlet_faces=("x-", "x+"))
    m = n * refine
    return Problem(
        kind=kind,
        geometry=geom,
        cells_slave=(n, 2 * n),
        cells_master=(3 * m // 2, 2 * m),
        dirichlet_values={"x-": 0.01, "x+": 0.0},
    )


def test2_analog(n: int = 8, refine: int = 2) -> Problem:
    """Same split box as :func:`test1_analog` with two parametrized sources."""
    return test1_analog(n, refine, kind="diffusion_reaction_sources")


def heat_analog(n: int = 8, refine: int = 2, dim: int = 2) -> Problem:
    """Heat equation on ``(-0.5, 1.5) x (-0.5, 0.5)^(dim-1)`` split at ``x = 0.5``.

    All outer faces are insulated; the source acts for ``x < 0`` and
    ``0.2 < t < 0.5``. Cell counts are even so that ``x = 0`` is a grid line.
    Here the slave mesh is the ``refine`` times finer one.
    """
    if n % 2:
        raise ValueError("n must be even so that x = 0 is a grid line")
    geom = BoxGeometry(lo=(-0.5,) * dim, hi=(1.5,) + (0.5,) * (dim - 1), interface_coord=0.5)
    m = n * refine
    return Problem(kind="heat", geometry=geom, cells_slave=(m,) * dim, cells_master=(n,) * dim)


PRESETS = {"test1": test1_analog, "test2": test2_analog, "heat": heat_analog}


@dataclass(frozen=True, eq=False)
class Discretization:
    """Assembled operators of both twin conforming discretizations.

    ``slave_res`` is the (slave, master) pair at the slave resolution and
    ``master_res`` the pair at the master resolution. The reduced model uses
    ``slave = slave_res[0]`` and ``master = master_res[1]``.
    """

    problem: Problem
    slave_res: tuple[AssembledOperators, AssembledOperators]
    master_res: tuple[AssembledOperators, AssembledOperators]

    @property
    def slave(self) -> AssembledOperators:
        return self.slave_res[0]

    @property
    def master(self) -> AssembledOperators:
        return self.master_res[1]

    @property
    def conformity(self) -> Conformity:
        return conformity_check(self.slave.mesh, self.master.mesh)

    @property
    def slave_res_is_coarse(self) -> bool:
        """Whether the slave-resolution pair has no more nodes than the other."""
        size = lambda pair: sum(o.mesh.n_nodes for o in pair)
        return size(self.slave_res) <= size(self.master_res)


def _ops(problem: Problem, side: Side, counts: Sequence[int]) -> AssembledOperators:
    mesh = build_subdomain_mesh(problem.geometry, side, counts)
    return assemble_operators(mesh, problem.source_spec, problem.dirichlet_values)


def discretize(problem: Problem) -> Discretization:
    g = problem.geometry
    master_ext = conforming_counts(g, problem.cells_slave, Side.SLAVE)
    slave_ext = conforming_counts(g, problem.cells_master, Side.MASTER)
    slave = _ops(problem, Side.SLAVE, problem.cells_slave)
    master = _ops(problem, Side.MASTER, problem.cells_master)
    master_at_slave_res = master if master_ext == problem.cells_master else _ops(problem, Side.MASTER, master_ext)
    slave_at_master_res = slave if slave_ext == problem.cells_slave else _ops(problem, Side.SLAVE, slave_ext)
    return Discretization(problem, (slave, master_at_slave_res), (slave_at_master_res, master))
