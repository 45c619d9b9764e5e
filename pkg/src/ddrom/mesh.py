"""Structured Q1 meshes on a box split by one plane, and DoF index sets.

The slave subdomain lies below the interface plane along ``interface_axis``
and the master subdomain above it. Each subdomain carries its own node
numbering, so interface nodes are duplicated across the two meshes.

Nodes are numbered lexicographically by coordinate (last axis fastest),
which is the C-order flattening of the tensor grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum
from itertools import product
from typing import Sequence

import numpy as np

from .errors import MeshError

AXIS_NAMES = "xyz"


class Tag(IntEnum):
    INTERIOR = 0
    DIRICHLET = 1
    NEUMANN = 2
    INTERFACE = 3


class Side(str, Enum):
    SLAVE = "slave"
    MASTER = "master"
    GLOBAL = "global"


class Conformity(str, Enum):
    CONFORMING = "conforming"
    NONCONFORMING = "nonconforming"


def face_name(axis: int, upper: bool) -> str:
    return AXIS_NAMES[axis] + ("+" if upper else "-")


def parse_face(name: str) -> tuple[int, bool]:
    if len(name) != 2 or name[0] not in AXIS_NAMES or name[1] not in "+-":
        raise MeshError(f"bad face name {name!r}; expected e.g. 'x-' or 'y+'")
    return AXIS_NAMES.index(name[0]), name[1] == "+"


@dataclass(frozen=True)
class BoxGeometry:
    """Axis-aligned box ``[lo, hi]`` cut by the plane ``x[axis] = coord``.

    ``dirichlet_faces`` lists the outer faces carrying Dirichlet data,
    named ``'x-'``, ``'x+'``, ``'y-'`` and so on. All other outer faces are
    Neumann.
    """

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    interface_coord: float
    interface_axis: int = 0
    dirichlet_faces: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        object.__setattr__(self, "interface_coord", float(self.interface_coord))
        object.__setattr__(self, "dirichlet_faces", tuple(self.dirichlet_faces))
        if len(self.lo) != len(self.hi) or not 1 <= len(self.lo) <= 3:
            raise MeshError("lo and hi must have the same length, 1 to 3")
        if any(a >= b for a, b in zip(self.lo, self.hi)):
            raise MeshError("need lo < hi componentwise")
        if not 0 <= self.interface_axis < self.dim:
            raise MeshError(f"interface_axis {self.interface_axis} out of range")
        a = self.interface_axis
        if not self.lo[a] < self.interface_coord < self.hi[a]:
            raise MeshError("interface plane must lie strictly inside the box")
        for name in self.dirichlet_faces:
            axis, _ = parse_face(name)
            if axis >= self.dim:
                raise MeshError(f"face {name!r} does not exist in {self.dim}D")

    @property
    def dim(self) -> int:
        return len(self.lo)

    def subdomain_box(self, side: Side | str) -> tuple[tuple[float, ...], tuple[float, ...]]:
        side = Side(side)
        lo, hi = list(self.lo), list(self.hi)
        if side is Side.SLAVE:
            hi[self.interface_axis] = self.interface_coord
        elif side is Side.MASTER:
            lo[self.interface_axis] = self.interface_coord
        return tuple(lo), tuple(hi)

    def to_dict(self) -> dict:
        return {
            "lo": list(self.lo),
            "hi": list(self.hi),
            "interface_coord": self.interface_coord,
            "interface_axis": self.interface_axis,
            "dirichlet_faces": list(self.dirichlet_faces),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoxGeometry":
        return cls(
            lo=tuple(d["lo"]),
            hi=tuple(d["hi"]),
            interface_coord=d["interface_coord"],
            interface_axis=d.get("interface_axis", 0),
            dirichlet_faces=tuple(d.get("dirichlet_faces", ())),
        )


def tensor_cells(shape: Sequence[int]) -> np.ndarray:
    """Connectivity of the cells of a tensor grid with ``shape`` nodes per axis.

    Local node ``a`` of a cell sits at offset ``(a >> (d-1-k)) & 1`` along
    axis ``k``, i.e. local nodes are themselves in lexicographic order.
    """
    shape = tuple(int(s) for s in shape)
    d = len(shape)
    if d == 0:
        return np.zeros((1, 1), dtype=np.int64)
    ids = np.arange(int(np.prod(shape))).reshape(shape)
    corner = ids[tuple(slice(0, s - 1) for s in shape)].ravel()
    strides = [int(np.prod(shape[k + 1:])) for k in range(d)]
    offsets = [sum(b * s for b, s in zip(bits, strides)) for bits in product((0, 1), repeat=d)]
    return corner[:, None] + np.asarray(offsets)[None, :]


@dataclass(frozen=True, eq=False)
class Mesh:
    """Tensor-product Q1 mesh.

    Attributes
    ----------
    axes : tuple of ndarray
        Node coordinates along each axis; the mesh nodes are their product.
    nodes : ndarray, shape (N, dim)
    cells : ndarray, shape (C, 2**dim)
    tags : ndarray of Tag values, shape (N,)
    h : ndarray, shape (dim,)
        Largest cell width per axis.
    """

    axes: tuple[np.ndarray, ...]
    side: Side
    geometry: BoxGeometry
    nodes: np.ndarray = field(repr=False)
    cells: np.ndarray = field(repr=False)
    tags: np.ndarray = field(repr=False)
    h: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def boundary_tags(self) -> dict[int, Tag]:
        return {i: Tag(t) for i, t in enumerate(self.tags)}

    @property
    def interface_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.tags == Tag.INTERFACE)

    @property
    def interface_points(self) -> np.ndarray:
        return self.nodes[self.interface_nodes]

    def cell_widths(self) -> np.ndarray:
        """Per-cell widths, shape (C, dim)."""
        lo = self.nodes[self.cells[:, 0]]
        hi = self.nodes[self.cells[:, -1]]
        return hi - lo

    def cell_centroids(self) -> np.ndarray:
        return 0.5 * (self.nodes[self.cells[:, 0]] + self.nodes[self.cells[:, -1]])


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def tensor_mesh(axes: Sequence[np.ndarray], side: Side | str, geometry: BoxGeometry) -> Mesh:
    """Build a tagged mesh from per-axis node coordinates."""
    side = Side(side)
    axes = tuple(_readonly(np.array(a, dtype=float)) for a in axes)
    if len(axes) != geometry.dim:
        raise MeshError("number of axes does not match the geometry")
    for a in axes:
        if len(a) < 2 or np.any(np.diff(a) <= 0):
            raise MeshError("each axis needs at least one cell with increasing coordinates")
    grids = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    cells = tensor_cells([len(a) for a in axes])
    tags = _tag_nodes(axes, side, geometry)
    h = np.array([np.max(np.diff(a)) for a in axes])
    return Mesh(
        axes=axes,
        side=side,
        geometry=geometry,
        nodes=_readonly(nodes),
        cells=_readonly(cells),
        tags=_readonly(tags),
        h=_readonly(h),
    )


def _tag_nodes(axes, side: Side, geom: BoxGeometry) -> np.ndarray:
    shape = tuple(len(a) for a in axes)
    d = len(shape)
    iface = np.zeros(shape, dtype=bool)
    dirichlet = np.zeros(shape, dtype=bool)
    boundary = np.zeros(shape, dtype=bool)
    dir_faces = {parse_face(f) for f in geom.dirichlet_faces}

    def face_slab(axis, upper):
        idx = [slice(None)] * d
        idx[axis] = -1 if upper else 0
        return tuple(idx)

    for axis in range(d):
        for upper in (False, True):
            slab = face_slab(axis, upper)
            coord = axes[axis][-1 if upper else 0]
            is_iface = (
                axis == geom.interface_axis
                and side is not Side.GLOBAL
                and coord == geom.interface_coord
            )
            if is_iface:
                iface[slab] = True
                continue
            outer = geom.hi[axis] if upper else geom.lo[axis]
            if coord != outer:
                raise MeshError(f"mesh face {face_name(axis, upper)} does not lie on the box boundary")
            boundary[slab] = True
            if (axis, upper) in dir_faces:
                dirichlet[slab] = True

    if np.any(iface & dirichlet):
        raise MeshError(
            "Dirichlet face touches the interface; the interface boundary must not meet the Dirichlet boundary"
        )
    tags = np.full(shape, Tag.INTERIOR, dtype=np.int8)
    tags[boundary] = Tag.NEUMANN
    tags[dirichlet] = Tag.DIRICHLET
    tags[iface] = Tag.INTERFACE
    return tags.ravel()


def _check_counts(counts, dim) -> tuple[int, ...]:
    counts = tuple(int(c) for c in np.atleast_1d(counts))
    if len(counts) != dim:
        raise MeshError(f"expected {dim} cell counts, got {len(counts)}")
    if any(c < 1 for c in counts):
        raise MeshError("cell counts must be at least 1 per axis")
    return counts


def _axes_for(geom: BoxGeometry, side: Side, counts) -> list[np.ndarray]:
    lo, hi = geom.subdomain_box(side)
    return [np.linspace(a, b, n + 1) for a, b, n in zip(lo, hi, counts)]


def build_subdomain_mesh(geom: BoxGeometry, side: Side | str, n_cells: Sequence[int]) -> Mesh:
    side = Side(side)
    counts = _check_counts(n_cells, geom.dim)
    return tensor_mesh(_axes_for(geom, side, counts), side, geom)


def build_subdomain_meshes(geom: BoxGeometry, n_cells_slave, n_cells_master) -> tuple[Mesh, Mesh]:
    """Independent uniform Q1 meshes of the slave and master boxes.

    >>> g = BoxGeometry((0, 0), (1, 1), 0.5, dirichlet_faces=("x-", "x+"))
    >>> s, m = build_subdomain_meshes(g, (2, 2), (2, 4))
    >>> s.n_nodes, len(s.interface_nodes), len(m.interface_nodes)
    (9, 3, 5)
    """
    return (
        build_subdomain_mesh(geom, Side.SLAVE, n_cells_slave),
        build_subdomain_mesh(geom, Side.MASTER, n_cells_master),
    )


def build_global_mesh(geom: BoxGeometry, n_cells_slave, n_cells_master) -> Mesh:
    """Mesh of the whole box whose restrictions are the two subdomain meshes.

    The two subdomain grids must agree on every axis except the one normal
    to the interface, i.e. the split must be conforming.
    """
    counts_s = _check_counts(n_cells_slave, geom.dim)
    counts_m = _check_counts(n_cells_master, geom.dim)
    a = geom.interface_axis
    for k in range(geom.dim):
        if k != a and counts_s[k] != counts_m[k]:
            raise MeshError("global mesh requires matching interface subdivisions")
    axes_s = _axes_for(geom, Side.SLAVE, counts_s)
    axes_m = _axes_for(geom, Side.MASTER, counts_m)
    axes = list(axes_s)
    axes[a] = np.concatenate([axes_s[a], axes_m[a][1:]])
    return tensor_mesh(axes, Side.GLOBAL, geom)


def conforming_counts(geom: BoxGeometry, n_cells, from_side: Side | str) -> tuple[int, ...]:
    """Cell counts extending one subdomain's spacing conformingly to the other.

    Lateral subdivisions are copied; along the interface normal the other
    subdomain gets the count closest to the same cell width.
    """
    from_side = Side(from_side)
    counts = list(_check_counts(n_cells, geom.dim))
    a = geom.interface_axis
    lo, hi = geom.subdomain_box(from_side)
    h = (hi[a] - lo[a]) / counts[a]
    other = Side.MASTER if from_side is Side.SLAVE else Side.SLAVE
    olo, ohi = geom.subdomain_box(other)
    counts[a] = max(1, int(round((ohi[a] - olo[a]) / h)))
    return tuple(counts)


def node_map(coarse_to: Mesh, sub: Mesh) -> np.ndarray:
    """Indices of ``sub``'s nodes inside the (global) mesh ``coarse_to``.

    Raises MeshError if some node of ``sub`` is not a node of the target.
    """
    multi = []
    for k in range(sub.dim):
        pos = np.searchsorted(coarse_to.axes[k], sub.axes[k])
        pos = np.clip(pos, 0, len(coarse_to.axes[k]) - 1)
        if not np.array_equal(coarse_to.axes[k][pos], sub.axes[k]):
            raise MeshError("sub mesh nodes are not nodes of the target mesh")
        multi.append(pos)
    grids = np.meshgrid(*multi, indexing="ij")
    return np.ravel_multi_index(tuple(g.ravel() for g in grids), coarse_to.shape)


@dataclass(frozen=True, eq=False)
class IndexSets:
    """DoF index partitions of one subdomain.

    ``internal`` excludes the interface on the slave side and keeps it on the
    master side, where the interface carries Neumann data.
    """

    side: Side
    all_: np.ndarray
    gamma: np.ndarray
    dirichlet: np.ndarray
    internal: np.ndarray

    @property
    def n_total(self) -> int:
        return len(self.all_)

    @property
    def n_internal(self) -> int:
        return len(self.internal)

    @property
    def n_gamma(self) -> int:
        return len(self.gamma)

    @property
    def gamma_in_internal(self) -> np.ndarray:
        """Positions of the interface DoFs within ``internal`` (master only)."""
        pos = np.searchsorted(self.internal, self.gamma)
        if len(pos) and (np.any(pos >= len(self.internal)) or not np.array_equal(self.internal[pos], self.gamma)):
            raise ValueError("interface DoFs are not internal on this side")
        return pos


def build_index_sets(mesh: Mesh, side: Side | str) -> IndexSets:
    side = Side(side)
    if side is Side.GLOBAL:
        raise ValueError("index sets are defined for the slave or master side")
    tags = np.asarray(mesh.tags)
    if len(tags) != mesh.n_nodes or not np.isin(tags, [t.value for t in Tag]).all():
        raise MeshError("mesh has untagged nodes")
    all_ = np.arange(mesh.n_nodes)
    gamma = np.flatnonzero(tags == Tag.INTERFACE)
    dirichlet = np.flatnonzero(tags == Tag.DIRICHLET)
    if side is Side.SLAVE:
        internal = np.flatnonzero((tags != Tag.INTERFACE) & (tags != Tag.DIRICHLET))
    else:
        internal = np.flatnonzero(tags != Tag.DIRICHLET)
    return IndexSets(
        side=side,
        all_=_readonly(all_),
        gamma=_readonly(gamma),
        dirichlet=_readonly(dirichlet),
        internal=_readonly(internal),
    )


def conformity_check(mesh1: Mesh, mesh2: Mesh) -> Conformity:
    p1 = mesh1.interface_points
    p2 = mesh2.interface_points
    if p1.shape == p2.shape:
        a = p1[np.lexsort(p1.T[::-1])]
        b = p2[np.lexsort(p2.T[::-1])]
        if np.array_equal(a, b):
            return Conformity.CONFORMING
    return Conformity.NONCONFORMING


_VTK_CELL = {1: (3, [0, 1]), 2: (9, [0, 2, 3, 1]), 3: (12, [0, 4, 6, 2, 1, 5, 7, 3])}


def write_vtk(path, mesh: Mesh, point_data: dict[str, np.ndarray] | None = None, title: str = "ddrom") -> None:
    """Write the mesh and nodal fields as a legacy ASCII VTK unstructured grid.

    Node tags are always included as the ``tag`` point field.
    """
    ctype, order = _VTK_CELL[mesh.dim]
    pts = np.zeros((mesh.n_nodes, 3))
    pts[:, : mesh.dim] = mesh.nodes
    cells = mesh.cells[:, order]
    fields = {"tag": np.asarray(mesh.tags, dtype=float)}
    fields.update(point_data or {})
    with open(path, "w") as fh:
        fh.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(pts)} double\n")
        np.savetxt(fh, pts, fmt="%.17g")
        nloc = cells.shape[1]
        fh.write(f"CELLS {len(cells)} {len(cells) * (nloc + 1)}\n")
        np.savetxt(fh, np.hstack([np.full((len(cells), 1), nloc), cells]), fmt="%d")
        fh.write(f"CELL_TYPES {len(cells)}\n")
        np.savetxt(fh, np.full(len(cells), ctype), fmt="%d")
        fh.write(f"POINT_DATA {len(pts)}\n")
        for name, values in fields.items():
            values = np.asarray(values, dtype=float)
            if values.shape != (mesh.n_nodes,):
                raise ValueError(f"field {name!r} has shape {values.shape}, expected ({mesh.n_nodes},)")
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            np.savetxt(fh, values, fmt="%.17g")
