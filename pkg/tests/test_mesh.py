import numpy as np
import pytest

from ddrom.errors import MeshError
from ddrom.mesh import (
    BoxGeometry,
    Conformity,
    Side,
    Tag,
    build_global_mesh,
    build_index_sets,
    build_subdomain_mesh,
    build_subdomain_meshes,
    conforming_counts,
    conformity_check,
    node_map,
    write_vtk,
)


def test_unit_square_counts(square_geometry):
    slave, master = build_subdomain_meshes(square_geometry, (2, 2), (2, 2))
    assert slave.n_nodes == 9
    assert len(slave.interface_nodes) == 3
    assert np.all(slave.interface_points[:, 0] == 0.5)
    assert np.all(master.interface_points[:, 0] == 0.5)


def test_heat_geometry_paper_sizes():
    # 32 cells per axis on each half of (-0.5,1.5)x(-0.5,0.5)^2
    geom = BoxGeometry((-0.5, -0.5, -0.5), (1.5, 0.5, 0.5), 0.5)
    slave, master = build_subdomain_meshes(geom, (32, 32, 32), (32, 32, 32))
    assert slave.n_nodes == 35937 == master.n_nodes
    assert len(slave.interface_nodes) == 1089
    assert conformity_check(slave, master) is Conformity.CONFORMING


def test_nonconforming_pair_on_same_plane(square_geometry):
    slave, master = build_subdomain_meshes(square_geometry, (2, 2), (2, 4))
    assert conformity_check(slave, master) is Conformity.NONCONFORMING
    assert len(slave.interface_nodes) == 3 and len(master.interface_nodes) == 5
    assert set(map(tuple, slave.interface_points)) < set(map(tuple, master.interface_points))


def test_test1_interface_counts():
    # 2D analog with the interface sizes of the steady benchmark
    geom = BoxGeometry((0.5, -1.0), (3.0, 1.0), 1.5, dirichlet_faces=("x-", "x+"))
    slave, master = build_subdomain_meshes(geom, (4, 385), (4, 1537))
    assert build_index_sets(slave, Side.SLAVE).n_gamma == 386
    assert build_index_sets(master, Side.MASTER).n_gamma == 1538
    assert conformity_check(slave, master) is Conformity.NONCONFORMING


@pytest.mark.parametrize("counts", [(0, 2), (2, 0)])
def test_zero_cells_rejected(square_geometry, counts):
    with pytest.raises(MeshError):
        build_subdomain_mesh(square_geometry, Side.SLAVE, counts)


def test_invalid_geometry():
    with pytest.raises(MeshError):
        BoxGeometry((0, 0), (1, 1), 1.0)
    with pytest.raises(MeshError):
        BoxGeometry((0, 1), (1, 1), 0.5)
    with pytest.raises(MeshError):
        BoxGeometry((0, 0), (1, 1), 0.5, dirichlet_faces=("z-",))


def test_dirichlet_touching_interface_rejected(square_geometry):
    geom = BoxGeometry((0, 0), (1, 1), 0.5, dirichlet_faces=("x-", "y-"))
    with pytest.raises(MeshError):
        build_subdomain_mesh(geom, Side.SLAVE, (2, 2))


def test_index_sets_slave_vs_master(square_geometry):
    slave, _ = build_subdomain_meshes(square_geometry, (2, 2), (2, 2))
    s = build_index_sets(slave, Side.SLAVE)
    m = build_index_sets(slave, Side.MASTER)
    assert s.n_gamma == 3 and len(s.dirichlet) == 3
    assert s.n_internal == 3
    assert not set(s.internal) & set(s.gamma)
    assert not set(s.internal) & set(s.dirichlet)
    assert m.n_internal == 6
    assert set(m.gamma) <= set(m.internal)
    for arr in (s.all_, s.gamma, s.dirichlet, s.internal):
        assert np.all(np.diff(arr) > 0)


def test_tags_partition(conforming_disc):
    for ops in (conforming_disc.slave, conforming_disc.master):
        mesh = ops.mesh
        assert set(np.unique(mesh.tags)) <= {t.value for t in Tag}
        idx = ops.index_sets
        # interior nodes lie strictly inside the box
        lo, hi = mesh.geometry.subdomain_box(mesh.side)
        inner = np.all((mesh.nodes > lo) & (mesh.nodes < hi), axis=1)
        assert np.all(mesh.tags[inner] == Tag.INTERIOR)
        assert np.all(mesh.tags[~inner] != Tag.INTERIOR)
        assert idx.n_total == mesh.n_nodes


def test_node_count_formula():
    geom = BoxGeometry((0, 0, 0), (2, 1, 1), 0.75)
    counts_s, counts_m = (3, 4, 5), (5, 4, 5)
    s, m = build_subdomain_meshes(geom, counts_s, counts_m)
    assert s.n_nodes == 4 * 5 * 6 and m.n_nodes == 6 * 5 * 6
    g = build_global_mesh(geom, counts_s, counts_m)
    # union with interface identified covers the global grid
    assert g.n_nodes == s.n_nodes + m.n_nodes - len(s.interface_nodes)
    covered = np.union1d(node_map(g, s), node_map(g, m))
    assert len(covered) == g.n_nodes


def test_builds_are_bit_identical(square_geometry):
    a = build_subdomain_mesh(square_geometry, Side.MASTER, (3, 5))
    b = build_subdomain_mesh(square_geometry, Side.MASTER, (3, 5))
    assert np.array_equal(a.nodes, b.nodes) and np.array_equal(a.cells, b.cells)
    assert np.array_equal(a.tags, b.tags)


def test_mesh_arrays_read_only(square_geometry):
    mesh = build_subdomain_mesh(square_geometry, Side.SLAVE, (2, 2))
    with pytest.raises(ValueError):
        mesh.nodes[0, 0] = 1.0


def test_lexicographic_ordering(square_geometry):
    mesh = build_subdomain_mesh(square_geometry, Side.SLAVE, (2, 3))
    keys = [tuple(p) for p in mesh.nodes]
    assert keys == sorted(keys)


def test_cells_are_axis_aligned(square_geometry):
    mesh = build_subdomain_mesh(square_geometry, Side.MASTER, (3, 2))
    w = mesh.cell_widths()
    assert np.allclose(w, mesh.h)
    corners = mesh.nodes[mesh.cells]
    assert np.allclose(corners[:, -1] - corners[:, 0], w)


def test_conforming_counts():
    geom = BoxGeometry((0.5, -1.0), (3.0, 1.0), 1.5)
    assert conforming_counts(geom, (8, 16), Side.SLAVE) == (12, 16)
    assert conforming_counts(geom, (24, 32), Side.MASTER) == (16, 32)


def test_global_mesh_needs_matching_interface(square_geometry):
    with pytest.raises(MeshError):
        build_global_mesh(square_geometry, (2, 2), (2, 4))


def test_write_vtk(tmp_path, square_geometry):
    mesh = build_subdomain_mesh(square_geometry, Side.SLAVE, (2, 2))
    path = tmp_path / "m.vtk"
    write_vtk(path, mesh, {"u": np.arange(mesh.n_nodes, dtype=float)})
    text = path.read_text()
    assert text.startswith("# vtk DataFile Version")
    assert "POINTS 9" in text and "CELLS 4 20" in text
    assert "SCALARS u" in text and "SCALARS tag" in text
