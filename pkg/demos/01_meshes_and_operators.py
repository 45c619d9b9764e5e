"""
Subdomain meshes and affine operators
=====================================

Two box subdomains share a planar interface. Each side gets its own tensor
mesh, so the interface node sets can differ (non-conforming). Operators are
stored as the affine pieces K (stiffness) and M (mass).
"""

import tempfile
from pathlib import Path

import numpy as np

from ddrom.fem import ParameterSample, assemble_operators
from ddrom.mesh import (
    BoxGeometry,
    Side,
    build_index_sets,
    build_subdomain_meshes,
    conformity_check,
    write_vtk,
)

# the box (0.5, 3) x (-1, 1) cut at x = 1.5; Dirichlet data on the two x faces
geom = BoxGeometry((0.5, -1.0), (3.0, 1.0), 1.5, dirichlet_faces=("x-", "x+"))

# a coarse slave below the interface and a twice finer master above it
slave, master = build_subdomain_meshes(geom, (4, 8), (12, 16))
print("slave nodes:", slave.n_nodes, " master nodes:", master.n_nodes)
print("interface nodes:", len(slave.interface_nodes), "vs", len(master.interface_nodes))
print("interface is", conformity_check(slave, master).name.lower())

# the slave drops its interface from the unknowns (it receives Dirichlet data),
# the master keeps it (it receives a Neumann residual)
s_idx = build_index_sets(slave, Side.SLAVE)
m_idx = build_index_sets(master, Side.MASTER)
print("unknowns: slave", s_idx.n_internal, " master", m_idx.n_internal)

# stiffness and mass, then A(mu) = alpha K + beta M for any mu at no extra cost
ops = assemble_operators(slave, "zero", {"x-": 0.01})
mu = ParameterSample(alpha=2.0, beta=5.0)
A = ops.operator((mu.alpha, mu.beta))
print("A is symmetric:", abs(A - A.T).max() < 1e-14)
print("mass integrates to the subdomain area:", ops.M.sum())

# the interface mass matrix turns a residual into its primal representative
r = np.ones(s_idx.n_gamma)
z = ops.solve_interface_mass(r)
print("M_gamma z = r holds to", np.abs(ops.M_gamma @ z - r).max())

# fields can be written for ParaView
out = Path(tempfile.mkdtemp())
write_vtk(out / "slave.vtk", slave, {"x": slave.nodes[:, 0]})
print("wrote", out / "slave.vtk")
