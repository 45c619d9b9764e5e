"""
Offline stage: snapshots, POD and DEIM
======================================

Snapshots of both subdomain states and both interface quantities are
compressed by POD. DEIM then picks a few interface "magic points" where the
exchanged data will be sampled online.
"""

import numpy as np

from ddrom.fom import DnConfig, generate_snapshots
from ddrom.harness import lhs_sample
from ddrom.offline import fit_bases, pair_magic_points
from ddrom.problems import discretize, test2_analog

disc = discretize(test2_analog(n=8, refine=2))
box = {"alpha": (1, 10), "beta": (1, 10), "gamma1": (0, 15), "gamma2": (0, 15)}
params = lhs_sample(box, 40, seed=0)
snaps = generate_snapshots(disc, params, DnConfig(0.25, 1e-10, 300))
print("snapshot matrices:", snaps.S1.shape, snaps.S2.shape, snaps.S_D.shape, snaps.S_N.shape)

# the singular values decay fast: a handful of modes carry the solution set
bases = fit_bases(snaps, {"eps1": 1e-5, "eps2": 1e-5, "epsD": 1e-5, "epsN": 1e-5})
s = bases.V1.singular_values
print("slave singular values / s0:", np.array2string(s[:8] / s[0], precision=1))
print("ranks at tolerance 1e-5:", bases.default_ranks)

# DEIM points are nested, so any truncation reuses the leading ones
print("slave interface magic points:", bases.magic_D[:6])
print("their y coordinates:", disc.slave.mesh.interface_points[bases.magic_D[:6], 1])

# each slave magic point reads the nearest master interface node
paired = pair_magic_points(bases.magic_D[:6], disc.slave.mesh, disc.master.mesh)
d = disc.slave.mesh.interface_points[bases.magic_D[:6]] - disc.master.mesh.interface_points[paired]
print("pairing distances:", np.linalg.norm(d, axis=1))
