"""Reduced-order Dirichlet-Neumann domain decomposition on box subdomains.

The pipeline: build two subdomain meshes (:mod:`ddrom.mesh`), assemble affine
Q1 operators (:mod:`ddrom.fem`), run the full-order coupled solver and collect
snapshots (:mod:`ddrom.fom`), train POD/DEIM reduced models
(:mod:`ddrom.offline`) and query them (:mod:`ddrom.online`).
"""

from .errors import DdromError, MeshError, NonConvergedError, SingularSystemError, StageError, TrainingError
from .fem import ParameterSample, TimeScheme
from .fom import DnConfig, SnapshotSet, dn_solve_fom, dn_solve_fom_unsteady, generate_snapshots, monolithic_solve
from .harness import ExperimentConfig, lhs_sample, run_pipeline, sweep_hyperparams
from .mesh import BoxGeometry, build_index_sets, build_subdomain_meshes, conformity_check
from .offline import RomModel, deim_select, pair_magic_points, pod, train
from .online import reconstruct, rom_solve, rom_solve_unsteady
from .problems import Problem, discretize, heat_analog, test1_analog, test2_analog

__version__ = "0.1.0"

__all__ = [
    "BoxGeometry", "DdromError", "DnConfig", "ExperimentConfig", "MeshError", "NonConvergedError",
    "ParameterSample", "Problem", "RomModel", "SingularSystemError", "SnapshotSet", "StageError",
    "TimeScheme", "TrainingError", "build_index_sets", "build_subdomain_meshes", "conformity_check",
    "deim_select", "discretize", "dn_solve_fom", "dn_solve_fom_unsteady", "generate_snapshots",
    "heat_analog", "lhs_sample", "monolithic_solve", "pair_magic_points", "pod", "reconstruct",
    "rom_solve", "rom_solve_unsteady", "run_pipeline", "sweep_hyperparams", "test1_analog",
    "test2_analog", "train",
]
