"""Experiment driver: parameter sampling, offline/online pipeline and reports."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import DdromError, NonConvergedError, StageError
from .fem import ParameterSample, TimeScheme, h1_relative_error
from .fom import DnConfig, FomState, SnapshotSet, generate_snapshots, twin_solve
from .mesh import BoxGeometry
from .offline import NEUMANN_TRANSFERS, SAMPLING_MODES, RomModel, TrainedBases, assemble_rom, fit_bases
from .online import reconstruct, rom_solve, rom_solve_unsteady
from .problems import KINDS, Discretization, Problem, discretize, heat_analog, test1_analog, test2_analog

log = logging.getLogger(__name__)

REPORT_SCHEMA = "ddrom-bench/1"
SWEEP_SCHEMA = "ddrom-sweep/1"
TIMING_COLUMNS = ("t_fom_coarse", "t_fom_fine", "t_rom_online")

_PRESETS = {
    "diffusion_reaction": test1_analog,
    "diffusion_reaction_sources": lambda n, refine, dim=2: test2_analog(n, refine),
    "heat": heat_analog,
}
_DEFAULT_BOX = {
    "diffusion_reaction": {"alpha": [1.0, 10.0], "beta": [1.0, 10.0]},
    "diffusion_reaction_sources": {"alpha": [1.0, 10.0], "beta": [1.0, 10.0], "gamma1": [0.0, 15.0], "gamma2": [0.0, 15.0]},
    "heat": {"alpha": [0.5, 5.0]},
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one offline/online experiment.

    The problem is either a preset (``n``, ``refine``, ``dim``) or an explicit
    ``geometry`` with per-subdomain cell counts.
    """

    problem: str = "diffusion_reaction"
    n: int = 8
    refine: int = 2
    dim: int = 2
    geometry: dict | None = None
    cells_slave: tuple[int, ...] | None = None
    cells_master: tuple[int, ...] | None = None
    dirichlet_values: dict | None = None
    param_box: dict[str, tuple[float, float]] = field(default_factory=dict)
    n_train: int = 20
    n_test: int = 5
    seed: int = 0
    tolerances: dict[str, float] = field(default_factory=dict)
    omega: float = 0.25
    max_iters: int = 200
    dt: float = 1e-2
    n_steps: int = 100
    ranks: dict[str, int] = field(default_factory=dict)
    sampling: str = "riesz"
    neumann_transfer: str = "interpolate"
    sweep: dict[str, list[int]] | None = None

    def __post_init__(self):
        if self.problem not in KINDS:
            raise ValueError(f"unknown problem {self.problem!r}; known: {sorted(KINDS)}")
        if self.n_train < 1:
            raise ValueError("n_train must be at least 1")
        if self.n_test < 0:
            raise ValueError("n_test must be non-negative")
        if self.sampling not in SAMPLING_MODES:
            raise ValueError(f"sampling must be one of {SAMPLING_MODES}")
        if self.neumann_transfer not in NEUMANN_TRANSFERS:
            raise ValueError(f"neumann_transfer must be one of {NEUMANN_TRANSFERS}")
        box = dict(_DEFAULT_BOX[self.problem])
        box.update({k: tuple(v) for k, v in self.param_box.items()})
        names = KINDS[self.problem][1]
        unknown = set(box) - set(names)
        if unknown:
            raise ValueError(f"parameters {sorted(unknown)} do not apply to {self.problem}")
        for k, (lo, hi) in box.items():
            if lo > hi:
                raise ValueError(f"param_box[{k!r}] has lo > hi")
        object.__setattr__(self, "param_box", {k: tuple(map(float, box[k])) for k in names})
        tol = {"eps1": 1e-5, "eps2": 1e-5, "epsD": 1e-5, "epsN": 1e-5, "tol_interface": 1e-10}
        tol.update(self.tolerances)
        object.__setattr__(self, "tolerances", tol)
        DnConfig(self.omega, tol["tol_interface"], self.max_iters)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known - {"output"}
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**{k: v for k, v in d.items() if k in known})

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["param_box"] = {k: list(v) for k, v in self.param_box.items()}
        return out

    @property
    def param_names(self) -> tuple[str, ...]:
        return KINDS[self.problem][1]

    @property
    def unsteady(self) -> bool:
        return self.problem == "heat"

    @property
    def dn_config(self) -> DnConfig:
        return DnConfig(self.omega, self.tolerances["tol_interface"], self.max_iters)

    @property
    def scheme(self) -> TimeScheme | None:
        return TimeScheme(self.dt, self.n_steps) if self.unsteady else None

    def build_problem(self) -> Problem:
        if self.geometry is None:
            if self.problem == "heat":
                return heat_analog(self.n, self.refine, self.dim)
            return _PRESETS[self.problem](self.n, self.refine)
        if self.cells_slave is None or self.cells_master is None:
            raise ValueError("explicit geometry needs cells_slave and cells_master")
        return Problem(
            kind=self.problem,
            geometry=BoxGeometry.from_dict(self.geometry),
            cells_slave=tuple(self.cells_slave),
            cells_master=tuple(self.cells_master),
            dirichlet_values=self.dirichlet_values or {},
        )


def lhs_sample(param_box: dict[str, Sequence[float]], n: int, seed: int) -> list[ParameterSample]:
    """Latin hypercube sample of ``n`` points, uniform within each stratum.

    A parameter with ``lo == hi`` is held constant.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    names = list(param_box)
    lo = np.array([param_box[k][0] for k in names], dtype=float)
    hi = np.array([param_box[k][1] for k in names], dtype=float)
    if np.any(lo > hi):
        raise ValueError("parameter box has lo > hi")
    unit = qmc.LatinHypercube(d=len(names), seed=seed).random(n)
    pts = lo + unit * (hi - lo)
    return [ParameterSample(**dict(zip(names, row))) for row in pts]


# --- reports -------------------------------------------------------------------


@dataclass
class BenchReport:
    """Per-query rows plus aggregates; one row per test parameter and time step."""

    param_names: tuple[str, ...]
    rows: list[dict[str, Any]] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def columns(self) -> list[str]:
        return (
            [f"mu_{k}" for k in self.param_names]
            + ["t_index", "h1_err_slave", "h1_err_master", "iters_rom", "iters_fom_coarse", "iters_fom_fine", "converged_rom"]
            + list(TIMING_COLUMNS)
        )

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def aggregates(self) -> dict[str, float]:
        if not self.rows:
            return {}
        it_rom = self.column("iters_rom")
        t_rom = self.column("t_rom_online").sum()
        out = {
            "n_rows": len(self.rows),
            "mean_h1_err_slave": float(np.nanmean(self.column("h1_err_slave"))),
            "mean_h1_err_master": float(np.nanmean(self.column("h1_err_master"))),
            "max_h1_err_slave": float(np.nanmax(self.column("h1_err_slave"))),
            "max_h1_err_master": float(np.nanmax(self.column("h1_err_master"))),
            "mean_iters_rom": float(it_rom.mean()),
            "mean_iters_fom_coarse": float(self.column("iters_fom_coarse").mean()),
            "mean_iters_fom_fine": float(self.column("iters_fom_fine").mean()),
            "iter_ratio_coarse": float(it_rom.mean() / self.column("iters_fom_coarse").mean()),
            "iter_ratio_fine": float(it_rom.mean() / self.column("iters_fom_fine").mean()),
            "speedup_coarse": float(self.column("t_fom_coarse").sum() / t_rom),
            "speedup_fine": float(self.column("t_fom_fine").sum() / t_rom),
            "all_converged": bool(all(r["converged_rom"] for r in self.rows)),
        }
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.columns)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: _fmt(r[k]) for k in self.columns})

    def summary(self) -> dict:
        return {"schema": REPORT_SCHEMA, "aggregates": self.aggregates(), "meta": self.meta}


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return v


def _h1(ref: np.ndarray, approx: np.ndarray, ops) -> float:
    try:
        return h1_relative_error(ref, approx, ops.K, ops.M)
    except ZeroDivisionError:
        # zero reference (e.g. heat before the source switches on)
        d = approx - ref
        return 0.0 if not np.any(d) else math.inf


# --- pipeline ------------------------------------------------------------------


@dataclass
class Pipeline:
    """Stages of one experiment, kept so that sweeps can reuse them."""

    cfg: ExperimentConfig
    disc: Discretization
    train_params: list[ParameterSample]
    test_params: list[ParameterSample]
    snapshots: SnapshotSet | None = None
    bases: TrainedBases | None = None
    model: RomModel | None = None
    references: list[tuple[list[FomState], list[FomState]]] | None = None

    @classmethod
    def setup(cls, cfg: ExperimentConfig) -> "Pipeline":
        with _stage("SETUP"):
            disc = discretize(cfg.build_problem())
            train = lhs_sample(cfg.param_box, cfg.n_train, cfg.seed)
            test = lhs_sample(cfg.param_box, cfg.n_test, cfg.seed + 1) if cfg.n_test else []
        return cls(cfg, disc, train, test)

    def run_snapshots(self) -> SnapshotSet:
        log.info("generating snapshots for %d parameters", len(self.train_params))
        with _stage("SNAPSHOTS"):
            self.snapshots = generate_snapshots(self.disc, self.train_params, self.cfg.dn_config, self.cfg.scheme)
        return self.snapshots

    def run_training(self, ranks: dict | None = None) -> RomModel:
        if self.snapshots is None:
            self.run_snapshots()
        with _stage("TRAIN"):
            self.bases = fit_bases(self.snapshots, self.cfg.tolerances)
            self.model = self.assemble(**(ranks if ranks is not None else self.cfg.ranks))
        log.info("trained ranks %s", self.model.ranks)
        return self.model

    def assemble(self, n1=None, n2=None, M1=None, M2=None) -> RomModel:
        meta = {"config": self.cfg.to_dict(), "n_snapshots": self.snapshots.n_columns}
        return assemble_rom(
            self.bases, self.disc, n1, n2, M1, M2,
            sampling=self.cfg.sampling, neumann_transfer=self.cfg.neumann_transfer, meta=meta,
        )

    def run_references(self):
        log.info("computing FOM references for %d test parameters", len(self.test_params))
        with _stage("FOM_REFERENCE"):
            self.references = [twin_solve(self.disc, mu, self.cfg.dn_config, self.cfg.scheme) for mu in self.test_params]
        return self.references

    def evaluate(self, model: RomModel | None = None) -> BenchReport:
        model = model or self.model
        if self.references is None:
            self.run_references()
        cfg = self.cfg
        ops1, ops2 = self.disc.slave, self.disc.master
        report = BenchReport(cfg.param_names, meta={"ranks": model.ranks, "config": cfg.to_dict()})
        with _stage("ONLINE"):
            for mu, (run_s, run_m) in zip(self.test_params, self.references):
                if cfg.unsteady:
                    states = rom_solve_unsteady(model, mu, cfg.dn_config, cfg.scheme)
                else:
                    states = [rom_solve(model, mu, cfg.dn_config)]
                for step, (rs, ss, sm) in enumerate(zip(states, run_s, run_m), start=1):
                    u1, u2 = reconstruct(model, rs)
                    sc, sf = (ss, sm) if self.disc.slave_res_is_coarse else (sm, ss)
                    row = {f"mu_{k}": float(getattr(mu, k)) for k in cfg.param_names}
                    row.update(
                        t_index=step if cfg.unsteady else None,
                        # each subdomain against the FOM at its own resolution
                        h1_err_slave=_h1(ss.u1_full, u1, ops1),
                        h1_err_master=_h1(sm.u2_full, u2, ops2),
                        iters_rom=rs.iters,
                        iters_fom_coarse=sc.iters,
                        iters_fom_fine=sf.iters,
                        converged_rom=bool(rs.converged),
                        t_fom_coarse=sc.elapsed,
                        t_fom_fine=sf.elapsed,
                        t_rom_online=rs.timings["total"],
                    )
                    report.rows.append(row)
        return report


class _stage:
    """Context manager tagging library errors with the pipeline stage."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None or isinstance(exc, StageError):
            return False
        if isinstance(exc, (DdromError, ValueError, ArithmeticError, np.linalg.LinAlgError)):
            msg = str(exc)
            if isinstance(exc, NonConvergedError) and exc.mu is not None:
                msg = f"{msg} (gap {exc.gap:.3e})"
            raise StageError(self.name, msg) from exc
        return False


def run_pipeline(cfg: ExperimentConfig, output=None) -> BenchReport:
    """Snapshots, training, FOM references and online queries.

    With ``output`` set, writes ``snapshots/``, ``model/``, ``bench.csv`` and
    ``summary.json`` there. ``n_test = 0`` yields an empty report.
    """
    t0 = time.perf_counter()
    pipe = Pipeline.setup(cfg)
    pipe.run_snapshots()
    pipe.run_training()
    if output is not None:
        out = Path(output)
        out.mkdir(parents=True, exist_ok=True)
        pipe.snapshots.save(out / "snapshots")
        pipe.model.save(out / "model")
    report = pipe.evaluate() if pipe.test_params else BenchReport(cfg.param_names, meta={"ranks": pipe.model.ranks})
    report.meta["wall_time"] = time.perf_counter() - t0
    if output is not None:
        report.to_csv(out / "bench.csv")
        (out / "summary.json").write_text(json.dumps(report.summary(), indent=2, default=_json_default))
    return report


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serializable: {type(o)}")


@dataclass
class SweepResult:
    rows: list[dict[str, Any]]

    COLUMNS = ("n1", "n2", "M1", "M2", "mean_h1_err_slave", "mean_h1_err_master", "mean_iters_rom", "iter_ratio_coarse", "speedup_fine")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(self.COLUMNS))
            w.writeheader()
            for r in self.rows:
                w.writerow({k: _fmt(r[k]) for k in self.COLUMNS})

    def series(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)


def sweep_hyperparams(
    cfg: ExperimentConfig,
    grid: dict[str, Sequence[int]] | None = None,
    pipeline: Pipeline | None = None,
) -> SweepResult:
    """Mean test errors over a product grid of ``n1``, ``n2`` and ``M`` (``M1 = M2 = M``).

    Each grid point truncates the stored full-rank bases, so a trained
    ``pipeline`` can be passed in to avoid recomputing snapshots and references.
    """
    grid = grid or cfg.sweep
    if not grid:
        raise ValueError("no sweep grid given")
    pipe = pipeline or Pipeline.setup(cfg)
    if pipe.bases is None:
        pipe.run_training()
    if not pipe.test_params:
        raise ValueError("sweep needs n_test >= 1")
    avail = {"n1": pipe.bases.V1.n, "n2": pipe.bases.V2.n, "M": min(pipe.bases.phi_D.n, pipe.bases.phi_N.n)}
    axes = {}
    for key in ("n1", "n2", "M"):
        vals = [int(v) for v in grid.get(key, [avail[key]])]
        bad = [v for v in vals if not 1 <= v <= avail[key]]
        if bad:
            raise StageError("SWEEP", f"{key} values {bad} exceed the trained rank {avail[key]}")
        axes[key] = vals
    rows = []
    for n1, n2, M in itertools.product(axes["n1"], axes["n2"], axes["M"]):
        with _stage("SWEEP"):
            model = pipe.assemble(n1, n2, M, M)
        agg = pipe.evaluate(model).aggregates()
        rows.append(
            {
                "n1": n1, "n2": n2, "M1": M, "M2": M,
                **{k: agg[k] for k in ("mean_h1_err_slave", "mean_h1_err_master", "mean_iters_rom", "iter_ratio_coarse", "speedup_fine")},
            }
        )
        log.info("sweep n1=%d n2=%d M=%d: err %.3e / %.3e", n1, n2, M, agg["mean_h1_err_slave"], agg["mean_h1_err_master"])
    return SweepResult(rows)
