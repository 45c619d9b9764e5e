"""Command-line entry point.

Subcommands::

    ddrom snapshots <config>     generate and store training snapshots
    ddrom train <config>         fit and store the reduced model
    ddrom solve <model> --mu ..  one online query
    ddrom bench <config>         full pipeline plus FOM comparison
    ddrom sweep <config>         error surfaces over nested ranks

Failures exit nonzero with ``error [STAGE]: message`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path


from .errors import DdromError, StageError
from .fem import ParameterSample, TimeScheme
from .fom import DnConfig, SnapshotSet
from .harness import ExperimentConfig, Pipeline, run_pipeline, sweep_hyperparams
from .mesh import Side, build_subdomain_mesh, write_vtk
from .offline import RomModel
from .online import reconstruct, rom_solve, rom_solve_unsteady

EXIT_USAGE = 2
EXIT_STAGE = 3


def _load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
        return ExperimentConfig.from_dict(raw), raw.get("output")
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        raise StageError("CONFIG", f"{path}: {exc}") from exc


def _outdir(args, cfg_output, config_path) -> Path:
    if args.out is not None:
        out = Path(args.out)
    elif cfg_output is not None:
        out = Path(config_path).parent / cfg_output
    else:
        out = Path("ddrom_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_snapshots(args) -> int:
    cfg, cfg_out = _load_config(args.config)
    out = _outdir(args, cfg_out, args.config)
    pipe = Pipeline.setup(cfg)
    snaps = pipe.run_snapshots()
    snaps.save(out / "snapshots")
    print(json.dumps({"snapshots": str(out / "snapshots"), "columns": snaps.n_columns}))
    return 0


def cmd_train(args) -> int:
    cfg, cfg_out = _load_config(args.config)
    out = _outdir(args, cfg_out, args.config)
    pipe = Pipeline.setup(cfg)
    snap_dir = out / "snapshots"
    if snap_dir.is_dir() and not args.regenerate:
        try:
            pipe.snapshots = SnapshotSet.load(snap_dir)
        except (OSError, ValueError, KeyError) as exc:
            raise StageError("LOAD_SNAPSHOTS", str(exc)) from exc
    else:
        pipe.run_snapshots()
        pipe.snapshots.save(snap_dir)
    model = pipe.run_training()
    model.save(out / "model")
    print(json.dumps({"model": str(out / "model"), "ranks": model.ranks}))
    return 0


def _parse_mu(text: str, names) -> ParameterSample:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise StageError("ARGS", f"--mu must be comma-separated numbers, got {text!r}") from None
    try:
        return ParameterSample.from_values(vals, names)
    except ValueError as exc:
        raise StageError("ARGS", str(exc)) from exc


def cmd_solve(args) -> int:
    try:
        model = RomModel.load(args.model)
    except (OSError, ValueError, KeyError) as exc:
        raise StageError("LOAD_MODEL", str(exc)) from exc
    problem = model.problem
    mu = _parse_mu(args.mu, problem.param_names)
    cfg = DnConfig(args.omega, args.tol, args.max_iters)
    if problem.unsteady:
        states = rom_solve_unsteady(model, mu, cfg, TimeScheme(args.dt, args.steps))
    else:
        states = [rom_solve(model, mu, cfg)]
    records = [st.diagnostics(mu) for st in states]
    for step, rec in enumerate(records, start=1):
        if problem.unsteady:
            rec["t_index"] = step
    text = "\n".join(json.dumps(r, sort_keys=True) for r in records)
    if args.json:
        Path(args.json).write_text(text + "\n")
    else:
        print(text)
    if args.vtk:
        vdir = Path(args.vtk)
        vdir.mkdir(parents=True, exist_ok=True)
        meshes = {
            Side.SLAVE: build_subdomain_mesh(problem.geometry, Side.SLAVE, problem.cells_slave),
            Side.MASTER: build_subdomain_mesh(problem.geometry, Side.MASTER, problem.cells_master),
        }
        st = states[-1]
        u1, u2 = reconstruct(model, st)
        write_vtk(vdir / "slave.vtk", meshes[Side.SLAVE], {"u": u1})
        write_vtk(vdir / "master.vtk", meshes[Side.MASTER], {"u": u2})
    return 0 if all(st.converged for st in states) else 1


def cmd_bench(args) -> int:
    cfg, cfg_out = _load_config(args.config)
    out = _outdir(args, cfg_out, args.config)
    report = run_pipeline(cfg, out)
    print(json.dumps(report.summary()["aggregates"], sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    cfg, cfg_out = _load_config(args.config)
    out = _outdir(args, cfg_out, args.config)
    result = sweep_hyperparams(cfg)
    result.to_csv(out / "sweep.csv")
    print(json.dumps({"sweep": str(out / "sweep.csv"), "points": len(result.rows)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ddrom", description="Reduced-order Dirichlet-Neumann domain decomposition.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    for name, fn, help_ in (
        ("snapshots", cmd_snapshots, "generate training snapshots"),
        ("train", cmd_train, "train a reduced model"),
        ("bench", cmd_bench, "run the full benchmark pipeline"),
        ("sweep", cmd_sweep, "sweep nested basis ranks"),
    ):
        s = sub.add_parser(name, help=help_)
        s.add_argument("config", help="JSON experiment config")
        s.add_argument("--out", help="output directory (default: config 'output' key or ./ddrom_out)")
        if name == "train":
            s.add_argument("--regenerate", action="store_true", help="ignore stored snapshots")
        s.set_defaults(func=fn)

    s = sub.add_parser("solve", help="online solve with a stored model")
    s.add_argument("model", help="model directory written by 'train'")
    s.add_argument("--mu", required=True, help="comma-separated parameter values, e.g. 2,3 or 2,3,5,7")
    s.add_argument("--omega", type=float, default=0.25)
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--max-iters", type=int, default=200)
    s.add_argument("--dt", type=float, default=1e-2, help="time step (heat models)")
    s.add_argument("--steps", type=int, default=100, help="number of time steps (heat models)")
    s.add_argument("--json", help="write diagnostics here instead of stdout")
    s.add_argument("--vtk", help="directory for VTK output of the reconstructed fields")
    s.set_defaults(func=cmd_solve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error [{exc.stage}]: {exc.detail}", file=sys.stderr)
        return EXIT_STAGE
    except (DdromError, ValueError) as exc:
        print(f"error [{args.command.upper()}]: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
