"""
Benchmarks and basis-size sweeps
================================

An experiment config drives the whole pipeline: sampling, snapshots, training,
reference solves and online queries. Sweeps truncate the stored bases and
re-run only the online part.
"""

import tempfile
from pathlib import Path

from ddrom.harness import ExperimentConfig, Pipeline, run_pipeline, sweep_hyperparams

out = Path(tempfile.mkdtemp())
cfg = ExperimentConfig(problem="diffusion_reaction", n=12, refine=2, n_train=20, n_test=4, seed=1)
report = run_pipeline(cfg, out)
agg = report.aggregates()
print(f"mean H1 error: slave {agg['mean_h1_err_slave']:.2e}, master {agg['mean_h1_err_master']:.2e}")
print(f"speedup vs fine FOM {agg['speedup_fine']:.0f}x, vs coarse FOM {agg['speedup_coarse']:.0f}x")
print("artifacts:", sorted(p.name for p in out.iterdir()))

# a sweep over the interface size M with the subdomain bases fixed
cfg2 = ExperimentConfig(problem="diffusion_reaction_sources", n=12, refine=2, n_train=60, n_test=4, seed=0)
pipe = Pipeline.setup(cfg2)
pipe.run_training()
res = sweep_hyperparams(cfg2, {"n1": [8], "n2": [8], "M": [1, 2, 4, 6, 8]}, pipeline=pipe)
for row in res.rows:
    print(f"M={row['M1']}: slave {row['mean_h1_err_slave']:.2e}  master {row['mean_h1_err_master']:.2e}  iters {row['mean_iters_rom']:.0f}")
res.to_csv(out / "sweep.csv")
