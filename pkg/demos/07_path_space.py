"""Path-space distances: projections onto coarse time grids and the exact W2
between empirical path measures.

The piecewise-linear projection loses RMS mass like k^{-1/2} on diffusive
paths; the path-space distance between sequential paths and i.i.d. reference
paths shrinks as particles are added, but only logarithmically -- so only the
trend is checked, no rate is fitted.
"""

from pathlib import Path

import numpy as np

from spoc import (
    InitialCondition,
    SimConfig,
    UpdateSchedule,
    builtin_model,
    path_projection_tk,
    path_space_w2,
    reference_run,
    spoc_run,
)
from spoc.rng import replication_stream
from spoc.svgplot import loglog_rate_plot

OUT = Path(__file__).parent / "out" / "path_space"
OUT.mkdir(parents=True, exist_ok=True)

# projection modulus on Brownian paths
m = 1024
times = np.linspace(0.0, 1.0, m + 1)
gen = replication_stream(51, 0)
ks = [4, 8, 16, 32, 64, 128]
mse = np.zeros(len(ks))
reps = 50
for _ in range(reps):
    path = np.concatenate([[0.0], np.cumsum(gen.standard_normal(m))]) / np.sqrt(m)
    for j, k in enumerate(ks):
        proj = path_projection_tk(path, k, times)
        mse[j] += np.trapezoid((path - proj) ** 2, times) / reps
rms = np.sqrt(mse)
slope = np.polyfit(np.log(ks), np.log(rms), 1)[0]
print(f"projection RMS loss on Brownian paths: slope {slope:+.3f} vs k (expect -0.5)")
loglog_rate_plot(OUT / "projection_modulus.svg", {"RMS L2 loss": (ks, rms)},
                 title="piecewise-linear projection loss", xlabel="k", ref_slope=-0.5)

# path-space W2 trend between sequential and i.i.d. reference paths
model = builtin_model("mean_field_ou")
cfg = SimConfig(
    model=model, schedule=UpdateSchedule.harmonic(10**4),
    initial=InitialCondition.point(1.0),
    T=1.0, M=30, N=256, seed=52, replications=10,
    milestones=(256,), store_paths=True, measure_backend="full_atoms",
)
run = spoc_run(cfg)
ref = reference_run(model, cfg, n_ref=256, store_paths=True)
grid = cfg.times()
print("\nW2^2 between sequential and reference path measures (10-replication mean):")
ns = (32, 64, 128, 256)
vals = []
for n in ns:
    v = float(np.mean([
        path_space_w2(run.paths[r, :n], ref.paths[:n], grid) ** 2
        for r in range(cfg.replications)
    ]))
    vals.append(v)
    print(f"  n = {n:>3}: {v:.4f}")
loglog_rate_plot(OUT / "path_space_trend.svg", {"W2^2": (list(ns), vals)},
                 title="path-space W2^2 trend (no rate claimed)", ref_slope=None)
print(f"outputs in {OUT}")
