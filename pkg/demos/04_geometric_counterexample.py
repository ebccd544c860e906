"""Why the update rate must not decay too fast.

With geometric rates the late particles keep a fixed share of the total
weight: theta_n plateaus at a positive level, the running weighted mean of
i.i.d. N(0,1) draws keeps variance theta_n > 0, and the weighted empirical
measure never converges to the sampling law.  Harmonic rates, by contrast,
send both to zero.
"""

from pathlib import Path

from spoc import UpdateSchedule, iid_convergence_study, kn_second_moment_study
from spoc.svgplot import loglog_rate_plot

OUT = Path(__file__).parent / "out" / "geometric_counterexample"
OUT.mkdir(parents=True, exist_ok=True)

ns = (50, 200, 800)
for label, sched in (
    ("geometric_0.9", UpdateSchedule.geometric(0.9, 800)),
    ("harmonic", UpdateSchedule.harmonic(800)),
):
    out = kn_second_moment_study(sched, ns, replications=4000, seed=31)
    print(f"{label}: E[xi_n^2] vs theta_n")
    for n, est, se, th in zip(ns, out["estimate"], out["stderr"], out["theta"]):
        print(f"  n = {n:>4}: estimate {est:.5f} +- {se:.5f}   theta = {th:.5f}")

series = {}
for label, sched in (
    ("geometric_0.9", UpdateSchedule.geometric(0.9, 800)),
    ("harmonic", UpdateSchedule.harmonic(10**4)),
):
    table, _ = iid_convergence_study(sched, ns, replications=200, seed=32, squared=True)
    series[label] = (table.ns(), table.estimates())
    table.to_csv(OUT / f"w2sq_{label}.csv")

loglog_rate_plot(OUT / "plateau.svg", series,
                 title="E[W2^2] to N(0,1): plateau vs decay", ref_slope=None)
print(f"outputs in {OUT}")
