"""Acceptance criteria, one test per criterion, each printing a pass/fail line
(run with `pytest tests/test_acceptance.py -s` to see them).

Two criteria encode constants that are mathematically unattainable as stated;
they are implemented verbatim, kept red, and marked strict-xfail so the rest of
the suite stays actionable:

* criterion 2 asserts the fitted slope of ln E[W_2^2] for 1-d Gaussian
  empirical measures lies in [-0.65, -0.35].  That window matches the
  theoretical upper-bound exponent 1/2 (and the slope of the *unsquared*
  E[W_2], see test_analysis.py), but the realized squared-distance rate in 1-d
  is ~1/n up to log-log factors: measured slope ~= -0.95.
* criterion 3 asserts theta_800 > 0.04 for the geometric(0.9) schedule; the
  true plateau is 0.02706669... (verified by 60-digit direct weight sums).
  The substantive non-convergence check (E[xi_n^2] = theta_n, plateau > 0)
  passes and is also asserted here.
"""

import math
import time

import numpy as np
import pytest
from scipy.stats import norm

from spoc import (
    GroundCost,
    InitialCondition,
    KappaProfile,
    SimConfig,
    UpdateSchedule,
    WeightedEmpirical,
    batch_spoc_run,
    build_f_from_kappa,
    builtin_model,
    classical_poc_run,
    coupled_spoc_run,
    iid_convergence_study,
    kn_second_moment_study,
    rate_fit,
    reference_run,
    spoc_run,
    theta_sequence,
    wasserstein_1d,
    wasserstein_exact,
)
from spoc.analysis import path_space_w2

Z90 = 1.6448536269514722


def _report(num: int, name: str, ok: bool, detail: str, t0: float) -> bool:
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] criterion {num} ({name}): {detail} [{time.perf_counter() - t0:.1f}s]")
    return ok


def _ou_config(**kw):
    base = dict(
        model=builtin_model("mean_field_ou"),
        schedule=UpdateSchedule.harmonic(10**6),
        initial=InitialCondition.point(1.0),
        T=1.0,
        M=30,
        seed=8181,
        measure_backend="summary_only",
    )
    base.update(kw)
    return SimConfig(**base)


def test_criterion_1_theta_identity():
    t0 = time.perf_counter()
    n = 10**6
    theta = theta_sequence(UpdateSchedule.harmonic(n), n)
    err = float(np.max(np.abs(theta * np.arange(1, n + 1) - 1.0)))
    ok = err <= 1e-10
    assert _report(1, "theta identity", ok, f"max |theta_n*n - 1| = {err:.2e} <= 1e-10", t0)


@pytest.mark.xfail(
    strict=True,
    reason="window [-0.65,-0.35] encodes the upper-bound exponent 1/2 for "
    "E[W2^2]; the realized 1-d squared-distance slope is ~ -0.95 (the window "
    "does hold for the unsquared E[W2], see test_analysis.py)",
)
def test_criterion_2_iid_weighted_empirical_rate():
    t0 = time.perf_counter()
    ns = [2**k for k in range(7, 15)]
    table, fit = iid_convergence_study(
        UpdateSchedule.harmonic(10**5), ns, replications=50, seed=2222,
        quantile_fn=norm.ppf, n_nodes=4096, squared=True,
    )
    ok = -0.65 <= fit.slope <= -0.35
    _report(2, "iid weighted-empirical rate", ok,
            f"slope ln E[W2^2] = {fit.slope:+.3f}, window [-0.65, -0.35]", t0)
    assert ok


@pytest.mark.xfail(
    strict=True,
    reason="theta_800 for the geometric(0.9) schedule is 0.0270666926753872 "
    "(60-digit direct weight sums), below the stated bound 0.04; the "
    "substantive plateau/identity checks pass",
)
def test_criterion_3_nonconvergence_counterexample():
    t0 = time.perf_counter()
    sched = UpdateSchedule.geometric(0.9, 800)
    out = kn_second_moment_study(sched, [50, 200, 800], replications=4000, seed=3333)
    within = [
        abs(est - th) <= 3.0 * se
        for est, se, th in zip(out["estimate"], out["stderr"], out["theta"])
    ]
    theta_800 = float(out["theta"][-1])
    ok = all(within) and theta_800 > 0.04
    _report(3, "non-convergence counterexample", ok,
            f"E[xi^2] within 3 SE of theta at all n: {all(within)}; "
            f"theta_800 = {theta_800:.6f} (> 0.04 required)", t0)
    assert all(within)  # the substantive identity holds
    assert theta_800 > 0.04


def test_criterion_4_ou_moments():
    t0 = time.perf_counter()
    cfg = _ou_config(N=10**5, milestones=(10**5,), replications=20)
    run = spoc_run(cfg)
    ref = reference_run(cfg.model, cfg, n_ref=1)
    mean_t = run.mean_traj[:, 0, -1, 0].mean()
    second_t = run.second_traj[:, 0, -1].mean()
    err_m = abs(mean_t - math.exp(-3.0))
    err_s = abs(second_t - float(ref.second[-1]))
    ok = err_m <= 0.02 and err_s <= 0.05
    assert _report(4, "OU moments", ok,
                   f"|mean - e^-3| = {err_m:.4f} <= 0.02, "
                   f"|second - S_ode| = {err_s:.4f} <= 0.05", t0)


def test_criterion_5_sequential_vs_classical():
    t0 = time.perf_counter()
    milestones = (10**3, 10**4, 10**5)
    reps = 20
    cfg = _ou_config(N=10**5, milestones=milestones, replications=reps)
    seq = spoc_run(cfg)
    seq_mean = seq.mean_traj[:, :, -1, 0]  # (R, L)
    details = []
    ok = True
    for l, n in enumerate(milestones):
        cls = classical_poc_run(_ou_config(N=n, milestones=(n,), replications=reps,
                                           seed=cfg.seed + 1))
        cls_mean = cls.mean_traj[:, 0, -1, 0]
        diff = abs(seq_mean[:, l].mean() - cls_mean.mean())
        ci_s = Z90 * seq_mean[:, l].std(ddof=1) / math.sqrt(reps)
        ci_c = Z90 * cls_mean.std(ddof=1) / math.sqrt(reps)
        combined = math.hypot(ci_s, ci_c)
        details.append(f"n={n}: |diff| = {diff:.5f} < {2 * combined:.5f}")
        ok &= diff < 2.0 * combined
    assert _report(5, "sequential ~ classical", ok, "; ".join(details), t0)


def test_criterion_6_coupling_rate_slope():
    t0 = time.perf_counter()
    milestones = (100, 316, 1000, 3162, 10000)
    cfg = _ou_config(N=10**4, milestones=milestones, replications=20)
    cop = coupled_spoc_run(cfg)
    kn = cop.gap_kn.mean(axis=0)
    fit = rate_fit(milestones, kn)
    ok = fit.slope <= -0.35
    assert _report(6, "coupling-rate slope", ok,
                   f"slope of K_n(E|X-Y|^2) = {fit.slope:+.3f} <= -0.35", t0)


def test_criterion_7_f_profile_battery():
    t0 = time.perf_counter()
    profiles = [("constant_1", KappaProfile.constant(1.0))]
    profiles += [(f"cw_{b:g}", KappaProfile.curie_weiss(b)) for b in (0.5, 1.0, 2.0)]
    worst_resid_scale = 0.0
    worst_fpp = -np.inf
    worst_rel = 0.0
    for name, kappa in profiles:
        prof = build_f_from_kappa(kappa, r_max=8.0, n_grid=81)
        prof.validate(kappa)
        kv = kappa.evaluate(prof.grid)
        resid = np.abs(2 * prof.f_double_prime - prof.grid * kv * prof.f_prime + prof.grid)
        worst_resid_scale = max(worst_resid_scale,
                                float(np.max(resid / (1e-6 * (1.0 + prof.grid)))))
        worst_fpp = max(worst_fpp, float(np.max(prof.f_double_prime)))
        pos = prof.grid > 0
        ratio = prof.f[pos] / prof.grid[pos]
        lo = 0.0 if not np.isfinite(prof.kappa_inf) else 1.0 / prof.kappa_inf
        assert np.all(ratio >= lo * (1 - 1e-12) - 1e-15)
        assert np.all(ratio <= prof.f_prime_0 * (1 + 1e-12) + 1e-15)
        if name.startswith("cw"):
            beta = kappa.fn.keywords["beta"]
            closed = math.sqrt(2 * math.pi * beta * math.exp(beta)) \
                * float(norm.cdf(math.sqrt(beta))) / beta
            worst_rel = max(worst_rel, abs(prof.f_prime_0 - closed) / closed)
    ok = worst_resid_scale <= 1.0 and worst_fpp <= 1e-10 and worst_rel <= 1e-6
    assert _report(7, "f-profile battery", ok,
                   f"residual <= {worst_resid_scale:.2g} of budget, "
                   f"max f'' = {worst_fpp:.1e} <= 1e-10, "
                   f"f'(0) vs closed form rel = {worst_rel:.1e} <= 1e-6", t0)


def test_criterion_8_ot_cross_validation():
    t0 = time.perf_counter()
    rng = np.random.default_rng(888)
    worst_rel = 0.0
    for _ in range(100):
        na, nb = int(rng.integers(2, 51)), int(rng.integers(2, 51))
        mu = WeightedEmpirical(rng.standard_normal(na), rng.random(na) + 0.02)
        nu = WeightedEmpirical(rng.standard_normal(nb), rng.random(nb) + 0.02)
        d_lp = wasserstein_exact(mu, nu, GroundCost.power(2.0)) ** 0.5
        d_1d = wasserstein_1d(mu, nu, 2.0)
        worst_rel = max(worst_rel, abs(d_lp - d_1d) / d_1d)
    worst_abs = 0.0
    for _ in range(20):
        mu = WeightedEmpirical(rng.standard_normal(2), rng.random(2) + 0.1)
        nu = WeightedEmpirical(rng.standard_normal(2), rng.random(2) + 0.1)
        got = wasserstein_exact(mu, nu, GroundCost.concave(np.sqrt))
        c = np.sqrt(np.abs(mu.atoms[:, :1] - nu.atoms[None, :, 0].reshape(1, -1)))
        a, b = mu.weights, nu.weights
        best = np.inf
        for tt in (max(0.0, a[0] + b[0] - 1.0), min(a[0], b[0])):
            plan = np.array([[tt, a[0] - tt], [b[0] - tt, 1.0 - a[0] - b[0] + tt]])
            best = min(best, float((plan * c).sum()))
        worst_abs = max(worst_abs, abs(got - best))
    ok = worst_rel <= 1e-9 and worst_abs <= 1e-12
    assert _report(8, "OT solver cross-validation", ok,
                   f"100 x |LP - quantile|/d = {worst_rel:.1e} <= 1e-9; "
                   f"20 x |LP - polytope| = {worst_abs:.1e} <= 1e-12", t0)


def test_criterion_9_anytime_determinism():
    t0 = time.perf_counter()
    milestones = (100, 1000, 10000)
    cfg = _ou_config(N=10**4, milestones=milestones, replications=1,
                     measure_backend="full_atoms")
    full = spoc_run(cfg)
    ok = True
    for n in milestones:
        short = spoc_run(_ou_config(N=n, milestones=(n,), replications=1,
                                    measure_backend="full_atoms"))
        a = full.snapshots[(0, n, 30)]
        b = short.snapshots[(0, n, 30)]
        ok &= np.array_equal(a.atoms, b.atoms) and np.array_equal(a.weights, b.weights)
    cfg4 = _ou_config(N=10**4, milestones=milestones, replications=4,
                      measure_backend="full_atoms")
    w1 = spoc_run(cfg4, workers=1)
    w4 = spoc_run(cfg4, workers=4)
    ok &= np.array_equal(w1.mean_traj, w4.mean_traj)
    ok &= np.array_equal(w1.second_traj, w4.second_traj)
    for k in w1.snapshots:
        ok &= np.array_equal(w1.snapshots[k].atoms, w4.snapshots[k].atoms)
        ok &= np.array_equal(w1.snapshots[k].weights, w4.snapshots[k].weights)
    assert _report(9, "anytime/determinism", ok,
                   "milestone snapshots bit-identical to standalone runs; "
                   "workers {1,4} bit-identical", t0)


def test_criterion_10_batch_degeneracy():
    t0 = time.perf_counter()
    n = 2000
    cfg_seq = _ou_config(N=n, milestones=(500, n), replications=2,
                         measure_backend="full_atoms")
    cfg_bat = _ou_config(N=n, milestones=(500, n), replications=2,
                         measure_backend="full_atoms", batch_sizes=(1,) * n)
    seq = spoc_run(cfg_seq)
    bat = batch_spoc_run(cfg_bat)
    ok = np.array_equal(seq.mean_traj, bat.mean_traj)
    ok &= np.array_equal(seq.second_traj, bat.second_traj)
    for k in seq.snapshots:
        ok &= np.array_equal(seq.snapshots[k].atoms, bat.snapshots[k].atoms)
        ok &= np.array_equal(seq.snapshots[k].weights, bat.snapshots[k].weights)
    assert _report(10, "batch degeneracy", ok,
                   "all-ones batches bit-identical to the sequential run", t0)


def test_criterion_11_path_space_trend():
    t0 = time.perf_counter()
    reps = 10
    cfg = _ou_config(N=256, milestones=(256,), replications=reps, store_paths=True,
                     measure_backend="full_atoms",
                     schedule=UpdateSchedule.harmonic(10**4))
    run = spoc_run(cfg)
    ref = reference_run(cfg.model, cfg, n_ref=256, store_paths=True)
    times = cfg.times()
    ns = (32, 64, 128, 256)
    vals = []
    for n in ns:
        vals.append(np.mean([
            path_space_w2(run.paths[r, :n], ref.paths[:n], times) ** 2
            for r in range(reps)
        ]))
    inversions = int(np.sum(np.diff(vals) > 0))
    ok = inversions <= 1
    assert _report(11, "path-space trend", ok,
                   "W2^2 = " + ", ".join(f"{v:.4f}" for v in vals)
                   + f" over n = {ns}; inversions = {inversions} <= 1", t0)
