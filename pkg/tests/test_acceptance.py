"""Acceptance criteria, one test each.

Every test emits a single ``CRITERION n: PASS|FAIL ...`` line, repeated in
the pytest terminal summary. Run ``python tests/test_acceptance.py`` to get just the summary.
"""
import math
import sys
import time

import numpy as np
import pytest

from mlenkf.enkf import enkf_run
from mlenkf.harness import (BenchmarkConfig, benchmark, gold_standard, identity, indicator,
                            initial_law, level_decay, median_slope, rmse, fit_rate, synthesize)
from mlenkf.integrate import LevelGrid
from mlenkf.kalman import kalman_gain
from mlenkf.linalg import psd_truncate
from mlenkf.models import ObservationModel, gbm_log_step, gbm_model, ou_model
from mlenkf.multilevel import (Allocation, MultilevelEnsemble, Rates, allocate, ml_estimate,
                               ml_gain, mlenkf_run)
from mlenkf.stochastic import Role, Stream, coupled_brownian

OU_SIGMA, OU_GAMMA = 0.5, 0.04
GBM_SIGMA, GBM_GAMMA = 0.25, 1 / 16


# collected for the terminal summary (see conftest.py)
REPORT_LINES = []


def report(number, ok, detail):
    line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} {detail}"
    REPORT_LINES.append(line)
    print(line, flush=True)
    return ok


def budgets_for_levels(rates, grid, levels, c_m):
    return [float(allocate(1.0, rates, grid, c_m, L=L).cost_per_epoch(grid)) for L in levels]


def criterion_1():
    """Truncation and gain-continuity bounds on 1000 random instances each."""
    start = time.perf_counter()
    rng = np.random.default_rng(20240601)
    worst_trunc = worst_gain = 0.0
    fails = 0
    for _ in range(1000):
        d = int(rng.integers(1, 9))
        b = rng.standard_normal((d, d)) * rng.uniform(0.1, 10)
        a = 0.5 * (b + b.T)
        g = rng.standard_normal((d, d))
        c = g @ g.T * rng.uniform(0, 3)
        lhs = np.linalg.norm(psd_truncate(a) - a, 2)
        rhs = np.linalg.norm(a - c, 2)
        worst_trunc = max(worst_trunc, lhs / rhs)
        fails += lhs > rhs * (1 + 1e-9)
    for _ in range(1000):
        d = int(rng.integers(1, 9))
        m = int(rng.integers(1, d + 1))
        g = rng.standard_normal((d, d))
        c = g @ g.T
        b = rng.standard_normal((d, d)) * rng.uniform(0.01, 3)
        c_ml = c + 0.5 * (b + b.T)
        H = rng.standard_normal((m, d))
        r = rng.standard_normal((m, m))
        gamma = r @ r.T + rng.uniform(0.05, 1) * np.eye(m)
        obs = ObservationModel(H, 0.5 * (gamma + gamma.T))
        K = kalman_gain(c, c, H, obs.gamma)
        lhs = np.linalg.norm(ml_gain(c_ml, obs) - K, 2)
        rhs = (np.linalg.norm(H, 2) / obs.gamma_min * (1 + 2 * np.linalg.norm(K @ H, 2))
               * np.linalg.norm(c_ml - c, 2))
        worst_gain = max(worst_gain, lhs / rhs)
        fails += lhs > rhs * (1 + 1e-9)
    elapsed = time.perf_counter() - start
    ok = fails == 0 and elapsed < 10
    return report(1, ok, f"violations={fails} worst_ratio(trunc)={worst_trunc:.6f} "
                         f"worst_ratio(gain)={worst_gain:.6f} time={elapsed:.1f}s")


def criterion_2():
    """EnKF converges to the Kalman filter at rate M^{-1/2} (exact propagation)."""
    start = time.perf_counter()
    model, obs = ou_model(OU_SIGMA), ObservationModel.scalar(OU_GAMMA)
    n_epochs = 100
    _, ys = synthesize(model, obs, n_epochs, seed=0)
    ref = gold_standard(model, obs, ys)
    sizes = [10**2, 10**3, 10**4, 10**5]
    slopes = {"mean": [], "cov": []}
    for seed in range(1, 21):
        errs = {"mean": [], "cov": []}
        for M in sizes:
            tr = enkf_run(M, 0, model, LevelGrid(1, 2), obs, ys, initial_law(model), seed,
                          exact=True)
            for f in errs:
                errs[f].append(rmse(tr, ref, f))
        for f in errs:
            slopes[f].append(fit_rate(zip(sizes, errs[f])))
    med = {f: float(np.median(v)) for f, v in slopes.items()}
    elapsed = time.perf_counter() - start
    ok = all(abs(s + 0.5) <= 0.1 for s in med.values()) and elapsed < 120
    return report(2, ok, f"slope(mean)={med['mean']:.3f} slope(cov)={med['cov']:.3f} "
                         f"target=-0.5+-0.1 time={elapsed:.1f}s")


def criterion_3():
    """OU cost-vs-error slopes for MLEnKF and EnKF over > 3 decades of budget."""
    start = time.perf_counter()
    rates, grid = Rates(1.0, 2.0, 1.0), LevelGrid(2, 2)
    budgets = budgets_for_levels(rates, grid, range(2, 8), 1.0)
    cfg = BenchmarkConfig(ou_model(OU_SIGMA), ObservationModel.scalar(OU_GAMMA), 100, grid, rates,
                          budgets, list(range(1, 11)), data_seed=0, c_m=1.0)
    rows = benchmark(cfg)
    med = {(m, f): median_slope(rows, m, f) for m in ("mlenkf", "enkf") for f in ("mean", "cov")}
    decades = math.log10(budgets[-1] / budgets[0])
    elapsed = time.perf_counter() - start
    ok = (decades >= 3
          and all(abs(med["mlenkf", f] + 0.5) <= 0.15 for f in ("mean", "cov"))
          and all(abs(med["enkf", f] + 1 / 3) <= 0.1 for f in ("mean", "cov"))
          and elapsed < 900)
    return report(3, ok, "mlenkf(mean,cov)=({:.3f},{:.3f}) enkf(mean,cov)=({:.3f},{:.3f}) "
                         "decades={:.2f} time={:.0f}s".format(
                             med["mlenkf", "mean"], med["mlenkf", "cov"], med["enkf", "mean"],
                             med["enkf", "cov"], decades, elapsed))


def criterion_4():
    """Level-decay rate estimates with 10^5 samples per level."""
    start = time.perf_counter()
    M, top = 10**5, 6
    ou = level_decay(ou_model(OU_SIGMA), LevelGrid(2, 2), identity, top, M, 2, seed=1)
    gbm = level_decay(gbm_model(GBM_SIGMA), LevelGrid(8, 2), identity, top, M, 2, seed=2)
    ind = level_decay(ou_model(OU_SIGMA), LevelGrid(2, 2), indicator(0.1), top, M, [2, 4, 8],
                      seed=3)
    b = [ind.beta[p] for p in (2, 4, 8)]
    elapsed = time.perf_counter() - start
    ok = (0.8 <= ou.alpha <= 1.2 and 1.7 <= ou.beta[2] <= 2.3 and 0.7 <= gbm.beta[2] <= 1.3
          and b[0] >= b[1] >= b[2] and elapsed < 300)
    return report(4, ok, f"ou_alpha={ou.alpha:.3f} ou_beta={ou.beta[2]:.3f} "
                         f"gbm_beta={gbm.beta[2]:.3f} indicator_beta(2,4,8)="
                         f"({b[0]:.3f},{b[1]:.3f},{b[2]:.3f}) time={elapsed:.0f}s")


def criterion_5():
    """Exact reductions and replay determinism."""
    checks = {}
    # L = 0 multilevel run equals the single-level run
    for model, gamma, n0 in [(ou_model(OU_SIGMA), OU_GAMMA, 2), (gbm_model(GBM_SIGMA), GBM_GAMMA, 8)]:
        obs, grid = ObservationModel.scalar(gamma), LevelGrid(n0, 2)
        _, ys = synthesize(model, obs, 25, seed=4)
        a = mlenkf_run(Allocation(0, (500,), Rates(1, 1, 1), 1.0, 1.0), model, grid, obs, ys,
                       initial_law(model), seed=17)
        b = enkf_run(500, 0, model, grid, obs, ys, initial_law(model), seed=17)
        checks[f"L0_{model.name}"] = (np.array_equal(a.means, b.means)
                                      and np.array_equal(a.covs, b.covs))
    # coarse increments are exact grouped partial sums of fine increments
    ok = True
    for ratio, n in [(2, 64), (4, 32), (3, 9)]:
        fine, coarse = coupled_brownian(Stream(5, 0, 3, Role.DRIVE, np.arange(1000)), n, ratio)
        grouped = fine.increments.reshape(1000, n // ratio, ratio, 1)
        acc = grouped[:, :, 0, :].copy()
        for j in range(1, ratio):
            acc = acc + grouped[:, :, j, :]
        ok &= np.array_equal(acc, coarse.increments)
    checks["coarse_sums"] = bool(ok)
    # the multilevel empirical measure integrates 1 to exactly 1
    rng = np.random.default_rng(0)
    e = MultilevelEnsemble.from_arrays([rng.standard_normal((m, 2)) for m in (50, 20, 7)],
                                       [None, rng.standard_normal((20, 2)),
                                        rng.standard_normal((7, 2))])
    checks["unit_mass"] = ml_estimate(e, lambda x: np.ones(len(x))) == 1.0
    # replay across thread counts
    model, obs, grid = ou_model(OU_SIGMA), ObservationModel.scalar(OU_GAMMA), LevelGrid(2, 2)
    _, ys = synthesize(model, obs, 10, seed=1)
    alloc = allocate(2.0**-4, Rates(1, 2, 1), grid)
    runs = [mlenkf_run(alloc, model, grid, obs, ys, initial_law(model), seed=3, workers=w)
            for w in (1, 1, 2, 7)]
    checks["replay_threads"] = all(np.array_equal(r.means, runs[0].means)
                                   and np.array_equal(r.covs, runs[0].covs) for r in runs[1:])
    ok = all(checks.values())
    return report(5, ok, " ".join(f"{k}={'ok' if v else 'FAILED'}" for k, v in checks.items()))


def criterion_6():
    """GBM: log-space reference recursion and cost-vs-error slopes."""
    start = time.perf_counter()
    model, obs = gbm_model(GBM_SIGMA), ObservationModel.scalar(GBM_GAMMA)
    n_epochs = 200
    _, ys = synthesize(model, obs, n_epochs, seed=0)
    ref = gold_standard(model, obs, ys)
    # independent scalar recursion on z = log u
    s2, m, c, dev = GBM_SIGMA**2, 0.0, 0.0, 0.0
    for n in range(n_epochs):
        m, c = gbm_log_step(m, n, GBM_SIGMA, 0.0), c + s2
        k = c / (c + GBM_GAMMA)
        m, c = m + k * (ys[n, 0] - m), (1 - k) * c
        dev = max(dev, abs(m - ref.means[n + 1, 0]), abs(c - ref.covs[n + 1, 0, 0]))
    rates, grid, c_m = Rates(1.0, 1.0, 1.0), LevelGrid(8, 2), 0.25
    budgets = budgets_for_levels(rates, grid, range(1, 5), c_m)
    cfg = BenchmarkConfig(model, obs, n_epochs, grid, rates, budgets, list(range(1, 11)),
                          data_seed=0, c_m=c_m)
    rows = benchmark(cfg)
    med = {(mth, f): median_slope(rows, mth, f) for mth in ("mlenkf", "enkf")
           for f in ("mean", "cov")}
    elapsed = time.perf_counter() - start
    ok = (dev <= 1e-10
          and all(med["mlenkf", f] <= -0.4 for f in ("mean", "cov"))
          and all(-0.45 <= med["enkf", f] <= -0.22 for f in ("mean", "cov"))
          and elapsed < 900)
    return report(6, ok, "kf_dev={:.1e} mlenkf(mean,cov)=({:.3f},{:.3f}) "
                         "enkf(mean,cov)=({:.3f},{:.3f}) decades={:.2f} time={:.0f}s".format(
                             dev, med["mlenkf", "mean"], med["mlenkf", "cov"],
                             med["enkf", "mean"], med["enkf", "cov"],
                             math.log10(budgets[-1] / budgets[0]), elapsed))


def criterion_7():
    """Allocation tables reproduced with integer equality."""
    a = allocate(0.1, Rates(1, 2, 1), LevelGrid(2, 2), 1.0, L=3)
    b = allocate(0.1, Rates(1, 1, 1), LevelGrid(2, 2), 1.0, L=2)
    ok = a.m_per_level == (102, 41, 16, 7) and b.m_per_level == (128, 64, 32)
    return report(7, ok, f"beta>gamma M={a.m_per_level} beta=gamma M={b.m_per_level}")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7]


@pytest.mark.slow
@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"criterion_{i}" for i in range(1, 8)])
def test_acceptance(criterion):
    assert criterion()


if __name__ == "__main__":
    results = [c() for c in CRITERIA]
    sys.exit(0 if all(results) else 1)
