"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The Monte Carlo criteria take several minutes on a single core.
"""

import math

import numpy as np
import pytest
from scipy import stats

from _dgp import THETA0, fit_logistic, logistic_quantile_dataset
from functional_gmm.combine import (
    CombinationProblem,
    combine_series,
    gaussian_closed_form,
    sigma_from_differences,
    solve_combination,
)
from functional_gmm.data import ForecastDataset, InstrumentMatrix, build_instruments
from functional_gmm.functionals import normal_expectile, sample_expectile
from functional_gmm.gmm import HacConfig, hac_covariance, moment_jacobian, moment_series, two_step_estimate
from functional_gmm.inference import chi2_survival, level_confidence_band
from functional_gmm.sim import McConfig, asymmetric_info_scenario, mc_size_power
from functional_gmm.specmodels import LogisticLinear

pytestmark = pytest.mark.acceptance

REPS = 500


def binomial_band(n, p=0.05):
    lo, hi = stats.binom.ppf([0.025, 0.975], n, p)
    return lo / n, hi / n


def logistic(u):
    return 1.0 / (1.0 + np.exp(-u))


@pytest.fixture(scope="module")
def full_info_report():
    cfg = McConfig(T_grid=(1000, 2000), reps=REPS, forecaster="full",
                   families=("quantile", "expectile"), timings=("nonlagged",), base_seed=101)
    return mc_size_power(cfg)


@pytest.fixture(scope="module")
def rigid_report():
    cfg = McConfig(T_grid=(250, 1000, 2000), reps=REPS, forecaster="rigid",
                   families=("quantile", "expectile"), timings=("lagged", "nonlagged"), base_seed=202)
    return mc_size_power(cfg)


def test_criterion_01_chi_square(report):
    p = chi2_survival(0.80, 2)
    ok = abs(p - 0.6703) <= 1e-4
    report(1, ok, f"chi2_survival(0.80, 2) = {p:.6f}, target 0.6703 +- 1e-4")
    assert ok


def test_criterion_02_normal_expectile(report):
    tau = 1 / 2.85
    e = normal_expectile(tau)
    draws = np.random.default_rng(0).standard_normal(10_000_000)
    sample = sample_expectile(draws, tau)
    ok = -0.255 <= e <= -0.245 and abs(e - sample) < 5e-4
    report(2, ok, f"normal_expectile = {e:.6f}, sample expectile of 1e7 draws = {sample:.6f}")
    assert ok


def test_criterion_03_consistency(report):
    means = []
    for T in (250, 1000, 2000):
        errs = [np.linalg.norm(fit_logistic(logistic_quantile_dataset(T, seed=(303, T, r))).theta - THETA0)
                for r in range(200)]
        means.append(float(np.mean(errs)))
    ok = means[0] > means[1] > means[2] and means[2] < 0.1
    report(3, ok, "mean |theta_hat - theta_0| at T = 250, 1000, 2000: "
           + ", ".join(f"{m:.4f}" for m in means))
    assert ok


def test_criterion_04_size(full_info_report, report):
    details, ok = [], True
    for fam in ("quantile", "expectile"):
        row = full_info_report.row(1000, "nonlagged", fam)
        n = row.reps - row.failures
        lo, hi = binomial_band(n)
        ok &= lo <= row.rate <= hi
        details.append(f"{fam} {row.rate:.3f} in [{lo:.3f}, {hi:.3f}] ({row.failures} failed)")
    report(4, ok, "size at T = 1000: " + "; ".join(details))
    assert ok


def test_criterion_05_power(rigid_report, report):
    grid = (250, 1000, 2000)
    rate = {(T, s, f): rigid_report.rate(T, s, f) for T in grid
            for s in ("lagged", "nonlagged") for f in ("quantile", "expectile")}
    power_q = [rate[T, "nonlagged", "quantile"] for T in grid]
    increasing = power_q[0] < power_q[1] < power_q[2]
    above = all(rate[T, "nonlagged", f] > rate[T, "lagged", f] for T in grid for f in ("quantile", "expectile"))
    gap = min(rate[2000, "nonlagged", f] - rate[2000, "lagged", f] for f in ("quantile", "expectile"))
    ok = increasing and above and gap >= 0.10
    fmt = lambda f, s: "/".join(f"{rate[T, s, f]:.3f}" for T in grid)
    report(5, ok, f"power q {fmt('quantile', 'nonlagged')} e {fmt('expectile', 'nonlagged')}, "
           f"size q {fmt('quantile', 'lagged')} e {fmt('expectile', 'lagged')}, gap at 2000 {gap:.3f}")
    assert ok


def test_criterion_06_null_distribution(full_info_report, report):
    ok = True
    details = []
    for fam in ("quantile", "expectile"):
        row = full_info_report.row(2000, "nonlagged", fam)
        n = len(row.statistics)
        d = stats.kstest(row.statistics, stats.chi2(row.df).cdf).statistic
        crit = stats.kstwo.ppf(0.99, n)
        ok &= d < crit
        details.append(f"{fam} D = {d:.4f} (df {row.df}, n {n})")
    report(6, ok, "KS vs chi-square at T = 2000: " + "; ".join(details)
           + f"; 1% critical value {stats.kstwo.ppf(0.99, REPS):.4f}")
    assert ok


def test_criterion_07_band_coverage(report):
    z0 = 0.0
    truth = logistic(THETA0[0] + z0 * THETA0[1])
    covered = 0
    for r in range(300):
        fit = fit_logistic(logistic_quantile_dataset(2000, seed=(707, r)))
        band = level_confidence_band(fit, [z0], 0.8)
        covered += band.lower[0] <= truth <= band.upper[0]
    rate = covered / 300
    ok = abs(rate - 0.80) <= 0.05
    report(7, ok, f"0.8 band coverage at z = 0 over 300 replications: {rate:.3f}")
    assert ok


def test_criterion_08_combination(report):
    rng = np.random.default_rng(808)
    worst = 0.0
    for _ in range(1000):
        x, m, sigma = rng.normal(scale=5), rng.uniform(0.01, 0.99), rng.uniform(0.05, 5)
        fam = rng.choice(["quantile", "expectile"])
        prob = CombinationProblem([x], [m], [rng.uniform(0.01, 1)], fam)
        worst = max(worst, abs(solve_combination(prob, sigma).mu - gaussian_closed_form(x, m, sigma, fam).mu))
    ds = logistic_quantile_dataset(20_000, seed=809)
    fit = fit_logistic(ds)
    scores = combine_series(ds, "quantile", fit.model, fit.theta, sigma_from_differences(ds.y)).scores()
    norm = scores["normalized"]
    ordering = (norm["combined_mean"]["MSE"] < norm["forecast"]["MSE"]
                and norm["forecast"]["MFLL"] < norm["combined_mean"]["MFLL"])
    ok = worst < 1e-6 and ordering
    report(8, ok, f"max closed-form gap {worst:.2e}; normalized MSE/MFLL combined "
           f"{norm['combined_mean']['MSE']:.3f}/{norm['combined_mean']['MFLL']:.3f}, "
           f"quantile forecast {norm['forecast']['MSE']:.3f}/{norm['forecast']['MFLL']:.3f}")
    assert ok


def _loop_moments(ds, W, family, theta):
    T, q = W.shape
    g = np.zeros((T, q))
    for t in range(T):
        m = 1.0 / (1.0 + math.exp(-(theta[0] + theta[1] * ds.z[t])))
        x, y = ds.x[t], ds.y[t]
        if family == "quantile":
            v = (1.0 if y <= x else 0.0) - m
        else:
            v = abs((1.0 if x >= y else 0.0) - m) * (x - y)
        for i in range(q):
            g[t, i] = v * W[t, i]
    return g


def _loop_jacobian(ds, W, family, theta):
    T, q = W.shape
    G = np.zeros((q, 2))
    for t in range(T):
        m = 1.0 / (1.0 + math.exp(-(theta[0] + theta[1] * ds.z[t])))
        dm = (m * (1.0 - m), m * (1.0 - m) * ds.z[t])
        dv = -1.0 if family == "quantile" else -abs(ds.x[t] - ds.y[t])
        for i in range(q):
            for k in range(2):
                G[i, k] += dv * dm[k] * W[t, i] / T
    return G


def _loop_hac(g, h):
    T, q = g.shape
    mean = [sum(g[t, i] for t in range(T)) / T for i in range(q)]
    S = np.zeros((q, q))
    for a in range(q):
        for b in range(q):
            for j in range(-h, h + 1):
                k = 1.0 - abs(j) / (h + 1.0)
                acc = 0.0
                for t in range(T):
                    if 0 <= t - j < T:
                        acc += (g[t, a] - mean[a]) * (g[t - j, b] - mean[b])
                S[a, b] += k * acc / T
    return S


def test_criterion_09_oracle_equivalence(report):
    worst = {"moments": 0.0, "jacobian": 0.0, "hac": 0.0}
    exact = True
    model = LogisticLinear()
    for seed in range(10):
        rng = np.random.default_rng((909, seed))
        T = 20
        ds = ForecastDataset(np.arange(1, T + 1), rng.normal(size=T), rng.normal(size=T), rng.normal(size=T))
        W = np.column_stack([np.ones(T), rng.normal(size=(T, 2))])
        w = InstrumentMatrix(W, ("c", "a", "b"))
        theta = rng.normal(size=2)
        for fam in ("quantile", "expectile"):
            g = moment_series(ds, w, fam, model, theta).g
            worst["moments"] = max(worst["moments"], np.abs(g - _loop_moments(ds, W, fam, theta)).max())
            G = moment_jacobian(ds, w, fam, model, theta)
            worst["jacobian"] = max(worst["jacobian"], np.abs(G - _loop_jacobian(ds, W, fam, theta)).max())
            for h in (1, 2, 5):
                S = hac_covariance(g, HacConfig("bartlett", h))
                worst["hac"] = max(worst["hac"], np.abs(S - _loop_hac(g, h)).max())
            gc = g - g.mean(axis=0)
            gamma0 = gc.T @ gc / T
            S0 = hac_covariance(g, HacConfig("bartlett", 0))
            exact &= bool(np.array_equal(S0, 0.5 * (gamma0 + gamma0.T)))
            worst["hac"] = max(worst["hac"], np.abs(S0 - _loop_hac(g, 0)).max())
    ok = max(worst.values()) <= 1e-10 and exact
    report(9, ok, ", ".join(f"{k} max error {v:.1e}" for k, v in worst.items())
           + f", bandwidth 0 exact: {exact}")
    assert ok


def test_criterion_10_asymmetric_information(report):
    ds = asymmetric_info_scenario(100_000, seed=1010)
    hit = ds.y <= ds.x
    edges = np.quantile(ds.z, np.linspace(0, 1, 11))
    bins = np.clip(np.searchsorted(edges, ds.z, side="right") - 1, 0, 9)
    zcrit = stats.norm.ppf(1 - 0.025 / 10)
    worst = 0.0
    for b in range(10):
        sel = bins == b
        p = ds.extra["true_level"][sel].mean()
        worst = max(worst, abs(hit[sel].mean() - p) / math.sqrt(p * (1 - p) / sel.sum()))
    binned_ok = worst <= zcrit
    negative = 0
    for r in range(100):
        d = asymmetric_info_scenario(2000, seed=(1011, r))
        w = build_instruments(d, "constant,state")
        negative += two_step_estimate(d, w, "quantile", LogisticLinear()).theta[1] < 0
    ok = binned_ok and negative >= 95
    report(10, ok, f"largest binned deviation {worst:.2f} standard errors (limit {zcrit:.2f}); "
           f"theta_2 < 0 in {negative}/100 fits")
    assert ok
