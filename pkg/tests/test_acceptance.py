"""Acceptance suite: one test per release criterion.

Each test prints a single PASS line with its headline numbers so a run
doubles as a results table.  The replication-heavy criteria share one
fixed-seed condition run; everything here is deterministic.
"""

import json
import time

import numpy as np
import pytest
from scipy.optimize import approx_fprime
from scipy.stats import multivariate_normal

from bsgm import cli, dataio
from bsgm.estimate import (
    FitOptions,
    fit_baseline,
    fit_full,
    fit_reduced,
    free_vector,
    loglik_gradient,
    loglik_individual,
    negative_loglik,
)
from bsgm.harness import replication_seed, run_condition
from bsgm.model import loadings_full
from bsgm.simulate import SimCondition, condition_to_params, gen_dataset, sample_factors_tics, joint_factor_tic_moments
from bsgm.transform import (
    from_reparam,
    from_reparam_cellwise,
    original_jacobian,
    original_mean,
    reparam_jacobian,
    reparam_mean,
    to_reparam,
)

from conftest import rand_reparam_params

MASTER_SEED = 20250809

TABLE4_CONDITION = SimCondition(n=500, n_waves=10, knot_mean=4.5, knot_sd=0.3,
                                slope_diff=-3.2, explained_share=0.26, theta_eps=1.0)


@pytest.fixture(scope="module")
def table4_run():
    t0 = time.perf_counter()
    report = run_condition(TABLE4_CONDITION, 100,
                           FitOptions(seed=MASTER_SEED, compute_se=True), workers=1)
    elapsed = time.perf_counter() - t0
    print(f"\n[table4 run] S=100 attempted={report.attempted} "
          f"improper={report.n_improper_any} elapsed={elapsed:.0f}s")
    return report


def test_c01_transform_algebra():
    rng = np.random.default_rng(11)
    t0 = time.perf_counter()
    for _ in range(1000):
        m = np.r_[rng.uniform(-100, 100, size=3), rng.uniform(0.5, 9.0)]
        back = original_mean(reparam_mean(m), knot_mean=m[3])
        assert np.max(np.abs(back - m)) < 1e-12 * max(1.0, np.max(np.abs(m)))
    worst = 0.0
    for _ in range(1000):
        prime = rand_reparam_params(rng, c=2)
        a = from_reparam(prime)
        b = from_reparam_cellwise(prime)
        worst = max(worst,
                    np.max(np.abs(a.alpha - b.alpha)),
                    np.max(np.abs(a.psi - b.psi)),
                    np.max(np.abs(a.beta - b.beta)))
        assert a.psi[3, 3] == pytest.approx(prime.psi[3, 3], abs=1e-12)
        assert a.alpha[3] == pytest.approx(prime.alpha[3], abs=1e-12)
        fwd = to_reparam(a)
        assert fwd.psi[3, 3] == pytest.approx(a.psi[3, 3], abs=1e-12)
        assert fwd.alpha[3] == pytest.approx(a.alpha[3], abs=1e-12)
    elapsed = time.perf_counter() - t0
    assert worst < 1e-12
    assert elapsed < 1.0
    print(f"\nACCEPTANCE 01 PASS transform algebra: cellwise max dev {worst:.2e}, {elapsed:.2f}s")


def test_c02_jacobian_product():
    rng = np.random.default_rng(22)
    t0 = time.perf_counter()
    for _ in range(1000):
        mu = np.r_[rng.uniform(-50, 50, size=3), rng.uniform(0.5, 9.0)]
        fwd = reparam_jacobian(mu)
        rep_means = np.r_[reparam_mean(mu)[:3], mu[3]]
        prod = fwd @ original_jacobian(rep_means)
        expected = np.eye(4)
        expected[0, 3] = mu[1]
        assert np.max(np.abs(prod - expected)) < 1e-12 * max(1.0, abs(mu[1]))
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0
    print(f"\nACCEPTANCE 02 PASS jacobian product: identity except (1,4)=slope1 mean, {elapsed:.2f}s")


def test_c03_likelihood_correctness():
    rng = np.random.default_rng(33)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        params = rand_reparam_params(rng, c=2)
        t = np.sort(rng.uniform(0, 9, size=6))
        y = rng.normal(size=6) * 3 + 80
        x = rng.normal(size=2)
        lam = loadings_full(t, params.knot_mean, params.alpha[2])
        mu_y = lam @ (params.factor_means() + params.beta @ params.mu_x)
        total = params.psi + params.beta @ params.phi @ params.beta.T
        s_yy = lam @ total @ lam.T + params.theta_eps * np.eye(6)
        s_yx = lam @ params.beta @ params.phi
        mu_z = np.r_[mu_y, params.mu_x]
        sigma_z = np.block([[s_yy, s_yx], [s_yx.T, params.phi]])
        want = multivariate_normal(mean=mu_z, cov=0.5 * (sigma_z + sigma_z.T)).logpdf(np.r_[y, x])
        got = loglik_individual(params, y, t, x, mode="marginal")
        worst = max(worst, abs(got - want))
    assert worst < 1e-10

    cond = SimCondition(n=40, n_waves=6, knot_mean=2.5, knot_sd=0.3, slope_diff=-2.4,
                        explained_share=0.13, theta_eps=1.0)
    ds, _ = gen_dataset(cond, np.random.default_rng(34))
    fun = lambda v: negative_loglik(v, ds, "full", "marginal")
    worst_rel = 0.0
    checked = 0
    while checked < 20:
        v = free_vector(rand_reparam_params(rng, c=2))
        # the objective has kinks where the knot mean crosses an
        # occasion; only differentiable points are valid comparisons
        if np.min(np.abs(ds.t - v[3])) < 5e-4 * max(1.0, abs(v[3])):
            continue
        checked += 1
        g_opt = loglik_gradient(v, ds, "full", "marginal")
        h = 1e-4 * np.maximum(1.0, np.abs(v))  # independent step choice
        g_cen = np.array([(fun(v + e) - fun(v - e)) / (2 * h[i])
                          for i, e in enumerate(np.diag(h))])
        scale = np.maximum(np.abs(g_cen), 1.0)
        worst_rel = max(worst_rel, np.max(np.abs(g_opt - g_cen) / scale))
    elapsed = time.perf_counter() - t0
    assert worst_rel < 1e-4
    assert elapsed < 10.0
    print(f"\nACCEPTANCE 03 PASS likelihood: max density dev {worst:.2e}, "
          f"max rel gradient dev {worst_rel:.2e}, {elapsed:.1f}s")


def test_c04_generator_moments():
    t0 = time.perf_counter()
    cond = SimCondition(n=200, n_waves=10, knot_mean=4.5, knot_sd=0.3,
                        slope_diff=-3.2, explained_share=0.26, theta_eps=1.0)
    theta = condition_to_params(cond)
    mu, sigma = joint_factor_tic_moments(theta)
    n = 200_000
    eta, x = sample_factors_tics(theta, n, np.random.default_rng(44))
    draws = np.hstack([eta, x])
    emp = np.cov(draws, rowvar=False)
    se = np.sqrt((np.outer(np.diag(sigma), np.diag(sigma)) + sigma ** 2) / n)
    dev = np.abs(emp - sigma)
    assert np.all(dev <= 4.0 * se + 1e-15), f"max normalized dev {(dev / np.maximum(se, 1e-300)).max():.2f}"

    for share in (0.13, 0.26):
        theta_s = condition_to_params(
            SimCondition(n=200, n_waves=10, knot_mean=4.5, knot_sd=0.3,
                         slope_diff=-3.2, explained_share=share, theta_eps=1.0))
        explained = np.diag(theta_s.beta @ theta_s.phi @ theta_s.beta.T)
        total = explained + np.diag(theta_s.psi)
        assert np.max(np.abs(explained / total - share)) < 1e-12
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    worst_z = float((dev / np.maximum(se, 1e-300)).max())
    print(f"\nACCEPTANCE 04 PASS generator moments: worst cell at {worst_z:.2f} MC SEs, {elapsed:.1f}s")


def test_c05_scaled_bias_reproduction(table4_run):
    report = table4_run
    mean_names = ("mean_intercept", "mean_slope1", "mean_slope2", "mean_knot")
    path_names = tuple(f"beta_x{j}_{f}" for j in (1, 2)
                       for f in ("intercept", "slope1", "slope2"))
    for name in mean_names:
        pm = report.params[name]
        assert abs(pm.relative_bias) < 0.03, f"{name} bias {pm.relative_bias}"
    for name in path_names:
        pm = report.params[name]
        assert abs(pm.relative_bias) < 0.15, f"{name} bias {pm.relative_bias}"
    worst_mean = max(abs(report.params[n].relative_bias) for n in mean_names)
    worst_path = max(abs(report.params[n].relative_bias) for n in path_names)
    print(f"\nACCEPTANCE 05 PASS scaled bias: means max |rbias| {worst_mean:.4f} (<0.03), "
          f"paths max |rbias| {worst_path:.4f} (<0.15)")


def test_c06_scaled_coverage(table4_run):
    report = table4_run
    covs = {}
    for name in ("mean_intercept", "mean_slope1", "mean_slope2", "mean_knot"):
        pm = report.params[name]
        assert pm.coverage is not None
        assert 0.89 <= pm.coverage <= 0.99, f"{name} coverage {pm.coverage}"
        covs[name] = pm.coverage
    pretty = ", ".join(f"{k.removeprefix('mean_')}={v:.2f}" for k, v in covs.items())
    print(f"\nACCEPTANCE 06 PASS coverage of growth-factor means in [0.89, 0.99]: {pretty}")


def test_c07_improper_solution_regimes():
    t0 = time.perf_counter()
    common = dict(n_waves=10, knot_mean=4.5, explained_share=0.13)
    frequent = SimCondition(n=200, knot_sd=0.0, slope_diff=1.6, theta_eps=2.0, **common)
    rare = SimCondition(n=500, knot_sd=0.6, slope_diff=3.2, theta_eps=1.0, **common)
    opts = FitOptions(seed=MASTER_SEED + 1, compute_se=False)
    rep_f = run_condition(frequent, 50, opts, workers=1)
    rep_r = run_condition(rare, 50, opts, workers=1)
    frac_f = rep_f.n_improper_any / 50
    frac_r = rep_r.n_improper_any / 50
    elapsed = time.perf_counter() - t0
    assert frac_f >= 0.20, f"zero-spread regime improper fraction {frac_f}"
    assert frac_r <= 0.10, f"large-spread regime improper fraction {frac_r}"
    assert elapsed < 900.0
    print(f"\nACCEPTANCE 07 PASS improper regimes: zero-spread {frac_f:.0%} (>=20%), "
          f"large-spread {frac_r:.0%} (<=10%), {elapsed:.0f}s")


def test_c08_reduced_model_convergence():
    t0 = time.perf_counter()
    cond = SimCondition(n=500, n_waves=6, knot_mean=2.5, knot_sd=0.3,
                        slope_diff=-1.6, explained_share=0.13, theta_eps=1.0)
    converged = 0
    for i in range(100):
        seed = replication_seed(MASTER_SEED + 2, i)
        ds, _ = gen_dataset(cond, np.random.default_rng(seed))
        fit = fit_reduced(ds, FitOptions(seed=seed, compute_se=False))
        converged += fit.converged
    elapsed = time.perf_counter() - t0
    assert converged >= 99
    assert elapsed < 300.0
    print(f"\nACCEPTANCE 08 PASS reduced convergence: {converged}/100, {elapsed:.0f}s")


def test_c09_model_comparison_ordering():
    t0 = time.perf_counter()
    cond = SimCondition(n=400, n_waves=10, knot_mean=4.5, knot_sd=0.3,
                        slope_diff=-3.2, explained_share=0.13, theta_eps=1.0)
    opts = FitOptions(seed=MASTER_SEED + 3, compute_se=False)
    aics = []
    for i in range(3):
        ds, _ = gen_dataset(cond, np.random.default_rng(replication_seed(MASTER_SEED + 3, i)))
        full = fit_full(ds, opts)
        red = fit_reduced(ds, opts)
        lin = fit_baseline(ds, "linear", opts)
        assert full.converged and red.converged and lin.converged
        assert full.aic < red.aic < lin.aic
        assert full.loglik >= red.loglik - 1e-4
        aics.append((full.aic, red.aic, lin.aic))
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    print(f"\nACCEPTANCE 09 PASS model comparison: AIC random-knot < fixed-knot < linear "
          f"on 3/3 datasets, {elapsed:.0f}s")


def test_c10_harness_worker_determinism(tmp_path):
    t0 = time.perf_counter()
    cfg = {
        "condition": {"n": 200, "J": 6, "knotMean": 2.5, "knotSD": 0.3, "slopeDiff": -2.4,
                      "explainedShare": 0.13, "thetaEps": 1.0, "delta": 0.25},
        "S": 4,
        "masterSeed": MASTER_SEED + 4,
    }
    cfg_path = tmp_path / "mc.json"
    cfg_path.write_text(json.dumps(cfg))
    out1, out2 = tmp_path / "w1.json", tmp_path / "w8.json"
    csv1, csv2 = tmp_path / "w1.csv", tmp_path / "w8.csv"
    assert cli.main(["mc", "--config", str(cfg_path), "--out", str(out1),
                     "--csv", str(csv1), "--workers", "1"]) == 0
    assert cli.main(["mc", "--config", str(cfg_path), "--out", str(out2),
                     "--csv", str(csv2), "--workers", "8"]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    assert csv1.read_bytes() == csv2.read_bytes()
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    print(f"\nACCEPTANCE 10 PASS harness determinism: 1 vs 8 workers byte-identical, {elapsed:.0f}s")
