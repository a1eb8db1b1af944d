"""Acceptance criteria, one pass/fail line each.

Each test prints its line past pytest's output capture, so the lines appear
in a plain ``pytest -v`` run.  Everything except criteria 1 and 4 is marked
slow (about an hour in total on one core).
"""

import os
import subprocess
import sys
import time

import numpy as np
import pytest
import scipy.linalg

from golf.kernels import KernelSpec, corr_matrix
from golf.lattice import LatticeData
from golf.loadings import project
from golf.model import GolfModel, MeanModel, ModelState, sample_B1, sample_B2, sample_factors, sample_mean
from golf.oracle import (
    SimSpec,
    compute_metrics,
    dense_B1_posterior,
    dense_B2_posterior,
    dense_factor_posterior,
    dense_mcmc,
    dense_mixed_mean_posterior,
    simulate,
)
from golf.sampler import McmcConfig, build_model, initial_state, mcmc_run, predict
from golf.validation import format_report, run_suite


@pytest.fixture
def report(capsys):
    def emit(number, passed, detail):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if passed else 'FAIL'}  {detail}", flush=True)
    return emit


# 1: fast path against dense linear algebra


def test_c1_exactness_suite(report):
    t = time.perf_counter()
    checks = run_suite(200, seed=2024)
    elapsed = time.perf_counter() - t
    worst = ", ".join(f"{c.name} {c.max_err:.1e}" for c in checks)
    ok = all(c.passed for c in checks)
    report(1, ok, f"200 instances in {elapsed:.1f}s; max errors: {worst}")
    assert ok, format_report(checks)


# 2: prediction quality on the 25 x 25 Matern example


@pytest.mark.slow
def test_c2_matern_half_missing(report):
    res, acc = [], []
    for r in range(20):
        sim = simulate(SimSpec(n1=25, n2=25, missing_fraction=0.5, seed=r))
        ch = mcmc_run(McmcConfig(iterations=5000, d=25, seed=r), sim.data)
        p = predict(ch)
        m = compute_metrics(p.mean, p.lo, p.hi, sim.truth, ~sim.data.mask)
        res.append((m.rmse, m.coverage, m.length))
        rates = ch.acceptance_rates()
        acc.append((rates["factors"].min(), rates["factors"].max(), rates["beta0"]))
    rmse, cov, length = np.mean(res, axis=0)
    ok = 0.095 <= rmse <= 0.12 and 0.91 <= cov <= 0.98 and 0.37 <= length <= 0.48
    a = np.array(acc)
    report(2, ok, f"20 replicas, T=5000: RMSE {rmse:.4f} in [0.095, 0.12], coverage {cov:.4f} in "
                  f"[0.91, 0.98], length {length:.4f} in [0.37, 0.48]; acceptance rates factors "
                  f"{a[:, 0].min():.2f}-{a[:, 1].max():.2f}, beta0 {a[:, 2].min():.2f}-{a[:, 2].max():.2f}")
    assert ok


# 3: lattice sampler against the dense-likelihood sampler


@pytest.mark.slow
def test_c3_fast_vs_dense(report):
    T = 2000
    deltas, rm = [], []
    for r in range(5):
        sim = simulate(SimSpec(n1=25, n2=25, missing_fraction=0.5, seed=100 + r))
        held = ~sim.data.mask
        cfg = McmcConfig(iterations=T, d=25, seed=r)
        fast = predict(mcmc_run(cfg, sim.data)).mean[held]
        model = build_model(cfg, sim.data)
        dc = dense_mcmc(model, sim.data, initial_state(cfg, model, sim.data), T, r)
        dense = dc.predictive()[0]
        deltas.append(np.sqrt(np.mean((fast - dense) ** 2)))
        rm.append((np.sqrt(np.mean((fast - sim.truth[held]) ** 2)), np.sqrt(np.mean((dense - sim.truth[held]) ** 2))))
    mean_delta = float(np.mean(deltas))
    rm = np.mean(rm, axis=0)
    ok = mean_delta < 0.01
    report(3, ok, f"5 replicas, T={T} each: mean dRMSE {mean_delta:.4f} < 0.01 "
                  f"(RMSE lattice {rm[0]:.4f}, dense {rm[1]:.4f})")
    assert ok


# 4: factor posterior independence


def test_c4_posterior_independence(report):
    rng = np.random.default_rng(44)
    worst_dense = 0.0
    for fam in ("exponential", "matern52"):
        for _ in range(5):
            m = GolfModel(np.linspace(0, 1, 4), np.linspace(0, 1, 5), 4, family_s=fam, family_x=fam)
            st = ModelState(np.exp(rng.uniform(0, 2)), np.exp(rng.uniform(0, 2, 4)), np.exp(rng.uniform(-2, 0.5, 4)),
                            float(np.exp(rng.uniform(-2, 0))), rng.standard_normal((4, 5)))
            _, cov = dense_factor_posterior(m, st, m.loadings(st.beta0).matrix())
            blocks = cov.reshape(4, 5, 4, 5)
            off = np.abs(blocks * (1 - np.eye(4))[:, None, :, None]).max()
            worst_dense = max(worst_dense, off)
    L = m.loadings(st.beta0)
    Z = sample_factors(m.filters(st.beta, st.eta), project(st.Y, L), st.sigma2, rng, size=100_000)
    C = np.corrcoef(Z.reshape(20, -1))
    worst_mc = np.abs(C * (1 - np.kron(np.eye(4), np.ones((5, 5))))).max()
    ok = worst_dense < 1e-10 and worst_mc < 0.03
    report(4, ok, f"dense cross-covariance max {worst_dense:.1e} < 1e-10; "
                  f"cross-correlation of 1e5 lattice draws max {worst_mc:.4f} < 0.03")
    assert ok


# 5: mean-coefficient samplers against dense posteriors


def _mean_instance(variant, d):
    rng = np.random.default_rng(50 + d)
    H1, H2 = np.ones((4, 1)), np.ones((5, 1))
    mean = MeanModel(variant, H1=H1 if variant != "col" else None, H2=H2 if variant != "row" else None)
    model = GolfModel(np.linspace(0, 1, 4), np.linspace(0, 1, 5), d, mean=mean)
    state = ModelState(1.5, rng.uniform(1, 3, d), rng.uniform(0.2, 1, d), 0.3, rng.standard_normal((4, 5)) + 0.5)
    return model, state


def _max_z(draws, mean, cov):
    draws = draws.reshape(draws.shape[0], -1)
    n = draws.shape[0]
    var = np.diag(cov)
    z_mean = np.abs(draws.mean(axis=0) - mean.ravel()) / np.sqrt(var / n)
    z_var = np.abs(draws.var(axis=0) - var) / (var * np.sqrt(2 / n))
    return max(z_mean.max(), z_var.max())


@pytest.mark.slow
def test_c5_mean_samplers(report):
    n = 20_000
    worst = {}
    for variant in ("row", "col", "mixed"):
        for d in (1, 2):
            model, state = _mean_instance(variant, d)
            L = model.loadings(state.beta0)
            kb = model.filters(state.beta, state.eta)
            rng = np.random.default_rng(7 * d + len(variant))
            A = L.matrix()
            if variant == "row":
                draws = np.array([sample_B1(model, state, rng, L, kb) for _ in range(n)])
                mean, cov = dense_B1_posterior(model, state, A)
            elif variant == "col":
                draws = np.array([sample_B2(model, state, rng, L, kb) for _ in range(n)])
                mean, cov = dense_B2_posterior(model, state, A)
            else:
                # only the mean matrix is identified under the mixed model
                draws = np.array([model.mean.assemble(*sample_mean(model, state, rng, L, kb), (4, 5))
                                  for _ in range(n)])
                mean, cov = dense_mixed_mean_posterior(model, state, A)
            worst[f"{variant} d={d}"] = _max_z(draws, mean, cov)
    ok = max(worst.values()) < 4.0
    report(5, ok, "max |z| of means and variances over 2e4 draws: "
                  + ", ".join(f"{k} {v:.2f}" for k, v in worst.items()) + " (limit 4)")
    assert ok


# 6: linear cost in the number of columns


def _fit_seconds(n2, reps=2):
    rng = np.random.default_rng(n2)
    s, x = np.linspace(0, 1, 100), np.linspace(0, 1, n2)
    Y = np.sin(4 * s)[:, None] * np.cos(7 * x)[None, :] + 0.1 * rng.standard_normal((100, n2))
    data = LatticeData(Y, np.ones_like(Y, dtype=bool), s, x)
    best = np.inf
    for r in range(reps):
        t = time.perf_counter()
        mcmc_run(McmcConfig(iterations=100, d=20, seed=r), data)
        best = min(best, time.perf_counter() - t)
    return best


@pytest.mark.slow
def test_c6_scaling(report):
    t1, t2 = _fit_seconds(2000), _fit_seconds(4000)
    ratio = t2 / t1
    ok = 1.6 <= ratio <= 2.6
    report(6, ok, f"100x2000 {t1:.1f}s, 100x4000 {t2:.1f}s (d=20, T=100, best of 2): ratio {ratio:.2f} in [1.6, 2.6]")
    assert ok


# 7: number of factors on the 100 x 100 nonseparable example


def _disk_factors(seed=1):
    return simulate(SimSpec(n1=100, n2=100, gamma_s=1 / 3, gamma_x="inverse_index", d_true=30,
                            factor_var=1.0, noise_sd=0.1, pattern="disk", seed=seed))


@pytest.fixture(scope="module")
def disk_rmse_by_d():
    sim = _disk_factors()
    held = ~sim.data.mask
    out = {}
    for d in (5, 20, 30, 40):
        p = predict(mcmc_run(McmcConfig(iterations=5000, d=d, seed=1), sim.data))
        out[d] = compute_metrics(p.mean, p.lo, p.hi, sim.truth, held).rmse
    return out


@pytest.mark.slow
def test_c7_more_factors_than_truth_cost_little(disk_rmse_by_d, report):
    r = disk_rmse_by_d
    ref = r[30]
    spread = (max(r[30], r[40]) - min(r[30], r[40])) / min(r[30], r[40])
    worse5 = r[5] / ref - 1
    ok = spread < 0.10 and worse5 >= 0.25
    report("7a", ok, f"RMSE d=5 {r[5]:.3f}, d=20 {r[20]:.3f}, d=30 {r[30]:.3f}, d=40 {r[40]:.3f}; "
                     f"d=30 vs d=40 differ {spread:.1%} < 10%, d=5 is {worse5:.0%} worse (>= 25%)")
    assert ok


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="d=20 omits a third of the signal; see test_c7_exact_posterior_d20")
def test_c7_d20_within_ten_percent(disk_rmse_by_d, report):
    r = disk_rmse_by_d
    trio = [r[20], r[30], r[40]]
    spread = (max(trio) - min(trio)) / min(trio)
    worse5 = r[5] / min(trio) - 1
    ok = spread < 0.10 and worse5 >= 0.25
    report(7, ok, f"RMSE d=20,30,40 differ {spread:.1%} (limit 10%); d=5 is {worse5:.0%} worse (>= 25%)")
    assert ok


def _exact_prediction(sim, d, sigma2):
    # conditional mean of the held-out cells under the generating kernels, truncated to d factors
    data = sim.data
    o, u = data.mask.ravel(), ~data.mask.ravel()
    A = GolfModel(data.coords_s, data.coords_x, d).loadings(np.array([3.0])).matrix()
    Ks = np.stack([corr_matrix(KernelSpec("matern52", 1 / (l + 1)), data.coords_x) for l in range(d)])
    C = np.einsum("il,kl,ljm->ijkm", A, A, Ks, optimize=True).reshape(data.values.size, -1)
    C[np.diag_indices_from(C)] += sigma2
    Coo, Cuo = C[np.ix_(o, o)], C[np.ix_(u, o)]
    del C
    mu = Cuo @ scipy.linalg.cho_solve(scipy.linalg.cho_factor(Coo, overwrite_a=True), data.values.ravel()[o])
    return np.sqrt(np.mean((mu - sim.truth.ravel()[u]) ** 2))


@pytest.mark.slow
def test_c7_exact_posterior_d20(report):
    # dense conditional means with every parameter at its generating value;
    # d=20 absorbs the ten dropped unit-variance factors into noise of variance 0.1
    sim = _disk_factors()
    r30 = _exact_prediction(sim, 30, 0.01)
    r20 = _exact_prediction(sim, 20, 0.1)
    zero = np.sqrt(np.mean(sim.truth[~sim.data.mask] ** 2))
    report("7b", r20 > 1.25 * r30, f"dense conditional mean at true parameters: RMSE d=30 {r30:.3f}, "
                                   f"d=20 {r20:.3f}, zero predictor {zero:.3f}")
    assert r20 > 1.25 * r30


# 8: capacity of the command line tool


@pytest.mark.slow
def test_c8_capacity(tmp_path, report):
    (tmp_path / "sim.cfg").write_text("sim_n1 = 300\nsim_n2 = 500\nsim_missing_fraction = 0.3\nseed = 8\n")
    (tmp_path / "fit.cfg").write_text("data = sim/data.csv\ncoords_s = sim/coords_s.csv\n"
                                      "coords_x = sim/coords_x.csv\niterations = 50\nseed = 8\n")
    golf = [sys.executable, "-m", "golf.cli"]
    env = dict(os.environ)
    subprocess.run(golf + ["simulate", "--config", "sim.cfg", "--out", "sim"], cwd=tmp_path, check=True, env=env)
    t = time.perf_counter()
    for cmd in (["fit", "--config", "fit.cfg", "--out", "chain", "--quiet"],
                ["predict", "--config", "fit.cfg", "--chain", "chain"]):
        done = subprocess.run(golf + cmd, cwd=tmp_path, env=env, capture_output=True, text=True)
        assert done.returncode == 0, done.stderr
    elapsed = time.perf_counter() - t
    ok = elapsed < 600 and (tmp_path / "chain" / "pred_mean.csv").exists()
    report(8, ok, f"300x500 lattice, 30% missing, T=50: fit and predict in {elapsed:.0f}s (< 600s)")
    assert ok
