"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines.
"""

import time
from itertools import permutations

import numpy as np
import pytest

from fplab import asympt, fpsolve, markov, ougauss, thermo
from fplab.fpsolve import init_density, make_grid, solve, stationary_density
from fplab.model import from_catalog, with_alpha

from oracles import (
    mc_fourth_moment,
    quad_fourth_moment_1d,
    quad_fourth_moment_2d,
    quad_rates_1d,
)


def _gate(number, name, checks):
    ok = all(passed for _, passed in checks)
    print(f"\nACCEPTANCE {number} [{name}]: {'PASS' if ok else 'FAIL'}")
    for desc, passed in checks:
        if not passed:
            print(f"  failed: {desc}")
    assert ok, f"acceptance criterion {number} failed"


def _balance_tol(r):
    return max(1e-3, 1e-2 * (abs(r.ep) + abs(r.qex)))


@pytest.fixture(scope="module")
def ou_run():
    spec = from_catalog("ou1d", alpha=10.0).spec
    grid = make_grid((-3, 3), 600)
    f0 = init_density(grid, "gaussian", mean=[1.0], cov=[[0.05]])
    times = np.round(np.arange(0.0, 1.5 + 1e-9, 0.01), 10)
    started = time.perf_counter()
    snaps = solve(spec, f0, 1.5, times, dt=5e-4)
    wall = time.perf_counter() - started
    stat = stationary_density(spec, grid)
    records = thermo.instrument(spec, snaps, stat)
    return spec, snaps, stat, records, wall, 5e-4


@pytest.fixture(scope="module")
def dw_run():
    spec = from_catalog("double_well", alpha=20.0).spec
    grid = make_grid((-3, 3), 600)
    f0 = init_density(grid, "gaussian", mean=[0.0], cov=[[0.02]])
    times = np.round(np.arange(0.0, 2.0 + 1e-9, 0.01), 10)
    started = time.perf_counter()
    snaps = solve(spec, f0, 2.0, times, dt=1e-3)
    wall = time.perf_counter() - started
    stat = stationary_density(spec, grid)
    records = thermo.instrument(spec, snaps, stat)
    return spec, snaps, stat, records, wall, 1e-3


def _interior_after_burn_in(records, dt):
    return [r for r in records if not r.endpoint and r.t >= 10.0 * dt - 1e-12]


def test_criterion_1_entropy_balance(ou_run, dw_run):
    checks = []
    for label, run in (("ou1d", ou_run), ("double_well", dw_run)):
        _, _, _, records, wall, dt = run
        rows = _interior_after_burn_in(records, dt)
        worst = max(r.res_entropy - _balance_tol(r) for r in rows)
        checks.append((f"{label}: entropy residual within tolerance", worst <= 0.0))
        checks.append((f"{label}: runtime {wall:.1f}s < 30s", wall < 30.0))
    _gate(1, "mesoscopic entropy balance", checks)


def test_criterion_2_free_energy_balance(ou_run, dw_run):
    checks = []
    for label, run in (("ou1d", ou_run), ("double_well", dw_run)):
        _, _, _, records, _, dt = run
        rows = _interior_after_burn_in(records, dt)
        worst = max(r.res_freeenergy - _balance_tol(r) for r in rows)
        checks.append((f"{label}: free-energy residual within tolerance", worst <= 0.0))
        lyap = max(r.dFdt_fd for r in records)
        checks.append((f"{label}: dF/dt <= 1e-6 (max {lyap:.2e})", lyap <= 1e-6))
    _gate(2, "free-energy balance and Lyapunov property", checks)


def test_criterion_3_ou_oracle_equivalence(ou_run):
    spec, snaps, stat, records, _, _ = ou_run
    ou = ougauss.from_system(spec)
    init = ougauss.GaussianState(np.array([1.0]), np.array([[0.05]]))
    probe_idx = np.linspace(5, 145, 20).astype(int)
    checks = []
    worst = {"S": 0.0, "ep": 0.0, "qex": 0.0, "F": 0.0, "qhk": 0.0}
    for i in probe_idx:
        r = records[i]
        state = ougauss.propagate(ou, init, r.t)
        refs = {
            "S": ougauss.gaussian_entropy(state),
            "ep": ougauss.ou_entropy_production(ou, state),
            "qex": ougauss.ou_heat_exchange(ou, state),
        }
        refs["F"], refs["qhk"] = ougauss.ou_free_energy_and_qhk(ou, state)
        got = {"S": r.S, "ep": r.ep, "qex": r.qex, "F": r.F, "qhk": r.qhk}
        for key, ref in refs.items():
            tol = max(1e-3, 0.01 * abs(ref))
            worst[key] = max(worst[key], abs(got[key] - ref) - tol)
    for key, margin in worst.items():
        checks.append((f"{key}: grid value within 1%/1e-3 of closed form", margin <= 0.0))
    # the closed forms themselves agree with adaptive quadrature
    for t in (0.2, 0.6, 1.2):
        state = ougauss.propagate(ou, init, t)
        mu, c = state.mean[0], state.cov[0, 0]
        ep_q, qex_q, qhk_q = quad_rates_1d(-1.0, 1.0, 10.0, mu, c, css=0.1)
        checks.append(
            (f"quadrature agreement at t={t}",
             abs(ougauss.ou_entropy_production(ou, state) - ep_q) <= 1e-8
             and abs(ougauss.ou_heat_exchange(ou, state) - qex_q) <= 1e-8
             and abs(ougauss.ou_free_energy_and_qhk(ou, state)[1] - qhk_q) <= 1e-8)
        )
    _gate(3, "exact-engine equivalence", checks)


def test_criterion_4_extensivity_and_cancellation():
    spec = from_catalog("ou1d", alpha=10.0).spec
    started = time.perf_counter()
    res = asympt.alpha_sweep(spec, [20, 40, 80, 160, 320], 0.5, [1.0])
    wall = time.perf_counter() - started
    predicted = np.exp(-1.0)
    checks = [
        ("predicted slope is b D^-1 b at the flow point",
         abs(res.predicted_slope - predicted) <= 1e-12),
        (f"ep slope within 2% (got {res.ep_slope:.6f})",
         abs(res.ep_slope - predicted) <= 0.02 * predicted),
        (f"-qex slope within 2% (got {-res.qex_slope:.6f})",
         abs(-res.qex_slope - predicted) <= 0.02 * predicted),
        (f"cancellation |slope(ep+qex)| = {abs(res.sum_slope):.2e} <= 1e-3",
         abs(res.sum_slope) <= 1e-3),
        (f"runtime {wall:.2f}s < 10s", wall < 10.0),
    ]
    _gate(4, "extensive coefficients and their cancellation", checks)


def test_criterion_5_macroscopic_balance():
    checks = []
    # closed form: the two dS/dt expressions agree identically
    ou = ougauss.OUSpec(B=np.array([[-1.0]]), D=np.array([[1.0]]), alpha=10.0)
    worst = 0.0
    for c in (0.02, 0.05, 0.1, 0.4):
        rate = ougauss.gaussian_entropy_rate(
            ou, ougauss.GaussianState(np.zeros(1), np.array([[c]]))
        )
        worst = max(worst, abs(rate.trace_form - rate.divergence_form))
    checks.append((f"closed-form identity to 1e-8 (worst {worst:.2e})", worst <= 1e-8))

    alpha = 80.0
    spec = with_alpha(from_catalog("double_well", alpha=20.0).spec, alpha)
    grid = make_grid((-2, 2), 800)
    f0 = init_density(grid, "gaussian", mean=[0.5], cov=[[0.005]])
    times = np.round(np.arange(0.0, 0.6 + 1e-9, 0.01), 10)
    snaps = solve(spec, f0, 0.6, times, dt=1e-3)
    stat = stationary_density(spec, grid)
    records = thermo.instrument(spec, snaps, stat)
    flow = asympt.ode_flow(spec, [0.5], times)
    tol = max(0.05, 10.0 / alpha)
    worst_gap = 0.0
    for i, r in enumerate(records):
        if r.endpoint or not (0.1 <= r.t <= 0.5):
            continue
        est = asympt.estimate_hessian_from_density(snaps[i], alpha)
        mb = asympt.macroscopic_entropy_balance(spec, flow[i], est)
        worst_gap = max(worst_gap, abs(r.dSdt_fd - mb.total))
    checks.append(
        (f"double_well alpha=80: |dS/dt - (div b + D:hess)| = {worst_gap:.3f} <= {tol}",
         worst_gap <= tol)
    )
    _gate(5, "O(1) entropy balance", checks)


def test_criterion_6_stationary_landscape():
    rng = np.random.default_rng(61)
    checks = []
    for name in ("double_well", "var_diff_1d", "ou1d", "rot_ou"):
        spec = from_catalog(name, alpha=8.0).spec
        provider = asympt.phi_ss_provider(spec)
        pts = rng.uniform(-1.5, 1.5, size=(100, spec.dim))
        worst_o = 0.0
        worst_p = 0.0
        for c in asympt.landscape_check(spec, provider, pts):
            worst_o = max(worst_o, abs(c.ortho))
            worst_p = max(worst_p, abs(c.norms[0] + c.norms[1] - c.norms[2]))
        checks.append((f"{name}: |ortho| <= 1e-10 (got {worst_o:.1e})", worst_o <= 1e-10))
        checks.append((f"{name}: three-norm equality to 1e-10", worst_p <= 1e-10))
    spec40 = from_catalog("rot_ou", alpha=40.0).spec
    grid = make_grid(((-0.75, 0.75), (-0.75, 0.75)), (150, 150))
    stat = stationary_density(spec40, grid)
    provider = asympt.phi_ss_provider(spec40, "grid", stat)
    pts = grid.points().reshape(-1, 2)
    vals = stat.density.values.ravel()
    bulk = pts[vals >= 1e-2 * vals.max()]
    ok = True
    for c in asympt.landscape_check(spec40, provider, bulk):
        if np.linalg.norm(c.point) < 0.05:
            continue
        if abs(c.ortho) > 0.02 * np.sqrt(c.norms[2]) * np.linalg.norm(c.phi_ss_grad):
            ok = False
    checks.append(("rot_ou alpha=40 numeric landscape: |ortho| <= 2% in the bulk", ok))
    _gate(6, "stationary landscape orthogonality and Pythagoras", checks)


def test_criterion_7_markov_decomposition():
    rng = np.random.default_rng(77)
    worst = 0.0
    folding_ok = True
    for _ in range(1000):
        n = int(rng.integers(2, 7))
        chain = markov.MarkovChain(rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n), size=n))
        worst = max(worst, markov.decomposition_check(chain))
        folding_ok = folding_ok and markov.folding_entropy(chain) >= 0.0
    checks = [
        (f"1000 random chains: residual {worst:.1e} <= 1e-12", worst <= 1e-12),
        ("folding entropy nonnegative on all chains", folding_ok),
    ]
    ident = markov.MarkovChain(np.array([0.3, 0.7]), np.eye(2))
    checks.append(
        ("identity chain: generated = change = folding = 0",
         markov.mean_entropy_generated(ident) == 0.0
         and markov.mean_entropy_change(ident) == 0.0
         and markov.folding_entropy(ident) == 0.0)
    )
    coin = markov.MarkovChain(np.array([1.0, 0.0]), np.array([[0.5, 0.5], [0.5, 0.5]]))
    ln2 = np.log(2.0)
    checks.append(
        ("delta-to-fair-coin chain: generated = change = ln 2, folding = 0",
         abs(markov.mean_entropy_generated(coin) - ln2) <= 1e-15
         and abs(markov.mean_entropy_change(coin) - ln2) <= 1e-15
         and markov.folding_entropy(coin) == 0.0)
    )
    merging = markov.MarkovChain(np.array([0.5, 0.5]), np.array([[1.0, 0.0], [1.0, 0.0]]))
    checks.append(
        ("merging chain: generated = 0, change = -ln 2, folding = ln 2",
         markov.mean_entropy_generated(merging) == 0.0
         and abs(markov.mean_entropy_change(merging) + ln2) <= 1e-15
         and abs(markov.folding_entropy(merging) - ln2) <= 1e-15)
    )
    _gate(7, "Markov entropy decomposition", checks)


def test_criterion_8_fourth_moment_tensor():
    checks = []
    theta1 = asympt.gaussian_fourth_moment([[1.0]]).theta[0, 0, 0, 0]
    checks.append(
        ("1d pair-product value matches quadrature to 1e-8",
         abs(theta1 - quad_fourth_moment_1d(1.0)) <= 1e-8)
    )
    sigma = np.array([[0.8, 0.3], [0.3, 1.4]])
    theta = asympt.gaussian_fourth_moment(sigma).theta
    ok = True
    for idx in ((0, 0, 0, 0), (0, 0, 1, 1), (0, 1, 1, 1)):
        ok = ok and abs(theta[idx] - quad_fourth_moment_2d(sigma, idx)) <= 1e-8
    checks.append(("2d values match quadrature to 1e-8", ok))
    sym_ok = all(
        len({theta[p] for p in permutations(idx)}) == 1
        for idx in ((0, 0, 0, 1), (0, 0, 1, 1), (0, 1, 1, 1))
    )
    checks.append(("full permutation symmetry", sym_ok))
    mc, se = mc_fourth_moment(sigma, 10**6, seed=88)
    checks.append(
        ("10^6-sample Monte Carlo within 4 SE elementwise",
         bool(np.all(np.abs(theta - mc) <= 4.0 * se)))
    )
    checks.append(
        ("spreading-Gaussian rate D/var = 0.5 at D=1, var=2",
         asympt.brownian_entropy_rate(1.0, 2.0) == 0.5)
    )
    _gate(8, "Gaussian fourth moments", checks)


def test_criterion_9_ensemble_cross_check():
    spec = from_catalog("ou1d", alpha=10.0).spec
    probes = [0.2, 0.4, 0.6, 0.8, 1.0]
    res = asympt.simulate_ensemble(spec, [1.0], 100000, 1e-3, 1.0, seed=4242,
                                   output_times=probes)
    ou = ougauss.from_system(spec)
    checks = []
    ok_mean = True
    ok_cov = True
    for k, t in enumerate(res.times):
        mean_ref = np.exp(-t)
        cov_ref = ougauss.wkb_covariance(ou, t)[0, 0] / spec.alpha
        se_mean = np.sqrt(res.covs[k][0, 0] / res.n_paths)
        se_cov = res.covs[k][0, 0] * np.sqrt(2.0 / res.n_paths)
        ok_mean = ok_mean and abs(res.means[k][0] - mean_ref) <= 4.0 * se_mean
        ok_cov = ok_cov and abs(res.covs[k][0, 0] - cov_ref) <= 4.0 * se_cov
    checks.append(("sample means within 4 SE of the flow at 5 probe times", ok_mean))
    checks.append(("sample covariances within 4 SE of Sigma/alpha", ok_cov))
    rerun = asympt.simulate_ensemble(spec, [1.0], 100000, 1e-3, 1.0, seed=4242,
                                     output_times=probes)
    checks.append(
        ("fixed seed reproduces identical moments",
         bool(np.array_equal(res.means, rerun.means)
              and np.array_equal(res.covs, rerun.covs)))
    )
    _gate(9, "stochastic-path cross check", checks)
