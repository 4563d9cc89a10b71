"""Acceptance criteria 1-12, one PASS/FAIL line each.

Run with ``pytest -s tests/test_acceptance.py`` or ``python3 tests/test_acceptance.py``;
the lines are also repeated in the terminal summary of a normal pytest run.
"""
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest

from sgn_lab.bounds import bound_report, constant_C1, constant_C2, constant_C3, fl_comparison, problem_constants
from sgn_lab.datamodel import GroundTruth, NodeDataSpec, NoiseModel, Problem
from sgn_lab.engines import EngineConfig, run_trial
from sgn_lab.gls_oracle import gls_solve
from sgn_lab.graph import algebraic_connectivity, complete, generalized_laplacian, laplacian
from sgn_lab.metrics import lemma1_identity
from sgn_lab.runner import RunConfig, run_fid
from sgn_lab.scenarios import MrfFieldSpec, ScalingSpec, mrf_build, scaling_build
from sgn_lab.streams import RenewalClock

RESULTS = {}
WORKERS = min(4, os.cpu_count() or 1)


def report(n, ok, detail, elapsed=None):
    extra = f" [{elapsed:.1f}s]" if elapsed is not None else ""
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}{extra}"
    RESULTS[n] = line
    print(line)
    return ok


def pmap(fn, args):
    if WORKERS == 1:
        return [fn(a) for a in args]
    with ProcessPoolExecutor(max_workers=WORKERS) as ex:
        return list(ex.map(fn, args))


# shared instances


def heterogeneous_instance():
    """Gaussian designs, unequal rates and common noise; five nodes, p = 3, m = 4."""
    rng = np.random.default_rng(3)
    nodes = [NodeDataSpec(i, rng.normal(size=(4, 3)), 0.5 + rng.random(), 0.3 + 0.5 * rng.random(4),
                          mu=1 + rng.random()) for i in range(5)]
    return Problem(nodes, GroundTruth([1.0, -2.0, 0.5])), complete(5)


def anchored_instance(alpha_hat=None):
    """Perturbed identity-plus-average designs with equal unit rates."""
    rng = np.random.default_rng(3)
    base = np.vstack([np.eye(3), np.ones((1, 3)) / 3])
    nodes = [NodeDataSpec(i, base + 0.3 * rng.normal(size=(4, 3)), 0.5 + rng.random(),
                          0.3 + 0.5 * rng.random(4), mu=1.0, alpha_hat=alpha_hat) for i in range(5)]
    return Problem(nodes, GroundTruth([1.0, -2.0, 0.5])), complete(5)


def _series(args):
    kind, problem, top, cfg, seed, keep = args
    return run_trial(kind, problem, top, cfg, seed, keep_models=keep)


def mean_metric(kind, problem, top, cfg, seeds, metric):
    runs = pmap(_series, [(kind, problem, top, cfg, s, False) for s in seeds])
    return np.mean([r.values[metric] for r in runs], axis=0)


# criteria


def test_c01_lemma1_identity():
    t0 = time.time()
    problem, top = heterogeneous_instance()
    cfg = EngineConfig(gamma=1e-2, delta=1.0, beta=1.0, snapshot_times=np.linspace(5.0, 50.0, 10))
    seeds = np.random.SeedSequence(101).spawn(200)
    runs = pmap(_series, [("sgn", problem, top, cfg, s, True) for s in seeds])
    worst = 0.0
    for r in runs:
        for w in r.models:
            lhs, rhs = lemma1_identity(w, problem.alpha, problem.w_star)
            worst = max(worst, abs(lhs - rhs) / (1e-10 * (1 + lhs)))
    elapsed = time.time() - t0
    ok = worst <= 1.0 and elapsed < 10
    report(1, ok, f"max |lhs-rhs| / (1e-10 (1+lhs)) = {worst:.3g}", elapsed)
    assert ok


def test_c02_oracle_equivalence():
    t0 = time.time()
    X = np.array([[1.0, 0.2, 0.0], [0.0, 1.0, 0.3], [0.1, 0.0, 1.0], [0.5, 0.5, 0.5]])
    w_star = np.array([0.7, -1.3, 2.0])
    problem = Problem([NodeDataSpec(0, X, 1.0, np.zeros(4), 1.0)], GroundTruth(w_star), NoiseModel("none"))
    eta = np.linalg.eigvalsh(X.T @ X).max()
    gamma = 0.5 / eta
    cfg = EngineConfig(gamma=gamma, delta=0.0, beta=0.0, snapshot_times=[2000.0])
    run = run_trial("sgn", problem, complete(1), cfg, np.random.SeedSequence(2), keep_models=True)
    w = run.models[-1, 0]
    sol = gls_solve(X, np.ones(4), X @ w_star)
    err_truth = np.linalg.norm(w - w_star)
    err_gls = np.linalg.norm(w - sol.w_hat)
    elapsed = time.time() - t0
    ok = gamma * eta < 1 and err_truth <= 1e-6 and err_gls <= 1e-6 and elapsed < 1
    report(2, ok, f"||w-w*|| = {err_truth:.2e}, ||w-gls|| = {err_gls:.2e}", elapsed)
    assert ok


def _bound_setup():
    problem, top = heterogeneous_instance()
    gamma = 1e-4
    rep = bound_report(problem, top, gamma, 1.0, 1.0, w0=problem.w_star)
    k = rep.constants
    horizon = 1.5 * np.log(20) / (2 * k.mu * k.kappa) / gamma
    times = np.linspace(horizon / 10, horizon, 10)
    cfg = EngineConfig(gamma=gamma, delta=1.0, beta=1.0, snapshot_times=times, w0=problem.w_star)
    return problem, top, rep, cfg, gamma * times


def test_c03_dispersion_and_consistency_bounds():
    t0 = time.time()
    problem, top, rep, cfg, s = _bound_setup()
    seeds = np.random.SeedSequence(1).spawn(200)
    runs = pmap(_series, [("sde", problem, top, cfg, ss, False) for ss in seeds])
    V = np.mean([r.values["Vbar"] for r in runs], axis=0)
    U = np.mean([r.values["U"] for r in runs], axis=0)
    rv, ru = V / rep.thm1(s), U / rep.thm2(s)
    decayed = np.exp(-2 * rep.constants.mu * rep.constants.kappa * s[-1])
    elapsed = time.time() - t0
    ok = decayed < 0.05 and np.all(rv <= 1.1) and np.all(ru <= 1.1) and elapsed < 120
    report(3, ok, f"max Vbar/thm1 = {rv.max():.3f}, max U/thm2 = {ru.max():.3f}, "
                  f"exp(-2 mu kappa s) = {decayed:.3f}", elapsed)
    assert ok


def test_c04_fl_bound_sandwich():
    t0 = time.time()
    problem, _, rep, cfg, s = _bound_setup()
    seeds = np.random.SeedSequence(2).spawn(200)
    F = mean_metric("sde-fl", problem, None, cfg, seeds, "F")
    past = s >= s[-1] / 2
    lo = F[past] / rep.thm3_lower(s[past])
    hi = F[past] / rep.thm3_upper(s[past])
    elapsed = time.time() - t0
    ok = np.all(lo >= 0.9) and np.all(hi <= 1.1) and elapsed < 120
    report(4, ok, f"F/lower in [{lo.min():.3f}, {lo.max():.3f}], max F/upper = {hi.max():.3f}", elapsed)
    assert ok


def test_c05_sgn_beats_fl_past_threshold():
    t0 = time.time()
    N = 5
    problem, top = anchored_instance(alpha_hat=1.0 / N)
    gamma, beta = 1e-2, 1.0
    k = problem_constants(problem, gamma, top)
    C1, _ = constant_C1(problem, gamma)
    cmp = fl_comparison(k, constant_C2(problem, gamma), constant_C3(problem, gamma), 0.0, beta,
                        "uniform", problem, C1)
    delta = 2 * cmp.delta_bar
    horizon = 6 / (gamma * k.kappa)
    cfg = EngineConfig(gamma=gamma, delta=delta, beta=beta,
                       snapshot_times=np.linspace(0.9 * horizon, horizon, 10))
    seeds = np.random.SeedSequence(9).spawn(200)
    U = mean_metric("sde", problem, top, cfg, seeds, "U").mean()
    F = mean_metric("sde-fl", problem, None, cfg, seeds, "F").mean()
    elapsed = time.time() - t0
    ok = N > cmp.N_threshold and U < F and elapsed < 120
    report(5, ok, f"N = {N} > {cmp.N_threshold:.3f}, delta = {delta:.3g}, tail U = {U:.4g} < F = {F:.4g}",
           elapsed)
    assert ok


W_SCALING = np.array([3.0, -2.0, 5.0, 1.0, -4.0])


def _scaling_phi(args):
    N, delta, fraction, ss = args
    g1, g2 = ss.spawn(2)
    problem, top = scaling_build(ScalingSpec(edge_fraction=fraction), N, np.random.default_rng(g1),
                                 w_star=W_SCALING)
    cfg = EngineConfig(gamma=1e-8, delta=delta, beta=1.0, snapshot_times=[1000.0])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return run_trial("sgn", problem, top, cfg, g2).final("phi")


def scaled_phi(N, fraction, trials, ref_N):
    cells = {}
    for key, n, delta in (("ref", ref_N, 0.0), ("run", N, 100.0)):
        seeds = np.random.SeedSequence([0, n]).spawn(trials)
        cells[key] = np.mean(pmap(_scaling_phi, [(n, delta, fraction, s) for s in seeds]))
    return cells["run"] / cells["ref"]


def test_c06_size_sweep():
    t0 = time.time()
    phis = {N: scaled_phi(N, 0.6, 5, 5) for N in (5, 50, 150)}
    elapsed = time.time() - t0
    ok = phis[150] <= phis[5] * (1 - 0.08) and elapsed < 300
    report(6, ok, "Phi_s " + ", ".join(f"N={k}: {v:.4f}" for k, v in phis.items()), elapsed)
    assert ok


def test_c07_connectivity_sweep():
    t0 = time.time()
    phis = {f: scaled_phi(100, f, 10, 100) for f in (0.0, 0.5, 1.0)}
    v = list(phis.values())
    elapsed = time.time() - t0
    ok = v[0] >= v[1] >= v[2] and v[2] <= 0.9 * v[0] and elapsed < 300
    report(7, ok, "Phi_s " + ", ".join(f"edges={k}: {x:.4f}" for k, x in phis.items()), elapsed)
    assert ok


def _mrf_phi(args):
    max_var, ss = args
    g1, g2 = ss.spawn(2)
    problem, top, _ = mrf_build(MrfFieldSpec(max_var=max_var), np.random.default_rng(g1))
    horizon = 4000 / problem.mus.sum()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sgn = run_trial("sgn", problem, top, EngineConfig(gamma=4e-4, delta=100.0, beta=problem.mus.mean(),
                                                          snapshot_times=[horizon]), g2).final("phi")
        fl = run_trial("fl", problem, None, EngineConfig(gamma=1e-5, snapshot_times=[horizon]), g2).final("phi")
    return sgn, fl


def test_c08_mrf_robustness():
    t0 = time.time()
    res = {}
    for mx in (1.0, 40.0, 80.0):
        vals = np.array(pmap(_mrf_phi, [(mx, s) for s in np.random.SeedSequence(11).spawn(10)]))
        res[mx] = vals.mean(axis=0)
    fl_ratio = res[80.0][1] / res[1.0][1]
    sgn_change = abs(res[80.0][0] / res[1.0][0] - 1)
    elapsed = time.time() - t0
    ok = fl_ratio >= 2 and sgn_change <= 0.25 and elapsed < 600
    report(8, ok, f"FL phi ratio (80 vs 1) = {fl_ratio:.3f}, SGN change = {sgn_change:.1%}; "
                  + ", ".join(f"max={k:g}: sgn {v[0]:.3f} fl {v[1]:.3f}" for k, v in res.items()), elapsed)
    assert ok


def test_c09_fid_table():
    t0 = time.time()
    cfg = RunConfig.from_dict({"scenario": "fid", "n_nodes": 15, "trials": 20, "seed": 3,
                               "engine": {"gamma": 1e-3, "delta": 100, "beta": 1.0, "horizon": 3000,
                                          "snapshots": 6}})
    _, rep = run_fid(cfg, workers=WORKERS)
    gap = rep["sgn_residual_error"] / rep["gls_residual_error"] - 1
    elapsed = time.time() - t0
    ok = abs(gap) <= 0.15 and rep["in_ci_count"] >= 3
    source = "surrogate" if rep["surrogate"] else "dataset"
    report(9, ok, f"({source}) residual SGN {rep['sgn_residual_error']:.3f} vs GLS "
                  f"{rep['gls_residual_error']:.3f} ({gap:+.1%}), {rep['in_ci_count']}/8 inside the 97% CI",
           elapsed)
    assert ok


def test_c10_discrete_vs_sde():
    t0 = time.time()
    problem, top = anchored_instance()
    gamma = 1e-4
    k = problem_constants(problem, gamma, top, kappa_convention="strict")
    horizon = 1.5 / (gamma * k.kappa)
    cfg = EngineConfig(gamma=gamma, delta=1.0, beta=1.0, snapshot_times=np.linspace(horizon / 8, horizon, 8))
    seeds = np.random.SeedSequence(5).spawn(200)
    Ud = mean_metric("sgn", problem, top, cfg, seeds, "U")
    Us = mean_metric("sde", problem, top, cfg, seeds, "U")
    rel = np.abs(Ud / Us - 1)
    elapsed = time.time() - t0
    ok = np.all(rel < 0.10) and elapsed < 120
    report(10, ok, f"max relative difference in mean U = {rel.max():.1%}", elapsed)
    assert ok


def test_c11_spectral_exactness():
    errs = [abs(algebraic_connectivity(laplacian(complete(n))) - n) for n in (3, 10, 50)]
    two = algebraic_connectivity(generalized_laplacian(complete(2), [1.0, 2.0]))
    ok = max(errs) <= 1e-8 and abs(two - 4) <= 1e-10
    report(11, ok, f"max |lambda2(K_N) - N| = {max(errs):.1e}, two-node lambda2_hat = {two:.12g}")
    assert ok


def test_c12_renewal_rates():
    t0 = time.time()
    rng = np.random.default_rng(np.random.SeedSequence(12))
    horizon = 1e4
    worst = 0.0
    for mu in (0.1, 0.5, 1.0, 5.0, 20.0):
        count = RenewalClock(mu, rng).arrivals_until(horizon).size
        worst = max(worst, abs(count / horizon - mu) / (4 * np.sqrt(mu / horizon)))
    elapsed = time.time() - t0
    ok = worst <= 1.0 and elapsed < 5
    report(12, ok, f"max |rate - mu| / (4 sqrt(mu/T)) = {worst:.3f}", elapsed)
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
