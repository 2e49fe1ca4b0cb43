"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest -v tests/test_acceptance.py`` or directly with
``python3 tests/test_acceptance.py`` (prints the lines, exits nonzero on any
failure). Tolerances are pinned as constants below.
"""

from __future__ import annotations

import os
import sys
import time

import numpy as np
import pytest

from vqmc import hamiltonian as ham
from vqmc.estimator import energy_and_variance, gradient_estimate
from vqmc.hamiltonian import all_configs
from vqmc.models import TableWavefunction, made_init, rbm_init
from vqmc.oracle import (
    brute_force_maxcut, chisquare_test, dense_matrix, empirical_distribution,
    enumerate_distribution, exact_energy, ground_state, tv_distance,
)
from vqmc.sampler import McmcConfig, auto_sample, mcmc_sample
from vqmc.trainer import RunConfig, allreduce_mean, stream, train, weak_scaling_benchmark

# criterion 1
C1_MODELS, C1_N, C1_SAMPLES, C1_TV, C1_ALPHA, C1_SECONDS = 5, 8, 100_000, 0.02, 1e-3, 30.0
# criterion 2
C2_MODELS, C2_TOL = 10, 1e-10
# criterion 3
C3_N, C3_H, C3_REL, C3_STEP = 6, 8, 1e-5, 1e-5
# criterion 4
C4_N, C4_VAR, C4_ENERGY = 8, 1e-12, 1e-8
# criterion 5
C5_N, C5_SEEDS, C5_BS, C5_ITERS = 12, 5, 1024, 300
C5_ADAM_REL, C5_SR_REL, C5_MIN_HITS, C5_SECONDS = 0.02, 0.01, 4, 600.0
# criterion 6
C6_N, C6_SEEDS, C6_SR_OPT_MIN, C6_SR_RATIO, C6_ADAM_RATIO = 20, 5, 3, 0.97, 0.95
# criterion 7
C7_N, C7_BURN, C7_SAMPLES, C7_THIN, C7_TV = 6, 10_000, 100_000, 10, 0.05
# criterion 8
C8_WORKERS, C8_ITERS, C8_TOL = 4, 50, 1e-12
# criterion 9
C9_N, C9_WORKERS, C9_MBS, C9_BAND = 1000, (1, 2, 4, 8), 4, (0.75, 1.25)
# criterion 10
C10_N, C10_BS, C10_SPEEDUP, C10_ITERS = 200, 1024, 2.0, 3
# criterion 11
C11_N, C11_SEEDS, C11_BATCHES, C11_MAX_INVERSIONS = 12, 5, (64, 256, 1024), 1


def perturbed_made(n, seed, h=None, scale=1.0):
    m = made_init(n, h, seed)
    rng = np.random.default_rng(10_000 + seed)
    m.set_parameters(m.parameters() + scale * rng.standard_normal(m.num_parameters))
    return m


def relative_error(value, exact):
    return abs(value - exact) / abs(exact)


def test_c01_sampler_exactness(criterion):
    start = time.perf_counter()
    tvs, pvals = [], []
    for seed in range(C1_MODELS):
        m = perturbed_made(C1_N, seed)
        target = enumerate_distribution(m)
        configs = auto_sample(m, C1_SAMPLES, np.random.default_rng(seed)).configs
        freq = empirical_distribution(configs)
        tvs.append(tv_distance(freq, target))
        pvals.append(chisquare_test(freq * C1_SAMPLES, target)[2])
    elapsed = time.perf_counter() - start
    passed = max(tvs) <= C1_TV and min(pvals) >= C1_ALPHA and elapsed <= C1_SECONDS
    criterion(1, passed, "AUTO sampler exactness",
              f"max TV {max(tvs):.4f} (<= {C1_TV}), min chi2 p {min(pvals):.3g} (>= {C1_ALPHA}), "
              f"{elapsed:.1f} s (<= {C1_SECONDS:.0f} s)")
    assert passed


def test_c02_normalization(criterion):
    worst = 0.0
    for seed in range(C2_MODELS):
        n = 2 + seed % 9  # n in 2..10
        m = perturbed_made(n, seed, scale=2.0)
        worst = max(worst, abs(np.exp(m.log_prob(all_configs(n))).sum() - 1.0))
    passed = worst <= C2_TOL
    criterion(2, passed, "MADE normalization", f"max |sum - 1| = {worst:.2e} (<= {C2_TOL:.0e}) over {C2_MODELS} models")
    assert passed


def test_c03_gradient_fidelity(criterion):
    spec = ham.random_tim(C3_N, 0)
    H = dense_matrix(spec)
    m = perturbed_made(C3_N, 0, h=C3_H, scale=0.5)
    X = all_configs(C3_N)
    g = gradient_estimate(spec, m, X, weights=enumerate_distribution(m))
    theta = m.parameters()

    def rayleigh(t):
        c = m.copy()
        c.set_parameters(t)
        return exact_energy(spec, c, H)

    fd = np.empty_like(theta)
    for k in range(len(theta)):
        e = np.zeros_like(theta)
        e[k] = C3_STEP
        fd[k] = (rayleigh(theta + e) - rayleigh(theta - e)) / (2 * C3_STEP)
    rel = np.linalg.norm(g - fd) / np.linalg.norm(fd)
    passed = rel <= C3_REL
    criterion(3, passed, "gradient fidelity", f"relative error {rel:.2e} (<= {C3_REL:.0e}), d = {len(theta)}")
    assert passed


def test_c04_zero_variance(criterion):
    spec = ham.random_tim(C4_N, 0)
    lam, v = ground_state(spec)
    t = TableWavefunction(C4_N, np.abs(v))
    rng = np.random.default_rng(0)
    batches = [all_configs(C4_N)] + [rng.integers(0, 2, (size, C4_N)) for size in (2, 17, 1024)]
    worst_var = worst_err = 0.0
    for batch in batches:
        mean, var = energy_and_variance(spec, t, batch)
        worst_var, worst_err = max(worst_var, var), max(worst_err, abs(mean - lam))
    passed = worst_var <= C4_VAR and worst_err <= C4_ENERGY
    criterion(4, passed, "zero-variance principle",
              f"max V {worst_var:.2e} (<= {C4_VAR:.0e}), max |L - lambda_min| {worst_err:.2e} (<= {C4_ENERGY:.0e})")
    assert passed


def _c5_runs(optimizer, lr, extra=None):
    errors, slowest = [], 0.0
    for seed in range(C5_SEEDS):
        spec = ham.random_tim(C5_N, seed)
        lam, _ = ground_state(spec)
        cfg = RunConfig(problem="tim", n=C5_N, instance_seed=seed, seed=seed, optimizer=optimizer,
                        lr=lr, iterations=C5_ITERS, mbs=C5_BS, **(extra or {}))
        start = time.perf_counter()
        result = train(cfg, spec)
        slowest = max(slowest, time.perf_counter() - start)
        errors.append(relative_error(result.final_energy, lam))
    return errors, slowest


def test_c05_ground_state_convergence(criterion):
    adam, t_adam = _c5_runs("adam", 0.01)
    sr, t_sr = _c5_runs("sgd_sr", 0.1, {"sr_lambda": 1e-3})
    adam_hits = sum(e <= C5_ADAM_REL for e in adam)
    sr_hits = sum(e <= C5_SR_REL for e in sr)
    slowest = max(t_adam, t_sr)
    passed = adam_hits >= C5_MIN_HITS and sr_hits >= C5_MIN_HITS and slowest <= C5_SECONDS
    fmt = lambda es: ", ".join(f"{100 * e:.2f}%" for e in es)
    criterion(5, passed, "ground-state convergence",
              f"ADAM {adam_hits}/5 within 2% [{fmt(adam)}]; SGD+SR {sr_hits}/5 within 1% [{fmt(sr)}]; "
              f"slowest run {slowest:.0f} s")
    assert passed


def _c6_ratios(optimizer, lr):
    ratios = []
    for seed in range(C6_SEEDS):
        adj = ham.random_maxcut_graph(C6_N, seed)
        spec = ham.maxcut_spec(adj)
        best, _ = brute_force_maxcut(adj)
        cfg = RunConfig(problem="maxcut", n=C6_N, instance_seed=seed, seed=seed,
                        optimizer=optimizer, lr=lr, iterations=300, mbs=1024)
        ratios.append(train(cfg, spec).best_cut / best)
    return ratios


def test_c06_maxcut_quality(criterion):
    sr = _c6_ratios("sgd_sr", 0.1)
    adam = _c6_ratios("adam", 0.01)
    sr_opt = sum(r == 1.0 for r in sr)
    passed = sr_opt >= C6_SR_OPT_MIN and min(sr) >= C6_SR_RATIO and min(adam) >= C6_ADAM_RATIO
    fmt = lambda rs: ", ".join(f"{r:.4f}" for r in rs)
    criterion(6, passed, "Max-Cut quality",
              f"SGD+SR optimal on {sr_opt}/5 (>= {C6_SR_OPT_MIN}), ratios [{fmt(sr)}] (>= {C6_SR_RATIO}); "
              f"ADAM ratios [{fmt(adam)}] (>= {C6_ADAM_RATIO})")
    assert passed


def test_c07_mcmc_correctness(criterion):
    r = rbm_init(C7_N, seed=0, scale=1.0)
    cfg = McmcConfig(chains=2, burn_in=C7_BURN, thinning=C7_THIN)
    batch, _ = mcmc_sample(r, C7_SAMPLES, cfg, np.random.default_rng(0))
    tv = tv_distance(empirical_distribution(batch.configs), enumerate_distribution(r))
    passed = tv <= C7_TV
    criterion(7, passed, "MCMC baseline correctness",
              f"TV {tv:.4f} (<= {C7_TV}), acceptance {batch.acceptance_rate:.3f}")
    assert passed


def test_c08_parallel_equals_serial(criterion):
    cfg = RunConfig(problem="tim", n=8, instance_seed=0, seed=7, workers=C8_WORKERS, mbs=64,
                    iterations=C8_ITERS)
    spec = cfg.build_spec()
    # train() compares every replica bitwise after each iteration and raises on divergence
    result = train(cfg, spec, evaluate_final=False, check_replicas=True, record_gradients=True)
    model = cfg.build_model(spec.n)
    grads = [gradient_estimate(spec, model, auto_sample(model, cfg.mbs, stream(cfg.seed, w)))
             for w in range(1, C8_WORKERS + 1)]
    diff = float(np.abs(result.gradients[0] - allreduce_mean(grads)).max())
    passed = diff <= C8_TOL and len(result.stats) == C8_ITERS
    criterion(8, passed, "parallel equals serial",
              f"iteration-1 gradient max diff {diff:.1e} (<= {C8_TOL:.0e}); replicas bitwise identical "
              f"after all {len(result.stats)} iterations")
    assert passed


def test_c09_weak_scaling(criterion):
    rows = weak_scaling_benchmark([C9_N], C9_WORKERS, mbs=C9_MBS, iterations=3, warmup=1)
    norm = [r["normalized"] for r in rows]
    lo, hi = C9_BAND
    passed = all(lo <= v <= hi for v in norm)
    criterion(9, passed, "weak scaling",
              "normalized time per iteration " + ", ".join(f"L={r['workers']}: {r['normalized']:.2f}" for r in rows)
              + f" (band [{lo}, {hi}]); {os.cpu_count()} CPU core(s) available")
    assert passed


def _c10_seconds_per_iter(model, sampler, spec):
    cfg = RunConfig(problem="tim", n=C10_N, model=model, sampler=sampler, mcmc_reburn=True,
                    chains=2, burn_in=None, iterations=C10_ITERS + 1, mbs=C10_BS, seed=0)
    result = train(cfg, spec, evaluate_final=False)
    return float(np.mean([s.wall_time for s in result.stats[1:]])), result.phase_times


def test_c10_runtime_ordering(criterion):
    spec = ham.random_tim(C10_N, 0)
    t_auto, ph_auto = _c10_seconds_per_iter("made", "auto", spec)
    t_mcmc, ph_mcmc = _c10_seconds_per_iter("rbm", "mcmc", spec)
    speedup = t_mcmc / t_auto
    passed = speedup >= C10_SPEEDUP
    per = lambda ph: f"sample {ph['sample'] / (C10_ITERS + 1):.2f} s, estimate {ph['estimate'] / (C10_ITERS + 1):.2f} s"
    criterion(10, passed, "runtime ordering",
              f"MADE+AUTO {t_auto:.2f} s/iter ({per(ph_auto)}), RBM+MCMC {t_mcmc:.2f} s/iter ({per(ph_mcmc)}); "
              f"speed-up {speedup:.2f}x (>= {C10_SPEEDUP}x)")
    assert passed


def test_c11_batch_size_effect(criterion):
    spec = ham.random_tim(C11_N, 0)
    lam, _ = ground_state(spec)
    means = []
    for bs in C11_BATCHES:
        finals = [train(RunConfig(problem="tim", n=C11_N, instance_seed=0, seed=s, mbs=bs,
                                  iterations=300), spec).final_energy for s in range(C11_SEEDS)]
        means.append(float(np.mean(finals)))
    inversions = sum(means[j] > means[i] for i in range(len(means)) for j in range(i + 1, len(means)))
    passed = inversions <= C11_MAX_INVERSIONS
    criterion(11, passed, "batch-size effect",
              ", ".join(f"bs={b}: {m:.4f}" for b, m in zip(C11_BATCHES, means))
              + f" (lambda_min {lam:.4f}); {inversions} inversion(s) (<= {C11_MAX_INVERSIONS})")
    assert passed


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
