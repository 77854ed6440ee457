"""Acceptance criteria, one test (and one PASS/FAIL summary line) each.

Synthetic experiments use two moons at noise 0.05 lifted onto the sphere,
with a sharp similarity exponent so that the divergence term separates the
manifolds. The large-scale check runs only when feature files are supplied
through environment variables (see ``test_large_scale_reproduction``).
"""
import os
import time
from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp

from ccrf_rerank.ccrf import (
    CcrfParams,
    assemble_system,
    build_clique,
    denoise_database,
    infer,
    j_divergence,
    sbd_matrix,
    sbd_pmf,
    weight_matrix,
)
from ccrf_rerank.diffusion import (
    DiffusionParams,
    RetrievalRanking,
    diffuse_closed_form,
    diffuse_iterative,
    offline_precompute,
)
from ccrf_rerank.experiments import (
    ABLATIONS,
    PipelineConfig,
    ablation,
    cross_label_edges,
    evaluate,
    format_table,
    sweep,
)
from ccrf_rerank.graph import (
    DescriptorSet,
    SparseAffinity,
    build_knn,
    read_fvecs,
    reciprocity_affinity,
    symmetric_normalize,
)
from ccrf_rerank.metrics import Protocol
from ccrf_rerank.solvers import cholesky_solve, conjugate_gradient
from ccrf_rerank.synthetic import synth_benchmark

SYNTH = dict(n_per_manifold=200, noise_sigma=0.05, shape="two_moons", n_queries=40)
GAMMA = 100.0
CLIQUE = 50
CCRF = CcrfParams(alpha=1.0, beta=1.0, sigma_d=0.2, sigma_r=0.01, gamma=GAMMA)
DIFFUSION = DiffusionParams(rho=0.99)


def random_clique(L, seed, gamma=3.0):
    rng = np.random.default_rng(seed)
    X = DescriptorSet.from_array(np.abs(rng.normal(size=(L + 20, 8))), normalize=True)
    knn = build_knn(X, L, gamma)
    return X, build_clique(X, knn, 0, L, gamma)


def random_graph(n, seed, density=0.08):
    rng = np.random.default_rng(seed)
    M = sp.triu(sp.random(n, n, density=density, random_state=rng,
                          data_rvs=lambda k: rng.uniform(size=k)), 1)
    return symmetric_normalize(SparseAffinity.from_matrix(M + M.T))


def test_ccrf_algebra_suite(record):
    t0 = time.perf_counter()
    min_gap = np.inf
    for L in (2, 8, 16, 32, 64):
        for seed in range(3):
            X, clique = random_clique(L, seed)
            W = weight_matrix(X, clique, 0.9, 3.5e-4)
            system = assemble_system(clique, W, 1.0, 0.1)
            np.linalg.cholesky(system.precision)
            min_gap = min(min_gap, np.linalg.eigvalsh(system.precision).min() - 2.0)
    pd_ok = min_gap >= -1e-9

    collapse_err = 0.0
    for L in (2, 8, 64):
        X, clique = random_clique(L, 7)
        y = infer(assemble_system(clique, weight_matrix(X, clique, 0.9, 3.5e-4), 1.0, 0.0))
        collapse_err = max(collapse_err, np.max(np.abs(y - clique.pivot_sims)))
    collapse_ok = collapse_err <= 1e-12

    worst = 0.0
    for L in (2, 8, 64, 500):
        X, clique = random_clique(L, 11)
        system = assemble_system(clique, weight_matrix(X, clique, 0.9, 0.05), 1.0, 0.1)
        y_cg, info = conjugate_gradient(system.precision, system.rhs, tol=1e-8)
        y_direct = cholesky_solve(system.precision, system.rhs)
        residual = np.linalg.norm(system.precision @ y_cg - system.rhs) / np.linalg.norm(system.rhs)
        diff = np.linalg.norm(y_cg - y_direct) / np.linalg.norm(y_direct)
        worst = max(worst, residual, diff)
    cg_ok = worst <= 1e-6
    elapsed = time.perf_counter() - t0
    ok = pd_ok and collapse_ok and cg_ok and elapsed < 10
    record("C-CRF algebra suite", ok,
           f"min eig - 2a = {min_gap:.2e}, beta=0 max err = {collapse_err:.1e}, "
           f"CG vs direct worst rel = {worst:.1e}, {elapsed:.2f}s")
    assert ok


def test_divergence_pmf_suite(record):
    rng = np.random.default_rng(0)
    norm_err, min_entry, asym, min_div, self_div = 0.0, np.inf, 0.0, np.inf, 0.0
    for L in (2, 5, 20, 100):
        S = rng.uniform(size=(L, L))
        S = np.triu(S, 1) + np.triu(S, 1).T
        P = sbd_matrix(S)
        for i in range(L):
            np.testing.assert_allclose(P[i], sbd_pmf(S, i), rtol=1e-12)
        norm_err = max(norm_err, np.max(np.abs(P.sum(axis=1) - 1)))
        min_entry = min(min_entry, P.min())
        for i in range(min(L, 10)):
            for j in range(min(L, 10)):
                d_ij, d_ji = j_divergence(P[i], P[j]), j_divergence(P[j], P[i])
                asym = max(asym, abs(d_ij - d_ji))
                min_div = min(min_div, d_ij)
            self_div = max(self_div, j_divergence(P[i], P[i].copy()))
    hand = j_divergence([0.5, 0.5], [0.9, 0.1])
    ok = (norm_err <= 1e-9 and min_entry > 0 and asym <= 1e-12 and min_div >= 0
          and self_div <= 1e-12 and abs(hand - 0.43945) <= 1e-4)
    record("divergence / PMF suite", ok,
           f"sum err {norm_err:.1e}, min entry {min_entry:.2e}, asym {asym:.1e}, "
           f"self {self_div:.1e}, J((.5,.5),(.9,.1)) = {hand:.5f}")
    assert ok


def test_diffusion_suite(record):
    agree = 0.0
    for seed in range(5):
        S = random_graph(100, seed)
        v0 = np.random.default_rng(seed).uniform(size=100)
        it = diffuse_iterative(S, v0, DiffusionParams(rho=0.9, tol=1e-9, max_iter=10_000))
        agree = max(agree, np.max(np.abs(it - diffuse_closed_form(S, v0, 0.9))))

    two = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    v_it = diffuse_iterative(two, np.array([1.0, 0.0]), DiffusionParams(rho=0.5, tol=1e-9))
    v_cf = diffuse_closed_form(two, np.array([1.0, 0.0]), 0.5)
    oracle = max(np.max(np.abs(v_it - [2 / 3, 1 / 3])), np.max(np.abs(v_cf - [2 / 3, 1 / 3])))

    offline_gap, same_order = 0.0, True
    for seed in range(3):
        S = random_graph(60, seed, density=0.15)
        v0 = np.random.default_rng(seed).uniform(size=60)
        offline = offline_precompute(S, 0.9, trunc=60).T @ v0
        online = diffuse_closed_form(S, v0, 0.9)
        offline_gap = max(offline_gap, np.max(np.abs(offline - online)))
        same_order &= np.array_equal(RetrievalRanking.from_scores(offline).indices,
                                     RetrievalRanking.from_scores(online).indices)

    tol = 1e-6
    fixed = 0.0
    for seed in range(3):
        S = random_graph(80, seed)
        v0 = np.random.default_rng(seed).uniform(size=80)
        for v in (diffuse_iterative(S, v0, DiffusionParams(rho=0.9, tol=tol, max_iter=10_000)),
                  diffuse_closed_form(S, v0, 0.9, solver_tol=tol)):
            fixed = max(fixed, np.max(np.abs(v - (0.9 * (S.matrix @ v) + 0.1 * v0))))
    ok = agree <= 1e-5 and oracle <= 1e-6 and offline_gap <= 1e-9 and same_order and fixed <= 10 * tol
    record("diffusion suite", ok,
           f"iterative vs closed {agree:.1e}, two-node err {oracle:.1e}, "
           f"offline vs online {offline_gap:.1e} (same order: {same_order}), "
           f"fixed-point residual {fixed:.1e}")
    assert ok


def test_toy_manifold_denoising(record):
    t0 = time.perf_counter()
    k = 10
    rows = []
    for seed in range(20):
        X, labels, protocol = synth_benchmark(seed=seed, **SYNTH)
        knn = build_knn(X, CLIQUE, GAMMA)
        baseline = reciprocity_affinity(knn.truncate(k))
        denoised = denoise_database(X, CLIQUE, CCRF, k_out=k, knn=knn)
        config = PipelineConfig(k=k, gamma=GAMMA, diffusion=DIFFUSION)
        rows.append((cross_label_edges(baseline, labels)[0], cross_label_edges(denoised, labels)[0],
                     evaluate(X, protocol, config, baseline), evaluate(X, protocol, config, denoised)))
    r = np.array(rows)
    wins = int(np.sum((r[:, 1] <= r[:, 0]) & (r[:, 3] >= r[:, 2])))
    elapsed = time.perf_counter() - t0
    ok = wins >= 18 and elapsed < 120
    record("two-manifold toy (cross edges and mAP)", ok,
           f"{wins}/20 seeds; cross edges {r[:, 0].mean():.1f} -> {r[:, 1].mean():.1f}, "
           f"mAP {r[:, 2].mean():.2f} -> {r[:, 3].mean():.2f}, {elapsed:.1f}s")
    assert ok


def test_small_k_sweep_dominance(record):
    ks = list(range(1, 21))
    seeds = range(5)
    base = np.zeros(len(ks))
    den = np.zeros(len(ks))
    for seed in seeds:
        X, _, protocol = synth_benchmark(seed=seed, **SYNTH)
        config = PipelineConfig(gamma=GAMMA, clique_size=CLIQUE, ccrf=CCRF, diffusion=DIFFUSION)
        b = sweep("k", ks, replace(config, denoise=False), X, protocol)
        d = sweep("k", ks, config, X, protocol)
        assert not b.errors and not d.errors
        base += np.array(b.maps()) / len(seeds)
        den += np.array(d.maps()) / len(seeds)
    frac = float(np.mean(den >= base))
    ok = frac >= 0.8
    curve = ", ".join(f"k={k}: {b:.2f}/{d:.2f}" for k, b, d in zip(ks, base, den))
    record("k-sweep dominance (k <= 20)", ok,
           f"denoised >= reciprocity at {frac:.0%} of points; baseline/denoised {curve}")
    assert ok


def test_ablation_harness(record):
    X, _, protocol = synth_benchmark(seed=0, **SYNTH)
    config = PipelineConfig(k=10, gamma=GAMMA, clique_size=CLIQUE, ccrf=CCRF, diffusion=DIFFUSION)
    table_rows = ablation(X, protocol, config)
    table = format_table(table_rows)
    names = [r["config"] for r in table_rows]
    combos = {(r["ED"], r["SD"]) for r in table_rows[1:]}
    ok = (names == [a[0] for a in ABLATIONS] and combos == {(True, False), (False, True), (True, True)}
          and all(np.isfinite(r[m]) for r in table_rows for m in ("Easy", "Medium", "Hard")))
    print(table)
    record("ablation harness", ok, "; ".join(f"{r['config']} Medium {r['Medium']:.2f}"
                                             for r in table_rows))
    assert ok


LARGE = {key: os.environ.get(f"CCRF_LARGE_{key.upper()}")
         for key in ("descriptors", "queries", "query_ids", "protocol")}


@pytest.mark.skipif(not all(LARGE.values()),
                    reason="set CCRF_LARGE_DESCRIPTORS, _QUERIES, _QUERY_IDS and _PROTOCOL to run")
def test_large_scale_reproduction(record):
    X = read_fvecs(LARGE["descriptors"])
    Q = read_fvecs(LARGE["queries"], LARGE["query_ids"])
    protocol = Protocol.load(LARGE["protocol"], Q.vectors).with_mode("Medium")
    sigma_d = float(os.environ.get("CCRF_LARGE_SIGMA_D", "0.9"))
    sigma_r = float(os.environ.get("CCRF_LARGE_SIGMA_R", "3.5e-4"))
    diffusion = DiffusionParams(rho=0.99, mode="offline")
    config = PipelineConfig(k=50, clique_size=1000, diffusion=diffusion,
                            ccrf=CcrfParams(sigma_d=sigma_d, sigma_r=sigma_r))
    base = evaluate(X, protocol, replace(config, denoise=False))
    den = evaluate(X, protocol, config)
    ok = den > base and abs(den - 76.1) <= 1.5
    record("large-scale reproduction (Medium)", ok, f"baseline {base:.2f}, denoised {den:.2f}")
    assert ok
