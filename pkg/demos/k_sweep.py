"""
Sweeping the neighborhood size and ablating the weight terms
============================================================

Trace mAP against k for both graphs, write the curves as plot data, and
print the ablation table for the distance and divergence weight terms.
"""
from dataclasses import replace
from pathlib import Path

from ccrf_rerank.ccrf import CcrfParams
from ccrf_rerank.diffusion import DiffusionParams
from ccrf_rerank.experiments import PipelineConfig, ablation, format_table, sweep
from ccrf_rerank.synthetic import synth_benchmark

X, labels, protocol = synth_benchmark(200, 0.05, seed=1, n_queries=40)
config = PipelineConfig(gamma=100.0, clique_size=50,
                        ccrf=CcrfParams(beta=1.0, sigma_d=0.2, sigma_r=0.01),
                        diffusion=DiffusionParams(rho=0.99))

###############################################################################
# mAP against k
# -------------

ks = [2, 4, 6, 8, 10, 15, 20, 30]
denoised = sweep("k", ks, config, X, protocol)
baseline = sweep("k", ks, replace(config, denoise=False), X, protocol)
print("   k  reciprocity  denoised")
for (k, b), (_, d) in zip(baseline.points, denoised.points):
    print(f"{k:4d}  {b:11.2f}  {d:8.2f}")

out = Path("demo_out")
out.mkdir(exist_ok=True)
denoised.write(out / "sweep_k_denoised.txt")
baseline.write(out / "sweep_k_reciprocity.txt")
print(f"plot data written to {out}/")

###############################################################################
# Weight-term ablation
# --------------------
# At a small k the graph is sparse enough for the choice of weights to show.

print()
print(format_table(ablation(X, protocol, replace(config, k=5))))
