"""
Denoising one pivot, step by step
=================================

Follow a single database item through clique construction, similarity
distributions, the pairwise weight kernel and the Gaussian MAP solve, and
see which neighbors gain or lose similarity.
"""
import numpy as np

from ccrf_rerank.ccrf import (
    CcrfParams,
    assemble_system,
    build_clique,
    infer,
    j_divergence_matrix,
    sbd_matrix,
    weight_matrix,
)
from ccrf_rerank.graph import build_knn
from ccrf_rerank.synthetic import synth_manifolds

np.set_printoptions(precision=4, suppress=True)

###############################################################################
# Data and the pivot's clique
# ---------------------------
# Two moons on the unit sphere. A sharp exponent makes similarity fall off
# quickly with distance, so neighborhoods stay local.

GAMMA = 100.0
X, labels = synth_manifolds(200, noise_sigma=0.05, seed=0)
knn = build_knn(X, 50, GAMMA)

# pick the item whose 50-neighborhood holds the most items of the other moon
mixed = (labels[knn.neighbors] != labels[:, None]).sum(axis=1)
pivot = int(np.argmax(mixed))
clique = build_clique(X, knn, pivot, 50, GAMMA)
other = labels[clique.members] != labels[pivot]
print(f"pivot {pivot} (moon {labels[pivot]}), {other.sum()} of 50 clique members on the other moon")

###############################################################################
# Similarity distributions and their divergences
# ----------------------------------------------
# Each member is described by a softmax over its similarities to the rest
# of the clique. Members on the same moon see the clique alike.

P = sbd_matrix(clique.sim_matrix)
D = j_divergence_matrix(P)
same = ~other
print("median divergence, same moon pairs :", np.median(D[np.ix_(same, same)]))
if other.any():
    print("median divergence, cross moon pairs:", np.median(D[np.ix_(same, other)]))

###############################################################################
# Weights, system and solve
# -------------------------

params = CcrfParams(alpha=1.0, beta=1.0, sigma_d=0.2, sigma_r=0.01, gamma=GAMMA)
W = weight_matrix(X, clique, params.sigma_d, params.sigma_r)
system = assemble_system(clique, W, params.alpha, params.beta)
y = infer(system)
print("smallest precision eigenvalue:", np.linalg.eigvalsh(system.precision).min())

###############################################################################
# What changed
# ------------
# Compare the top 10 by raw similarity with the top 10 after denoising.

raw_top = clique.members[np.argsort(-clique.pivot_sims, kind="stable")[:10]]
new_top = clique.members[np.argsort(-y, kind="stable")[:10]]
print("raw top-10 labels     :", labels[raw_top])
print("denoised top-10 labels:", labels[new_top])
print("mean change, same moon :", np.mean(y[same] - clique.pivot_sims[same]))
if other.any():
    print("mean change, other moon:", np.mean(y[other] - clique.pivot_sims[other]))
