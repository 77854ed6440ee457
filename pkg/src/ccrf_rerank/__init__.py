"""Clique-based C-CRF denoising of nearest-neighbor graphs for diffusion re-ranking."""
from .graph import (
    DescriptorSet,
    KnnLists,
    NormalizedAffinity,
    SparseAffinity,
    build_knn,
    pairwise_similarity,
    read_fvecs,
    reciprocity_affinity,
    symmetric_normalize,
    write_fvecs,
)
from .ccrf import (
    CcrfParams,
    Clique,
    CcrfSystem,
    assemble_system,
    build_clique,
    denoise_database,
    infer,
    j_divergence,
    read_affinity,
    sbd_pmf,
    weight_matrix,
    write_affinity,
)
from .diffusion import (
    DiffusionParams,
    Reranker,
    RetrievalRanking,
    diffuse_closed_form,
    diffuse_iterative,
    offline_precompute,
    query_init,
    rerank,
)
from .metrics import Protocol, QueryTruth, average_precision, mean_ap
from .baselines import aqe_baseline, nn_search
from .synthetic import synth_benchmark, synth_manifolds
from .solvers import ConvergenceError, conjugate_gradient

__all__ = [
    "DescriptorSet",
    "KnnLists",
    "NormalizedAffinity",
    "SparseAffinity",
    "build_knn",
    "pairwise_similarity",
    "read_fvecs",
    "reciprocity_affinity",
    "symmetric_normalize",
    "write_fvecs",
    "CcrfParams",
    "Clique",
    "CcrfSystem",
    "assemble_system",
    "build_clique",
    "denoise_database",
    "infer",
    "j_divergence",
    "read_affinity",
    "sbd_pmf",
    "weight_matrix",
    "write_affinity",
    "DiffusionParams",
    "Reranker",
    "RetrievalRanking",
    "diffuse_closed_form",
    "diffuse_iterative",
    "offline_precompute",
    "query_init",
    "rerank",
    "Protocol",
    "QueryTruth",
    "average_precision",
    "mean_ap",
    "aqe_baseline",
    "nn_search",
    "synth_benchmark",
    "synth_manifolds",
    "ConvergenceError",
    "conjugate_gradient",
]

__version__ = "0.1.0"
