"""Planted two-manifold toy data and retrieval protocols over it.

Points are drawn in the plane and lifted onto the unit sphere in R^3 by
appending a constant height and normalizing. With the height at least the
largest centered radius, every pairwise inner product is nonnegative, and
inner-product similarity decreases with planar distance locally.
"""
from __future__ import annotations

import numpy as np

from .graph import DescriptorSet
from .metrics import Protocol, QueryTruth

SHAPES = ("two_moons", "two_circles")


def manifold_points(n_per_manifold: int, noise_sigma: float = 0.0, shape: str = "two_moons",
                    seed: int = 0, circle_factor: float = 0.5):
    """Planar point cloud with ``n_per_manifold`` points on each of two manifolds.

    Returns ``(points, labels)`` with points of shape ``(2n, 2)``.
    """
    if n_per_manifold < 2:
        raise ValueError("need at least two points per manifold")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be nonnegative")
    rng = np.random.default_rng(seed)
    n = n_per_manifold
    if shape == "two_moons":
        t0 = np.sort(rng.uniform(0.0, np.pi, n))
        t1 = np.sort(rng.uniform(0.0, np.pi, n))
        outer = np.column_stack([np.cos(t0), np.sin(t0)])
        inner = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
        points = np.vstack([outer, inner])
    elif shape == "two_circles":
        t0 = np.sort(rng.uniform(0.0, 2 * np.pi, n))
        t1 = np.sort(rng.uniform(0.0, 2 * np.pi, n))
        outer = np.column_stack([np.cos(t0), np.sin(t0)])
        inner = circle_factor * np.column_stack([np.cos(t1), np.sin(t1)])
        points = np.vstack([outer, inner])
    else:
        raise ValueError(f"unknown shape {shape!r}; expected one of {SHAPES}")
    labels = np.repeat([0, 1], n)
    if noise_sigma > 0:
        points = points + rng.normal(scale=noise_sigma, size=points.shape)
    return points, labels


def lift_to_sphere(points, height: float = 1.0) -> np.ndarray:
    """Center planar points and map ``p -> (p, h) / ||(p, h)||``.

    ``h`` is ``height`` times the largest centered radius; ``height >= 1``
    keeps all pairwise inner products nonnegative.
    """
    P = np.asarray(points, dtype=np.float64)
    P = P - P.mean(axis=0)
    r_max = np.linalg.norm(P, axis=1).max()
    h = height * (r_max if r_max > 0 else 1.0)
    F = np.column_stack([P, np.full(len(P), h)])
    return F / np.linalg.norm(F, axis=1, keepdims=True)


def synth_manifolds(n_per_manifold: int, noise_sigma: float = 0.0, shape: str = "two_moons",
                    seed: int = 0, height: float = 1.0):
    """Descriptors for a planted two-manifold set, plus manifold labels."""
    points, labels = manifold_points(n_per_manifold, noise_sigma, shape, seed)
    return DescriptorSet(lift_to_sphere(points, height)), labels


def manifold_protocol(points, labels, query_index, mode: str = "Medium",
                      hard_fraction: float = 0.5) -> Protocol:
    """Protocol whose queries are database items.

    For each query the other members of its manifold are positives: the
    ``hard_fraction`` farthest (planar distance) are hard, the rest easy.
    The query item itself is junk.
    """
    P = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    queries = []
    for q in np.asarray(query_index).tolist():
        same = np.flatnonzero((labels == labels[q]) & (np.arange(len(labels)) != q))
        dist = np.linalg.norm(P[same] - P[q], axis=1)
        order = same[np.argsort(dist, kind="stable")]
        n_easy = len(order) - int(round(hard_fraction * len(order)))
        queries.append(QueryTruth(str(q), order[:n_easy], order[n_easy:], [q]))
    return Protocol(queries, mode)


def synth_benchmark(n_per_manifold: int = 200, noise_sigma: float = 0.1, shape: str = "two_moons",
                    seed: int = 0, n_queries: int = 40, height: float = 1.0, mode: str = "Medium"):
    """Descriptors, labels and an in-database query protocol for one seed.

    Query descriptors are the database rows of the chosen query items.
    """
    points, labels = manifold_points(n_per_manifold, noise_sigma, shape, seed)
    X = DescriptorSet(lift_to_sphere(points, height))
    rng = np.random.default_rng([seed, 1])
    n_queries = min(n_queries, len(labels))
    query_index = np.sort(rng.choice(len(labels), size=n_queries, replace=False))
    protocol = manifold_protocol(points, labels, query_index, mode)
    protocol.query_vectors = X.vectors[query_index]
    return X, labels, protocol
