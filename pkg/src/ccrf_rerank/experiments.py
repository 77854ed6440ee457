"""End-to-end retrieval pipelines, parameter sweeps and weight-term ablations."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .ccrf import CcrfParams, denoise_database
from .diffusion import DiffusionParams, Reranker
from .graph import DEFAULT_GAMMA, DescriptorSet, SparseAffinity, build_knn, reciprocity_affinity
from .metrics import Protocol, mean_ap

AXES = ("k", "clique_size")


@dataclass(frozen=True)
class PipelineConfig:
    """Graph, denoising and diffusion settings for one retrieval run.

    ``k`` is the graph neighborhood: the reciprocity k for the baseline
    graph and ``k_out`` for the denoised graph. ``query_k`` defaults to ``k``.
    """

    k: int = 50
    gamma: float = DEFAULT_GAMMA
    denoise: bool = True
    clique_size: int = 1000
    ccrf: CcrfParams = field(default_factory=CcrfParams)
    diffusion: DiffusionParams = field(default_factory=DiffusionParams)
    query_k: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def build_affinity(X: DescriptorSet, config: PipelineConfig) -> SparseAffinity:
    if config.denoise:
        L = min(config.clique_size, X.n - 1)
        if config.k > L:
            raise ValueError(f"k={config.k} exceeds clique size {L}")
        params = replace(config.ccrf, gamma=config.gamma)
        return denoise_database(X, L, params, k_out=config.k)
    return reciprocity_affinity(build_knn(X, config.k, config.gamma))


def retrieve(X: DescriptorSet, affinity: SparseAffinity, protocol: Protocol,
             config: PipelineConfig) -> dict:
    if protocol.query_vectors is None:
        raise ValueError("protocol carries no query descriptors")
    reranker = Reranker(X, affinity, config.diffusion, config.query_k or config.k, config.gamma)
    return {q.id: reranker.rank(protocol.query_vectors[i])
            for i, q in enumerate(protocol.queries)}


def evaluate(X: DescriptorSet, protocol: Protocol, config: PipelineConfig,
             affinity: SparseAffinity | None = None) -> float:
    """mAP (0-100) of diffusion re-ranking under ``config``."""
    if affinity is None:
        affinity = build_affinity(X, config)
    return mean_ap(retrieve(X, affinity, protocol, config), protocol)


def cross_label_edges(A: SparseAffinity, labels) -> tuple[int, float]:
    """Count and total weight of edges joining differently labelled items."""
    labels = np.asarray(labels)
    cross = labels[A.rows] != labels[A.cols]
    return int(cross.sum()), float(A.weights[cross].sum())


@dataclass
class SweepResult:
    axis: str
    points: list  # (value, mAP), sorted by value
    config: dict
    errors: dict = field(default_factory=dict)  # value -> message

    def values(self) -> list:
        return [v for v, _ in self.points]

    def maps(self) -> list:
        return [m for _, m in self.points]

    def write(self, path) -> None:
        """Plot data: ``#`` config header, then ``<value> <mAP>`` per point."""
        lines = [f"# axis = {self.axis}\n"]
        lines += [f"# {key} = {val}\n" for key, val in _flatten(self.config)]
        lines += [f"# error {v}: {msg}\n" for v, msg in sorted(self.errors.items())]
        lines += [f"{v} {m:.4f}\n" for v, m in self.points]
        Path(path).write_text("".join(lines))


def _flatten(d, prefix=""):
    for key, val in d.items():
        if isinstance(val, dict):
            yield from _flatten(val, f"{prefix}{key}.")
        else:
            yield f"{prefix}{key}", val


def sweep(axis: str, values, config: PipelineConfig, X: DescriptorSet,
          protocol: Protocol) -> SweepResult:
    """Evaluate the pipeline once per value of ``k`` or ``clique_size``.

    Failing points are recorded in ``errors`` and the sweep continues.
    """
    if axis not in AXES:
        raise ValueError(f"unknown sweep axis {axis!r}")
    values = list(values)
    if not values:
        raise ValueError("nothing to sweep")
    points, errors = [], {}
    for v in sorted(values):
        try:
            if not 1 <= v <= X.n - 1:
                raise ValueError(f"{axis}={v} outside [1, {X.n - 1}]")
            points.append((v, evaluate(X, protocol, replace(config, **{axis: v}))))
        except Exception as exc:  # noqa: BLE001 - recorded per point
            errors[v] = f"{type(exc).__name__}: {exc}"
    return SweepResult(axis, points, config.to_dict(), errors)


ABLATIONS = (
    ("baseline", False, False, False),
    ("w/ ED", True, True, False),
    ("w/ SD", True, False, True),
    ("w/ ED + SD", True, True, True),
)


def ablation(X: DescriptorSet, protocol: Protocol, config: PipelineConfig,
             modes=("Easy", "Medium", "Hard")) -> list[dict]:
    """mAP for the reciprocity baseline and for each weight-term combination."""
    rows = []
    for name, denoise, ed, sd in ABLATIONS:
        cfg = replace(config, denoise=denoise, ccrf=replace(config.ccrf, use_ed=ed, use_sd=sd))
        rankings = retrieve(X, build_affinity(X, cfg), protocol, cfg)
        row = {"config": name, "ED": ed, "SD": sd}
        for mode in modes:
            row[mode] = mean_ap(rankings, protocol, mode)
        rows.append(row)
    return rows


def format_table(rows: list[dict]) -> str:
    modes = [k for k in rows[0] if k not in ("config", "ED", "SD")]
    head = f"{'config':<12} {'ED':>3} {'SD':>3} " + " ".join(f"{m:>7}" for m in modes)
    lines = [head, "-" * len(head)]
    for r in rows:
        mark = lambda b: "x" if b else ""  # noqa: E731
        lines.append(f"{r['config']:<12} {mark(r['ED']):>3} {mark(r['SD']):>3} "
                     + " ".join(f"{r[m]:7.2f}" for m in modes))
    return "\n".join(lines)
