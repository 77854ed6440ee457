"""Average precision with junk handling and Easy/Medium/Hard protocols."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

MODES = ("Easy", "Medium", "Hard")


@dataclass(frozen=True)
class QueryTruth:
    id: str
    easy: frozenset
    hard: frozenset
    junk: frozenset

    def __post_init__(self):
        for name in ("easy", "hard", "junk"):
            object.__setattr__(self, name, frozenset(int(i) for i in getattr(self, name)))
        if self.easy & self.hard or self.easy & self.junk or self.hard & self.junk:
            raise ValueError(f"query {self.id}: easy/hard/junk sets overlap")

    def effective(self, mode: str) -> tuple[frozenset, frozenset]:
        """(positives, ignored) for a protocol mode."""
        if mode == "Easy":
            return self.easy, self.hard | self.junk
        if mode == "Medium":
            return self.easy | self.hard, self.junk
        if mode == "Hard":
            return self.hard, self.easy | self.junk
        raise ValueError(f"unknown protocol mode {mode!r}")


@dataclass
class Protocol:
    queries: list
    mode: str = "Medium"
    query_vectors: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown protocol mode {self.mode!r}")
        if self.query_vectors is not None and len(self.query_vectors) != len(self.queries):
            raise ValueError("one query descriptor per query required")

    @property
    def ids(self) -> list:
        return [q.id for q in self.queries]

    def with_mode(self, mode: str) -> "Protocol":
        return Protocol(self.queries, mode, self.query_vectors)

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "queries": [
                {"id": q.id, "easy": sorted(q.easy), "hard": sorted(q.hard), "junk": sorted(q.junk)}
                for q in self.queries
            ],
        }

    @classmethod
    def from_json(cls, data: dict, query_vectors=None) -> "Protocol":
        queries = [QueryTruth(str(q["id"]), q.get("easy", ()), q.get("hard", ()), q.get("junk", ()))
                   for q in data["queries"]]
        return cls(queries, data.get("mode", "Medium"), query_vectors)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path, query_vectors=None) -> "Protocol":
        return cls.from_json(json.loads(Path(path).read_text()), query_vectors)


def _indices(ranking) -> np.ndarray:
    return np.asarray(getattr(ranking, "indices", ranking), dtype=np.int64)


def average_precision(ranking, positives, junk=()) -> float:
    """Non-interpolated AP; junk items are dropped from the ranking first.

    Positives missing from a (truncated) ranking contribute zero precision.
    """
    positives = set(int(i) for i in positives)
    junk = set(int(i) for i in junk)
    if not positives:
        raise ValueError("average precision is undefined without positives")
    if positives & junk:
        raise ValueError("positive and junk sets overlap")
    order = [i for i in _indices(ranking).tolist() if i not in junk]
    hits = 0
    total = 0.0
    for rank, idx in enumerate(order, 1):
        if idx in positives:
            hits += 1
            total += hits / rank
    return total / len(positives)


def per_query_ap(rankings: Mapping, protocol: Protocol, mode: str | None = None) -> dict:
    """AP per query id; queries without positives under ``mode`` are left out."""
    mode = mode or protocol.mode
    out = {}
    for q in protocol.queries:
        if q.id not in rankings:
            raise KeyError(f"no ranking for query {q.id}")
        pos, ignore = q.effective(mode)
        if pos:
            out[q.id] = average_precision(rankings[q.id], pos, ignore)
    return out


def mean_ap(rankings: Mapping, protocol: Protocol, mode: str | None = None) -> float:
    """Mean AP over the protocol's queries on a 0-100 scale."""
    aps = per_query_ap(rankings, protocol, mode)
    if not aps:
        raise ValueError(f"no query has positives under mode {mode or protocol.mode}")
    return 100.0 * float(np.mean(list(aps.values())))
