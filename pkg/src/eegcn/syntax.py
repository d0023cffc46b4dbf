"""Corpus relation statistics and per-sentence adjacency matrices.

The edge weight of a dependency ``head -> dependent`` labelled ``r`` is the
relative frequency of ``r`` among all dependency edges of the training
parses.  Matrices are directed: ``A[head, dep]`` is set, ``A[dep, head]`` is
not, so ``A`` and ``A.T`` carry different messages.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np

from .corpus import DependencyGraph

MODES = ("sdi", "binary", "identity")

_TOTAL_KEY = "__total"


@dataclass(frozen=True)
class SdiTable:
    counts: Mapping[str, int]
    total: int = field(default=0)

    def __post_init__(self):
        counts = dict(sorted(self.counts.items()))
        if any(c <= 0 for c in counts.values()):
            raise ValueError("relation counts must be positive")
        if sum(counts.values()) != self.total or self.total <= 0:
            raise ValueError(f"relation counts sum to {sum(counts.values())}, "
                             f"total is {self.total}")
        object.__setattr__(self, "counts", MappingProxyType(counts))

    def __eq__(self, other):
        return (isinstance(other, SdiTable) and self.total == other.total
                and dict(self.counts) == dict(other.counts))

    def value(self, relation: str) -> float:
        """Relative frequency; unseen relations get ``1/total``."""
        return self.counts.get(relation, 1) / self.total

    def values(self) -> dict:
        return {rel: c / self.total for rel, c in self.counts.items()}

    def to_json(self) -> str:
        payload = dict(self.counts)
        payload[_TOTAL_KEY] = self.total
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SdiTable":
        payload = json.loads(text)
        total = payload.pop(_TOTAL_KEY)
        return cls(payload, total)


def compute_sdi_table(graphs: Iterable[DependencyGraph]) -> SdiTable:
    """Count relation labels over every edge of the (training) parses."""
    counts = Counter()
    for graph in graphs:
        counts.update(rel for _, _, rel in graph.edges)
    total = sum(counts.values())
    if total == 0:
        raise ValueError("cannot build relation statistics from a corpus with no edges")
    return SdiTable(dict(counts), total)


def binary_adjacency(graph: DependencyGraph) -> np.ndarray:
    A = np.eye(graph.n)
    for head, dep, _ in graph.edges:
        A[head - 1, dep - 1] = 1.0
    return A


def sdi_adjacency(graph: DependencyGraph, table: SdiTable, mode: str = "sdi",
                  unseen: Counter | None = None) -> np.ndarray:
    """Edge-weighted adjacency.

    ``mode="binary"`` drops the weights and ``mode="identity"`` drops the
    edges altogether (self-loops only).  Relations missing from ``table``
    are tallied into ``unseen`` when given; the table itself is never
    modified.
    """
    if mode == "binary":
        return binary_adjacency(graph)
    if mode == "identity":
        return np.eye(graph.n)
    if mode != "sdi":
        raise ValueError(f"unknown adjacency mode {mode!r}; expected one of {MODES}")
    A = np.eye(graph.n)
    for head, dep, rel in graph.edges:
        if unseen is not None and rel not in table.counts:
            unseen[rel] += 1
        A[head - 1, dep - 1] = table.value(rel)
    return A


def off_diagonal_degree(A: np.ndarray) -> np.ndarray:
    """Count of nonzero off-diagonal entries per row."""
    nz = A != 0
    return nz.sum(axis=1) - np.diagonal(nz)
