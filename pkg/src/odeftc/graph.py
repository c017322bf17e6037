"""Undirected communication graphs and their Laplacian spectra."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

import numpy as np

__all__ = ["GraphTopology", "laplacian", "algebraic_connectivity", "neighbors"]


@dataclass(frozen=True)
class GraphTopology:
    """Undirected graph on nodes ``0..N-1``.

    Edges are stored as sorted pairs. Connectivity is checked at construction
    unless ``require_connected=False`` (useful for negative examples).
    """

    N: int
    edges: tuple[tuple[int, int], ...]

    def __init__(self, N: int, edges: Iterable[Iterable[int]], *, one_based: bool = False,
                 require_connected: bool = True):
        if int(N) < 1:
            raise ValueError("a graph needs at least one node")
        shift = 1 if one_based else 0
        seen = set()
        for e in edges:
            i, j = (int(v) - shift for v in e)
            if not (0 <= i < N and 0 <= j < N):
                raise ValueError(f"edge {tuple(e)} references a node outside 1..{N}" if one_based
                                 else f"edge {tuple(e)} references a node outside 0..{N - 1}")
            if i == j:
                raise ValueError(f"self-loop on node {i + shift}")
            pair = (min(i, j), max(i, j))
            if pair in seen:
                raise ValueError(f"duplicate edge {tuple(e)}")
            seen.add(pair)
        object.__setattr__(self, "N", int(N))
        object.__setattr__(self, "edges", tuple(sorted(seen)))
        if require_connected and N > 1 and self.algebraic_connectivity <= 1e-12:
            raise ValueError("graph is not connected")

    @classmethod
    def complete(cls, N: int) -> "GraphTopology":
        return cls(N, [(i, j) for i in range(N) for j in range(i + 1, N)])

    @classmethod
    def path(cls, N: int) -> "GraphTopology":
        return cls(N, [(i, i + 1) for i in range(N - 1)])

    @property
    def ell(self) -> int:
        return len(self.edges)

    @cached_property
    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.N, self.N))
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = 1.0
        return adj

    @cached_property
    def laplacian(self) -> np.ndarray:
        adj = self.adjacency
        return np.diag(adj.sum(axis=1)) - adj

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.laplacian)

    @property
    def algebraic_connectivity(self) -> float:
        if self.N == 1:
            return 0.0
        return max(float(self.eigenvalues[1]), 0.0)

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1).astype(int)

    @cached_property
    def incidence(self) -> np.ndarray:
        """Signed ``N x ell`` incidence matrix, +1 at the lower endpoint of each edge."""
        inc = np.zeros((self.N, self.ell))
        for k, (i, j) in enumerate(self.edges):
            inc[i, k] = 1.0
            inc[j, k] = -1.0
        return inc

    def neighbors(self, i: int) -> frozenset[int]:
        if not 0 <= i < self.N:
            raise KeyError(f"unknown node {i}")
        return frozenset(j for e in self.edges if i in e for j in e if j != i)


def laplacian(g: GraphTopology) -> np.ndarray:
    return g.laplacian.copy()


def algebraic_connectivity(g: GraphTopology) -> float:
    return g.algebraic_connectivity


def neighbors(g: GraphTopology, i: int) -> frozenset[int]:
    return g.neighbors(i)
