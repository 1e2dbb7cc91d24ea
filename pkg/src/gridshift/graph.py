"""
Communication graph utilities for emergency controller-to-controller networks.

Nodes are the DG controllers of one region, indexed 0..N-1. Links are
undirected (two-way FDD), so the adjacency matrix is symmetric with a zero
diagonal and the Laplacian is L = D - A.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components as _cc

ZERO_EIG_TOL = 1e-9

Edge = tuple[int, int]


class GraphError(ValueError):
    """Raised for malformed graphs or node layouts."""


@dataclass(frozen=True)
class GeoLocation:
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise GraphError(f"non-finite location ({self.x}, {self.y})")

    def distance(self, other: GeoLocation) -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


def _norm_edge(i: int, j: int) -> Edge:
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class CommGraph:
    """Undirected communication topology of one region.

    ``edges`` is stored as a sorted tuple of ``(i, j)`` pairs with ``i < j``;
    the matrix views are computed lazily and should be treated as read-only.
    """

    n: int
    edges: tuple[Edge, ...]

    def __post_init__(self) -> None:
        if self.n < 0:
            raise GraphError("node count must be non-negative")
        norm = set()
        for i, j in self.edges:
            if i == j:
                raise GraphError(f"self-loop on node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise GraphError(f"edge ({i}, {j}) outside 0..{self.n - 1}")
            norm.add(_norm_edge(i, j))
        object.__setattr__(self, "edges", tuple(sorted(norm)))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Sequence[int]]) -> CommGraph:
        return cls(n, tuple((int(e[0]), int(e[1])) for e in edges))

    @classmethod
    def from_adjacency(cls, adjacency: np.ndarray) -> CommGraph:
        a = np.asarray(adjacency)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise GraphError("adjacency must be square")
        if not np.array_equal(a, a.T):
            raise GraphError("adjacency must be symmetric")
        if np.any(np.diag(a) != 0):
            raise GraphError("adjacency must have a zero diagonal")
        if not np.all((a == 0) | (a == 1)):
            raise GraphError("adjacency must be binary")
        ii, jj = np.nonzero(np.triu(a))
        return cls(a.shape[0], tuple(zip(ii.tolist(), jj.tolist())))

    @cached_property
    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        a.setflags(write=False)
        return a

    @cached_property
    def degrees(self) -> np.ndarray:
        d = self.adjacency.sum(axis=1)
        d.setflags(write=False)
        return d

    @cached_property
    def laplacian(self) -> np.ndarray:
        lap = np.diag(self.degrees) - self.adjacency
        lap.setflags(write=False)
        return lap

    def neighbours(self, i: int) -> list[int]:
        return [j for e in self.edges if i in e for j in e if j != i]

    def incident_edges(self, i: int) -> list[int]:
        """Indices into ``edges`` of the links touching node ``i``."""
        return [k for k, e in enumerate(self.edges) if i in e]


def build_chain_from_locations(locations: Sequence[GeoLocation]) -> CommGraph:
    """Link every node to its nearest not-yet-connected neighbour.

    This is Prim's algorithm on Euclidean distance starting from node 0, so
    the result is a minimum spanning tree with exactly N-1 edges. Ties on
    distance go to the lower index of the node being attached, then to the
    lower index of the tree node it attaches to.
    """
    n = len(locations)
    if n < 2:
        raise GraphError("need at least 2 nodes to form a network")
    seen = set()
    for k, loc in enumerate(locations):
        key = (loc.x, loc.y)
        if key in seen:
            raise GraphError(f"duplicate location at node {k}: {key}")
        seen.add(key)

    in_tree = [False] * n
    in_tree[0] = True
    # best[j] = (distance, tree node) for the cheapest link from j into the tree
    best = [(locations[0].distance(locations[j]), 0) for j in range(n)]
    edges = []
    for _ in range(n - 1):
        j = min(
            (j for j in range(n) if not in_tree[j]),
            key=lambda j: (best[j][0], j, best[j][1]),
        )
        edges.append((best[j][1], j))
        in_tree[j] = True
        for v in range(n):
            if not in_tree[v]:
                d = locations[j].distance(locations[v])
                if (d, j) < best[v]:
                    best[v] = (d, j)
    return CommGraph.from_edges(n, edges)


def laplacian_spectrum(g: CommGraph) -> np.ndarray:
    if g.n == 0:
        return np.zeros(0)
    return np.linalg.eigvalsh(g.laplacian)


def algebraic_connectivity(g: CommGraph) -> float:
    """Second-smallest Laplacian eigenvalue (0 for a single node)."""
    if g.n < 1:
        raise GraphError("empty graph")
    if g.n == 1:
        return 0.0
    lam2 = float(laplacian_spectrum(g)[1])
    return lam2 if lam2 > ZERO_EIG_TOL else 0.0


def connected_components(g: CommGraph) -> list[list[int]]:
    """Partition of the nodes into connected parts, ordered by lowest member."""
    if g.n == 0:
        return []
    ncomp, labels = _cc(csr_matrix(g.adjacency), directed=False)
    parts: dict[int, list[int]] = {}
    for node, lab in enumerate(labels.tolist()):
        parts.setdefault(lab, []).append(node)
    return sorted(parts.values(), key=lambda p: p[0])


def is_connected(g: CommGraph) -> bool:
    return g.n >= 1 and len(connected_components(g)) == 1


def subgraph(g: CommGraph, nodes: Sequence[int]) -> CommGraph:
    """Induced subgraph, relabelled to 0..len(nodes)-1 in the given order."""
    index = {v: k for k, v in enumerate(nodes)}
    edges = [(index[i], index[j]) for i, j in g.edges if i in index and j in index]
    return CommGraph.from_edges(len(nodes), edges)
