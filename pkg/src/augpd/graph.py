"""Directed graphs and the incidence/Laplacian algebra that couples node and
edge subsystems.

Node and edge identifiers are strings, mapped once to dense contiguous
indices by their position in the :class:`Graph` tuples; all numeric work
downstream uses those indices, which keeps output ordering reproducible.
Matrices are plain float64 ndarrays (desk-scale networks, so dense wins on
simplicity). Arrays returned here are marked read-only; graphs are immutable
and safe to share across concurrent runs.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "GraphError",
    "Graph",
    "incidence_matrix",
    "weighted_laplacian",
    "validate_incidence",
    "validate_routing",
]


class GraphError(ValueError):
    """Invalid graph structure or coupling matrix."""


@dataclass(frozen=True)
class Graph:
    """Directed, connected graph without self-loops.

    Parameters
    ----------
    nodes : tuple of str
        Ordered node identifiers.
    edges : tuple of (str, str)
        Ordered (source, sink) pairs; endpoints must name existing nodes.
    edge_ids : tuple of str, optional
        Explicit edge names. Defaults to ``e1, e2, ...``.
    """

    nodes: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]
    edge_ids: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(tuple(e) for e in self.edges))
        if not self.nodes:
            raise GraphError("graph needs at least one node")
        if len(set(self.nodes)) != len(self.nodes):
            raise GraphError("duplicate node identifiers")
        if not self.edge_ids:
            object.__setattr__(
                self, "edge_ids", tuple(f"e{j + 1}" for j in range(len(self.edges)))
            )
        else:
            object.__setattr__(self, "edge_ids", tuple(self.edge_ids))
        if len(self.edge_ids) != len(self.edges):
            raise GraphError("edge_ids length does not match edges")
        if len(set(self.edge_ids)) != len(self.edge_ids):
            raise GraphError("duplicate edge identifiers")
        known = set(self.nodes)
        for src, dst in self.edges:
            if src not in known or dst not in known:
                raise GraphError(f"edge ({src}, {dst}) references unknown node")
            if src == dst:
                raise GraphError(f"self-loop at node {src}")
        self._check_connected()

    def _check_connected(self):
        # Connectivity ignores edge direction.
        if len(self.nodes) == 1:
            return
        adj: dict[str, set[str]] = {n: set() for n in self.nodes}
        for src, dst in self.edges:
            adj[src].add(dst)
            adj[dst].add(src)
        seen = {self.nodes[0]}
        frontier = [self.nodes[0]]
        while frontier:
            nxt = frontier.pop()
            for other in adj[nxt]:
                if other not in seen:
                    seen.add(other)
                    frontier.append(other)
        if len(seen) != len(self.nodes):
            missing = sorted(set(self.nodes) - seen)
            raise GraphError(f"graph is not connected; unreachable nodes: {missing}")

    @cached_property
    def node_index(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.nodes)}

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)


def incidence_matrix(graph: Graph) -> np.ndarray:
    """|V| x |E| incidence matrix of a directed graph.

    Entry (i, j) is +1 when node i is the sink of edge j, -1 when it is the
    source, and 0 otherwise. Column sums are therefore exactly zero, and the
    all-ones row vector annihilates the matrix from the left.
    """
    a = np.zeros((graph.n_nodes, graph.n_edges))
    idx = graph.node_index
    for j, (src, dst) in enumerate(graph.edges):
        a[idx[src], j] = -1.0
        a[idx[dst], j] = 1.0
    a.setflags(write=False)
    return a


def weighted_laplacian(incidence: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Edge-weighted graph Laplacian ``A diag(w) A^T``.

    ``incidence`` is |V| x |E|; ``weights`` holds one non-negative value per
    edge. The result is symmetric positive semidefinite with the all-ones
    vector in its kernel.
    """
    a = np.asarray(incidence, dtype=float)
    w = np.asarray(weights, dtype=float)
    if a.ndim != 2:
        raise GraphError("incidence matrix must be 2-D")
    if w.shape != (a.shape[1],):
        raise GraphError(
            f"expected {a.shape[1]} edge weights, got shape {w.shape}"
        )
    if np.any(w < 0):
        raise GraphError("edge weights must be non-negative")
    lap = (a * w) @ a.T
    # Symmetrize away the last-bit asymmetry from the two matmul orders.
    lap = 0.5 * (lap + lap.T)
    lap.setflags(write=False)
    return lap


def validate_incidence(entries: np.ndarray, n_nodes: int | None = None) -> np.ndarray:
    """Check an explicit node/edge coupling matrix.

    Strict incidence structure (one +1 and one -1 per column) is not required
    so that alternative couplings can be supplied directly, but every column
    must sum to zero: the consensus reduction used by the reference solvers
    relies on the all-ones vector being in the left kernel.
    """
    a = np.asarray(entries, dtype=float)
    if a.ndim != 2:
        raise GraphError("coupling matrix must be 2-D")
    if n_nodes is not None and a.shape[0] != n_nodes:
        raise GraphError(f"coupling matrix has {a.shape[0]} rows, expected {n_nodes}")
    if not np.all(np.isfinite(a)):
        raise GraphError("coupling matrix has non-finite entries")
    colsums = a.sum(axis=0)
    if a.shape[1] and np.max(np.abs(colsums)) > 1e-12:
        raise GraphError("coupling matrix columns must sum to zero")
    a = a.copy()
    a.setflags(write=False)
    return a


def validate_routing(entries: np.ndarray, n_nodes: int | None = None) -> np.ndarray:
    """Check a routing matrix: |E| x |V|, non-negative, no empty rows."""
    r = np.asarray(entries, dtype=float)
    if r.ndim != 2:
        raise GraphError("routing matrix must be 2-D")
    if n_nodes is not None and r.shape[1] != n_nodes:
        raise GraphError(f"routing matrix has {r.shape[1]} columns, expected {n_nodes}")
    if not np.all(np.isfinite(r)):
        raise GraphError("routing matrix has non-finite entries")
    if np.any(r < 0):
        raise GraphError("routing matrix entries must be non-negative")
    if r.shape[0] == 0 or np.any(np.all(r == 0, axis=1)):
        raise GraphError("every routing matrix row needs at least one nonzero entry")
    r = r.copy()
    r.setflags(write=False)
    return r
