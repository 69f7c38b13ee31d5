"""Connectivity graphs over node indices."""

from dataclasses import dataclass, field

import numpy as np

from .errors import TopologyError


def _canonical_edges(edges):
    out = set()
    for e in edges:
        i, j = int(e[0]), int(e[1])
        if i == j:
            raise TopologyError(f"self-loop on node {i}")
        out.add((min(i, j), max(i, j)))
    return frozenset(out)


@dataclass(frozen=True)
class Topology:
    """Undirected, connected graph on nodes 0..n_nodes-1."""

    n_nodes: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n_nodes < 2:
            raise TopologyError(f"need at least 2 nodes, got {self.n_nodes}")
        edges = _canonical_edges(self.edges)
        object.__setattr__(self, "edges", edges)
        for i, j in edges:
            if not (0 <= i < self.n_nodes and 0 <= j < self.n_nodes):
                raise TopologyError(f"edge ({i},{j}) out of range for {self.n_nodes} nodes")
        if not self._connected():
            raise TopologyError("graph is not connected")

    def _connected(self):
        if not self.edges:
            return False
        adj = {k: set() for k in range(self.n_nodes)}
        for i, j in self.edges:
            adj[i].add(j)
            adj[j].add(i)
        seen = {0}
        stack = [0]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == self.n_nodes

    def neighbors(self, k):
        return tuple(sorted(j if i == k else i for i, j in self.edges if k in (i, j)))

    def degree(self, k):
        return len(self.neighbors(k))

    def has_edge(self, i, j):
        return (min(i, j), max(i, j)) in self.edges

    def sorted_edges(self):
        return tuple(sorted(self.edges))


def build_topology(kind, positions=None, *, n_nodes=None, k=None, edges=None):
    """Construct a Topology.

    kind: "full" (all pairs), "k_nearest" (each node linked to its k
    geometrically nearest peers, symmetrized), or "explicit" (given edges).
    positions are required for k_nearest and may supply n_nodes otherwise.
    """
    if positions is not None:
        positions = np.asarray(positions, dtype=float)
        if n_nodes is None:
            n_nodes = positions.shape[0]
    if n_nodes is None:
        raise TopologyError("n_nodes or positions required")
    if n_nodes < 2:
        raise TopologyError(f"need at least 2 nodes, got {n_nodes}")

    if kind == "full":
        pairs = [(i, j) for i in range(n_nodes) for j in range(i + 1, n_nodes)]
        return Topology(n_nodes, frozenset(pairs))
    if kind == "k_nearest":
        if positions is None or k is None:
            raise TopologyError("k_nearest needs positions and k")
        if not (1 <= k < n_nodes):
            raise TopologyError(f"k must be in [1, {n_nodes - 1}], got {k}")
        diffs = positions[:, None, :] - positions[None, :, :]
        dist = np.sqrt((diffs ** 2).sum(axis=2))
        pairs = set()
        for i in range(n_nodes):
            order = np.lexsort((np.arange(n_nodes), dist[i]))
            picked = [j for j in order if j != i][:k]
            for j in picked:
                pairs.add((min(i, j), max(i, j)))
        return Topology(n_nodes, frozenset(pairs))
    if kind == "explicit":
        if edges is None:
            raise TopologyError("explicit topology needs edges")
        return Topology(n_nodes, _canonical_edges(edges))
    raise TopologyError(f"unknown topology kind {kind!r}")
