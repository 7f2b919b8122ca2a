"""Graph snapshots, time-varying sequences and the algebra built on them."""

from __future__ import annotations

import enum
import functools
import json
import math
from collections import deque
from dataclasses import dataclass
from importlib import resources

import numpy as np


class SequenceKind(str, enum.Enum):
    STATIC = "static"
    TV_UNDIRECTED = "tv_undirected"
    TV_DIRECTED = "tv_directed"


@dataclass(frozen=True)
class GraphSnapshot:
    """A graph on nodes ``0 .. num_nodes - 1``.

    Undirected edges are stored as ``(i, j)`` with ``i < j``. Directed edges are
    arcs ``(src, dst)``. Self-edges are never listed; for directed graphs the
    self-loop is implicit in the out-degree.
    """

    num_nodes: int
    edges: tuple
    directed: bool = False

    def __post_init__(self):
        edges = tuple((int(i), int(j)) for i, j in self.edges)
        object.__setattr__(self, "edges", edges)
        if self.num_nodes < 1:
            raise ValueError("graph needs at least one node")
        seen = set()
        for i, j in edges:
            if not (0 <= i < self.num_nodes and 0 <= j < self.num_nodes):
                raise ValueError(f"edge {(i, j)} out of range")
            if i == j:
                raise ValueError(f"self-edge {(i, j)} not allowed")
            if not self.directed and i > j:
                raise ValueError(f"undirected edge {(i, j)} must satisfy i < j")
            if (i, j) in seen:
                raise ValueError(f"duplicate edge {(i, j)}")
            seen.add((i, j))

    @classmethod
    def undirected(cls, num_nodes, edges):
        """Build from unordered pairs, normalizing each to ``(min, max)``."""
        pairs = sorted({(min(i, j), max(i, j)) for i, j in edges})
        return cls(num_nodes, tuple(pairs), directed=False)

    @classmethod
    def digraph(cls, num_nodes, arcs):
        return cls(num_nodes, tuple(sorted(set(map(tuple, arcs)))), directed=True)

    def subgraph(self, edges):
        """Snapshot on a subset of this graph's edges, skipping re-validation."""
        g = object.__new__(GraphSnapshot)
        object.__setattr__(g, "num_nodes", self.num_nodes)
        object.__setattr__(g, "edges", tuple(edges))
        object.__setattr__(g, "directed", self.directed)
        return g

    @functools.cached_property
    def edge_array(self):
        return np.array(self.edges, dtype=int).reshape(-1, 2)

    @property
    def num_edges(self):
        return len(self.edges)

    @functools.cached_property
    def neighbors(self):
        if self.directed:
            raise ValueError("use in_neighbors/out_neighbors on a directed graph")
        nbrs = [[] for _ in range(self.num_nodes)]
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        return tuple(tuple(sorted(v)) for v in nbrs)

    @functools.cached_property
    def out_neighbors(self):
        """Out-neighbors, each list including the node itself."""
        if not self.directed:
            return tuple((i,) + nb for i, nb in enumerate(self.neighbors))
        nbrs = [[i] for i in range(self.num_nodes)]
        for i, j in self.edges:
            nbrs[i].append(j)
        return tuple(tuple(sorted(v)) for v in nbrs)

    @functools.cached_property
    def in_neighbors(self):
        """In-neighbors, each list including the node itself."""
        if not self.directed:
            return self.out_neighbors
        nbrs = [[i] for i in range(self.num_nodes)]
        for i, j in self.edges:
            nbrs[j].append(i)
        return tuple(tuple(sorted(v)) for v in nbrs)

    @functools.cached_property
    def degrees(self):
        """``|N_i|`` for undirected graphs, out-degree counting self for directed."""
        e = self.edge_array
        if self.directed:
            return 1 + np.bincount(e[:, 0], minlength=self.num_nodes)
        return np.bincount(e.ravel(), minlength=self.num_nodes)

    def to_dict(self):
        return {"num_nodes": self.num_nodes, "directed": self.directed,
                "edges": [list(e) for e in self.edges]}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["num_nodes"]), tuple(map(tuple, d["edges"])), bool(d["directed"]))


def _reachable(num_nodes, adjacency, start=0):
    seen = [False] * num_nodes
    seen[start] = True
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in adjacency[u]:
            if not seen[v]:
                seen[v] = True
                queue.append(v)
    return all(seen)


def is_connected(g: GraphSnapshot) -> bool:
    if g.directed:
        raise ValueError("use is_strongly_connected for directed graphs")
    return _reachable(g.num_nodes, g.neighbors)


def is_strongly_connected(g: GraphSnapshot) -> bool:
    if not g.directed:
        return is_connected(g)
    # strongly connected iff node 0 reaches everyone forward and backward
    return (_reachable(g.num_nodes, g.out_neighbors)
            and _reachable(g.num_nodes, g.in_neighbors))


def generate_small_world(num_nodes, num_edges, seed) -> GraphSnapshot:
    """Random Hamiltonian cycle plus uniformly chosen extra chords."""
    max_edges = num_nodes * (num_nodes - 1) // 2
    if num_nodes < 3 or not (num_nodes <= num_edges <= max_edges):
        raise ValueError(
            f"cannot place {num_edges} edges on a cycle over {num_nodes} nodes")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(num_nodes)
    cycle = {tuple(sorted((int(perm[k]), int(perm[(k + 1) % num_nodes]))))
             for k in range(num_nodes)}
    rest = [(i, j) for i in range(num_nodes) for j in range(i + 1, num_nodes)
            if (i, j) not in cycle]
    pick = rng.choice(len(rest), size=num_edges - num_nodes, replace=False)
    chords = [rest[int(t)] for t in pick]
    return GraphSnapshot.undirected(num_nodes, list(cycle) + chords)


def fig7_fixture() -> GraphSnapshot:
    """The bundled 12-node strongly connected digraph."""
    raw = json.loads(resources.files("dpda").joinpath("data/fig7.json").read_text())
    base = raw["index_base"]
    g = GraphSnapshot.digraph(raw["num_nodes"], [(i - base, j - base) for i, j in raw["arcs"]])
    assert is_strongly_connected(g)
    return g


@dataclass(frozen=True)
class GraphSequence:
    """Static graph or M-periodic edge sampling of a base graph.

    Inside each block of ``period`` times, all but the last time carry
    independent uniform samples of ``ceil(keep_prob * |E0|)`` base edges, and
    the last time carries every base edge the block has not used yet.
    """

    base: GraphSnapshot
    period: int = 1
    keep_prob: float = 1.0
    seed: int = 0
    kind: SequenceKind = SequenceKind.STATIC

    def __post_init__(self):
        object.__setattr__(self, "kind", SequenceKind(self.kind))
        if self.period < 1:
            raise ValueError("period must be at least 1")
        if not 0.0 <= self.keep_prob <= 1.0:
            raise ValueError("keep_prob must lie in [0, 1]")
        if (self.kind is SequenceKind.TV_DIRECTED) != self.base.directed:
            raise ValueError(f"{self.kind.value} sequence does not match base graph orientation")

    @property
    def num_nodes(self):
        return self.base.num_nodes

    @property
    def directed(self):
        return self.base.directed

    @property
    def sample_size(self):
        # guard against p*|E| landing a hair above an integer
        return min(self.base.num_edges,
                   math.ceil(self.keep_prob * self.base.num_edges - 1e-9))

    def block_masks(self, b):
        """Boolean ``(period, |E0|)`` array: which base edges are up at each time of block ``b``."""
        E = self.base.num_edges
        if self.kind is SequenceKind.STATIC:
            return np.ones((self.period, E), dtype=bool)
        rng = np.random.default_rng([int(self.seed), int(b)])
        masks = np.zeros((self.period, E), dtype=bool)
        if self.period > 1:
            # the first sample_size entries of a random permutation per row
            order = np.argsort(rng.random((self.period - 1, E)), axis=1)[:, :self.sample_size]
            np.put_along_axis(masks[:-1], order, True, axis=1)
        masks[-1] = ~masks[:-1].any(axis=0)
        return masks

    def block_indices(self, b):
        """Indices into ``base.edges`` for each time of block ``b`` (0-based)."""
        return tuple(np.flatnonzero(m) for m in self.block_masks(b))

    @functools.lru_cache(maxsize=64)
    def block(self, b):
        """The ``period`` snapshots of block ``b``."""
        if self.kind is SequenceKind.STATIC:
            return (self.base,) * self.period
        edges = self.base.edges
        return tuple(self.base.subgraph(edges[int(t)] for t in idx)
                     for idx in self.block_indices(b))

    def snapshot(self, t):
        if t < 0:
            raise ValueError("time index must be nonnegative")
        if self.kind is SequenceKind.STATIC:
            return self.base
        b, r = divmod(int(t), self.period)
        return self.block(b)[r]

    def to_dict(self):
        return {"base": self.base.to_dict(), "period": self.period,
                "keep_prob": self.keep_prob, "seed": self.seed, "kind": self.kind.value}

    @classmethod
    def from_dict(cls, d):
        return cls(GraphSnapshot.from_dict(d["base"]), int(d["period"]),
                   float(d["keep_prob"]), int(d["seed"]), SequenceKind(d["kind"]))


def sample_sequence(seq: GraphSequence, t) -> GraphSnapshot:
    return seq.snapshot(t)


def laplacian(g: GraphSnapshot) -> np.ndarray:
    if g.directed:
        raise ValueError("Laplacian is defined here for undirected graphs only")
    omega = np.zeros((g.num_nodes, g.num_nodes))
    for i, j in g.edges:
        omega[i, j] = omega[j, i] = -1.0
    omega[np.diag_indices(g.num_nodes)] = g.degrees
    return omega


def incidence(g: GraphSnapshot) -> np.ndarray:
    """Edge-node incidence, +1 at the smaller endpoint and -1 at the larger."""
    if g.directed:
        raise ValueError("incidence is defined here for undirected graphs only")
    H = np.zeros((g.num_edges, g.num_nodes))
    for e, (i, j) in enumerate(g.edges):
        H[e, i] = 1.0
        H[e, j] = -1.0
    return H


def lambda2_weighted(W) -> float:
    """Smallest strictly positive eigenvalue of a symmetric PSD Laplacian-like matrix."""
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1] or not np.allclose(W, W.T, rtol=0, atol=1e-12):
        raise ValueError("W must be a symmetric square matrix")
    eig = np.linalg.eigvalsh(W)
    cutoff = 1e-10 * max(np.abs(eig).max(), 1e-300)
    pos = eig[eig > cutoff]
    if pos.size == 0:
        raise ValueError("W has no positive eigenvalue")
    return float(pos[0])
