"""Raw structural descriptors: per-node degree statistics, per-edge
betweenness / Jaccard / local degree score, and shortest-path lengths.

All functions take an immutable :class:`~ltp.graph.Graph` and return numpy
arrays. Per-edge arrays follow the canonical ``graph.edges`` order.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from numba import njit

from .graph import Graph

NODE_FEATURES = ("degree", "dn_min", "dn_max", "dn_mean", "dn_std")
FEATURES = NODE_FEATURES + ("sp", "ebc", "ji", "lds")


def ldp_node_features(g: Graph) -> tuple[np.ndarray, ...]:
    """Degree, and min / max / mean / population std of the neighbor degrees.

    Isolated nodes get zeros for all five values.
    """
    n = g.node_count
    deg = g.degrees()
    out = [deg.astype(float)] + [np.zeros(n) for _ in range(4)]
    has = deg > 0
    if not has.any():
        return tuple(out)
    nd = deg[g.neighbors].astype(float)
    # isolated nodes own empty CSR segments, so reduceat over the
    # non-empty starts sees exactly each node's neighbor degrees
    starts = g.offsets[:-1][has]
    k = deg[has]
    mean = np.add.reduceat(nd, starts) / k
    dev = nd - np.repeat(mean, k)
    out[1][has] = np.minimum.reduceat(nd, starts)
    out[2][has] = np.maximum.reduceat(nd, starts)
    out[3][has] = mean
    out[4][has] = np.sqrt(np.add.reduceat(dev * dev, starts) / k)
    return tuple(out)


@njit(cache=True)
def _brandes_edges(offsets, neighbors, arc_edge, n, m):
    ebc = np.zeros(m)
    dist = np.empty(n, np.int64)
    sigma = np.empty(n)
    delta = np.empty(n)
    order = np.empty(n, np.int64)
    for s in range(n):
        dist[:] = -1
        sigma[:] = 0.0
        delta[:] = 0.0
        dist[s] = 0
        sigma[s] = 1.0
        order[0] = s
        head = 0
        tail = 1
        while head < tail:
            v = order[head]
            head += 1
            for k in range(offsets[v], offsets[v + 1]):
                w = neighbors[k]
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    order[tail] = w
                    tail += 1
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
        for i in range(tail - 1, 0, -1):
            w = order[i]
            coeff = (1.0 + delta[w]) / sigma[w]
            for k in range(offsets[w], offsets[w + 1]):
                v = neighbors[k]
                if dist[v] == dist[w] - 1:
                    c = sigma[v] * coeff
                    ebc[arc_edge[k]] += c
                    delta[v] += c
    return ebc


def edge_betweenness(g: Graph) -> np.ndarray:
    """Sum over unordered node pairs ``{s, t}`` other than the edge's own
    endpoints of the fraction of s-t shortest paths using the edge.

    Disconnected pairs contribute nothing. No normalization is applied.
    """
    if g.edge_count == 0:
        return np.zeros(0)
    ebc = _brandes_edges(g.offsets, g.neighbors, g.arc_edge, g.node_count, g.edge_count)
    # each unordered pair is seen from both ends; the endpoint pair itself
    # always contributes exactly 1 through its own edge
    ebc = ebc / 2.0 - 1.0
    return np.maximum(ebc, 0.0)


@njit(cache=True)
def _jaccard_edges(offsets, neighbors, edges):
    m = edges.shape[0]
    out = np.empty(m)
    for e in range(m):
        u = edges[e, 0]
        v = edges[e, 1]
        i, iend = offsets[u], offsets[u + 1]
        j, jend = offsets[v], offsets[v + 1]
        common = 0
        while i < iend and j < jend:
            a = neighbors[i]
            b = neighbors[j]
            if a == b:
                common += 1
                i += 1
                j += 1
            elif a < b:
                i += 1
            else:
                j += 1
        union = (iend - offsets[u]) + (jend - offsets[v]) - common
        out[e] = common / union
    return out


def jaccard_index(g: Graph) -> np.ndarray:
    """``|N(u) & N(v)| / |N(u) | N(v)|`` for every edge, open neighborhoods."""
    if g.edge_count == 0:
        return np.zeros(0)
    return _jaccard_edges(g.offsets, g.neighbors, g.edges)


def neighbor_ranks(g: Graph) -> np.ndarray:
    """1-based rank of each CSR arc ``v -> u`` among the neighbors of ``v``,
    ordered by degree descending, ties by ascending node id."""
    deg = g.degrees()
    src = np.repeat(np.arange(g.node_count), deg)
    order = np.lexsort((g.neighbors, -deg[g.neighbors], src))
    pos = np.empty(len(order), dtype=np.int64)
    pos[order] = np.arange(len(order))
    return pos - g.offsets[src] + 1


def local_degree_score(g: Graph) -> np.ndarray:
    """Per-edge local degree score, the max of the two endpoint-side terms
    ``1 - ln(rank) / ln(degree)``. A degree-1 side scores 1."""
    m = g.edge_count
    if m == 0:
        return np.zeros(0)
    deg = g.degrees()
    src_deg = np.repeat(deg, deg).astype(float)
    rank = neighbor_ranks(g).astype(float)
    side = np.ones(len(rank))
    hub = src_deg > 1
    side[hub] = 1.0 - np.log(rank[hub]) / np.log(src_deg[hub])
    lds = np.zeros(m)
    np.maximum.at(lds, g.arc_edge, side)
    return lds


@njit(cache=True)
def _distance_counts(offsets, neighbors, n):
    counts = np.zeros(max(n, 1), np.int64)
    dist = np.empty(n, np.int64)
    queue = np.empty(n, np.int64)
    for s in range(n):
        dist[:] = -1
        dist[s] = 0
        queue[0] = s
        head = 0
        tail = 1
        while head < tail:
            v = queue[head]
            head += 1
            for k in range(offsets[v], offsets[v + 1]):
                w = neighbors[k]
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue[tail] = w
                    tail += 1
                    if w > s:
                        counts[dist[w]] += 1
    return counts


def shortest_path_multiset(g: Graph) -> np.ndarray:
    """Finite shortest-path lengths over unordered pairs ``s != t``, sorted."""
    if g.node_count < 2:
        return np.zeros(0)
    counts = _distance_counts(g.offsets, g.neighbors, g.node_count)
    return np.repeat(np.arange(len(counts)), counts).astype(float)


def expand_features(features: Iterable[str]) -> tuple[str, ...]:
    """Validate ``features`` and return them in canonical order."""
    wanted = set(features)
    unknown = wanted - set(FEATURES)
    if unknown:
        raise ValueError(f"unknown features {sorted(unknown)}; expected names from {FEATURES}")
    return tuple(f for f in FEATURES if f in wanted)


@dataclass
class DescriptorMatrix:
    """Raw descriptor values of one graph keyed by feature name."""

    values: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, feature: str) -> np.ndarray:
        return self.values[feature]

    @property
    def features(self) -> tuple[str, ...]:
        return expand_features(self.values)

    def to_csv(self, path) -> None:
        """Debug dump: one column per feature in canonical order, ragged
        columns padded with empty cells."""
        cols = self.features
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in itertools.zip_longest(*(self.values[c].tolist() for c in cols), fillvalue=""):
                w.writerow([repr(x) if isinstance(x, float) else x for x in row])


def compute_descriptors(g: Graph, features: Iterable[str] = FEATURES) -> DescriptorMatrix:
    feats = expand_features(features)
    values: dict[str, np.ndarray] = {}
    if any(f in NODE_FEATURES for f in feats):
        for name, arr in zip(NODE_FEATURES, ldp_node_features(g)):
            if name in feats:
                values[name] = arr
    if "sp" in feats:
        values["sp"] = shortest_path_multiset(g)
    if "ebc" in feats:
        values["ebc"] = edge_betweenness(g)
    if "ji" in feats:
        values["ji"] = jaccard_index(g)
    if "lds" in feats:
        values["lds"] = local_degree_score(g)
    return DescriptorMatrix({f: values[f] for f in feats})
