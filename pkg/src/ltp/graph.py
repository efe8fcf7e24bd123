"""Graph data model, TUDataset ingestion and synthetic graph generation.

Graphs are stored in compressed sparse row (CSR) form: ``offsets`` has
``node_count + 1`` entries and ``neighbors[offsets[v]:offsets[v + 1]]`` is the
sorted neighbor list of ``v``. Every undirected edge ``(u, v)`` with ``u < v``
also has a position in the canonical, lexicographically sorted ``edges``
array; ``arc_edge`` maps each CSR arc back to that position so per-edge
descriptors can be accumulated from traversals.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd


class GraphFormatError(ValueError):
    """Raised when dataset files are missing or malformed."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable undirected simple graph in CSR form.

    Build instances with :meth:`from_edges`, which drops self-loops and
    merges duplicate or reversed edges.
    """

    node_count: int
    offsets: np.ndarray
    neighbors: np.ndarray
    edges: np.ndarray
    arc_edge: np.ndarray = field(repr=False)

    @classmethod
    def from_edges(cls, node_count: int, edges) -> "Graph":
        node_count = int(node_count)
        if node_count < 0:
            raise ValueError(f"node_count must be non-negative, got {node_count}")
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= node_count):
            raise ValueError("edge endpoint out of range")
        e = e[e[:, 0] != e[:, 1]]
        e = np.sort(e, axis=1)
        e = np.unique(e, axis=0) if len(e) else e.reshape(0, 2)
        m = len(e)

        # arcs in both directions, sorted by (source, target) -> CSR
        src = np.concatenate([e[:, 0], e[:, 1]])
        dst = np.concatenate([e[:, 1], e[:, 0]])
        eid = np.concatenate([np.arange(m), np.arange(m)])
        order = np.lexsort((dst, src))
        src, dst, eid = src[order], dst[order], eid[order]
        offsets = np.zeros(node_count + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=node_count), out=offsets[1:])
        return cls(
            node_count=node_count,
            offsets=_readonly(offsets),
            neighbors=_readonly(dst.astype(np.int64)),
            edges=_readonly(e.astype(np.int64)),
            arc_edge=_readonly(eid.astype(np.int64)),
        )

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def degrees(self) -> np.ndarray:
        return np.diff(self.offsets)

    def degree(self, v: int) -> int:
        return int(self.offsets[v + 1] - self.offsets[v])

    def neighbors_of(self, v: int) -> np.ndarray:
        return self.neighbors[self.offsets[v] : self.offsets[v + 1]]

    def to_networkx(self):
        import networkx as nx

        g = nx.Graph()
        g.add_nodes_from(range(self.node_count))
        g.add_edges_from(map(tuple, self.edges.tolist()))
        return g

    def relabel(self, permutation: Sequence[int]) -> "Graph":
        """Return the graph with node ``v`` renamed to ``permutation[v]``."""
        p = np.asarray(permutation, dtype=np.int64)
        if sorted(p.tolist()) != list(range(self.node_count)):
            raise ValueError("not a permutation of the node ids")
        return Graph.from_edges(self.node_count, p[self.edges])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return self.node_count == other.node_count and np.array_equal(self.edges, other.edges)

    def __hash__(self) -> int:
        return hash((self.node_count, self.edges.tobytes()))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered graphs with contiguous integer class labels."""

    name: str
    graphs: tuple[Graph, ...]
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "graphs", tuple(self.graphs))
        object.__setattr__(self, "labels", _readonly(labels.copy()))
        if len(self.graphs) != len(labels):
            raise ValueError(f"{len(self.graphs)} graphs but {len(labels)} labels")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        present = np.unique(labels)
        if len(labels) and (present.min() < 0 or present.max() >= self.num_classes):
            raise ValueError("labels outside [0, num_classes)")
        if len(present) != self.num_classes:
            raise ValueError("every class must appear at least once")

    def __len__(self) -> int:
        return len(self.graphs)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.name == other.name
            and self.num_classes == other.num_classes
            and np.array_equal(self.labels, other.labels)
            and self.graphs == other.graphs
        )

    def subset(self, indices) -> tuple[list[Graph], np.ndarray]:
        idx = np.asarray(indices, dtype=np.int64)
        return [self.graphs[i] for i in idx], self.labels[idx]

    def statistics(self) -> dict:
        nodes = np.array([g.node_count for g in self.graphs], dtype=float)
        edges = np.array([g.edge_count for g in self.graphs], dtype=float)
        return {
            "name": self.name,
            "graphs": len(self.graphs),
            "avg_nodes": float(nodes.mean()) if len(nodes) else 0.0,
            "avg_edges": float(edges.mean()) if len(edges) else 0.0,
            "classes": self.num_classes,
        }


def _read_int_column(path: Path, columns: int) -> np.ndarray:
    if not path.is_file():
        raise GraphFormatError(f"missing file: {path}")
    if path.stat().st_size == 0:
        return np.zeros((0, columns), dtype=np.int64)
    try:
        frame = pd.read_csv(
            path, header=None, sep=",", skipinitialspace=True, dtype=np.int64, engine="c"
        )
    except (ValueError, pd.errors.ParserError) as exc:
        raise GraphFormatError(f"{path}: {exc}") from exc
    if frame.shape[1] != columns:
        raise GraphFormatError(f"{path}: expected {columns} column(s), got {frame.shape[1]}")
    return frame.to_numpy()


def tudataset_files(directory: str | os.PathLike, name: str) -> list[Path]:
    d = Path(directory)
    return [d / f"{name}_{suffix}.txt" for suffix in ("A", "graph_indicator", "graph_labels")]


def detect_name(directory: str | os.PathLike) -> str:
    """Infer the dataset name from the single ``*_A.txt`` file in ``directory``."""
    found = sorted(Path(directory).glob("*_A.txt"))
    if len(found) != 1:
        raise GraphFormatError(
            f"cannot infer dataset name in {directory}: found {len(found)} *_A.txt files"
        )
    return found[0].name[: -len("_A.txt")]


def parse_tudataset(directory: str | os.PathLike, name: str | None = None) -> Dataset:
    """Load a TUDataset folder.

    Node and edge attribute files are ignored. Raw labels are remapped to
    ``0..C-1`` by ascending raw value.
    """
    if name is None:
        name = detect_name(directory)
    a_path, ind_path, lab_path = tudataset_files(directory, name)
    arcs = _read_int_column(a_path, 2)
    indicator = _read_int_column(ind_path, 1)[:, 0]
    raw_labels = _read_int_column(lab_path, 1)[:, 0]

    n_nodes = len(indicator)
    if arcs.size and (arcs.min() < 1 or arcs.max() > n_nodes):
        bad = arcs[(arcs < 1) | (arcs > n_nodes)][0]
        raise GraphFormatError(f"node id {bad} out of range 1..{n_nodes}")

    codes, graph_ids = pd.factorize(indicator)
    n_graphs = len(graph_ids)
    if n_graphs != len(raw_labels):
        raise GraphFormatError(f"{n_graphs} graphs in indicator but {len(raw_labels)} labels")
    if n_graphs and (graph_ids.min() < 1 or graph_ids.max() > n_graphs):
        raise GraphFormatError("graph ids must lie in 1..number of graphs")

    local = pd.Series(codes).groupby(codes).cumcount().to_numpy()
    sizes = np.bincount(codes, minlength=n_graphs)

    a = arcs[:, 0] - 1
    b = arcs[:, 1] - 1
    crossing = codes[a] != codes[b]
    if crossing.any():
        i = int(np.flatnonzero(crossing)[0])
        raise GraphFormatError(
            f"edge ({arcs[i, 0]}, {arcs[i, 1]}) crosses graphs "
            f"{graph_ids[codes[a[i]]]} and {graph_ids[codes[b[i]]]}"
        )
    edge_graph = codes[a]
    order = np.argsort(edge_graph, kind="stable")
    local_pairs = np.stack([local[a], local[b]], axis=1)[order]
    bounds = np.searchsorted(edge_graph[order], np.arange(n_graphs + 1))

    graphs = [
        Graph.from_edges(int(sizes[g]), local_pairs[bounds[g] : bounds[g + 1]])
        for g in range(n_graphs)
    ]
    raw = raw_labels[np.asarray(graph_ids) - 1]
    classes, labels = np.unique(raw, return_inverse=True)
    return Dataset(name=name, graphs=tuple(graphs), labels=labels, num_classes=len(classes))


def write_tudataset(dataset: Dataset, directory: str | os.PathLike, name: str | None = None) -> None:
    """Write ``dataset`` in TUDataset text format, edges listed in both directions."""
    name = name or dataset.name
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    a_path, ind_path, lab_path = tudataset_files(d, name)
    base = 1
    with open(a_path, "w") as fa, open(ind_path, "w") as fi:
        for gid, g in enumerate(dataset.graphs, start=1):
            if g.node_count == 0:
                raise ValueError("graphs without nodes cannot be written in TUDataset format")
            for u, v in g.edges.tolist():
                fa.write(f"{u + base}, {v + base}\n{v + base}, {u + base}\n")
            fi.write(f"{gid}\n" * g.node_count)
            base += g.node_count
    with open(lab_path, "w") as fl:
        fl.writelines(f"{int(y)}\n" for y in dataset.labels)


SYNTHETIC_KINDS = ("path", "cycle", "star", "complete", "erdos_renyi")


def generate_synthetic(kind: str, size: int, p: float | None = None, seed: int = 0) -> Graph:
    """Deterministic synthetic graph on ``size`` nodes.

    ``star`` puts node 0 at the center with ``size - 1`` leaves. ``p`` is the
    edge probability for ``erdos_renyi`` and is ignored otherwise.
    """
    if kind not in SYNTHETIC_KINDS:
        raise ValueError(f"unknown graph kind {kind!r}; expected one of {SYNTHETIC_KINDS}")
    if int(size) != size or size < 1:
        raise ValueError(f"size must be a positive integer, got {size}")
    n = int(size)
    idx = np.arange(n)
    if kind == "path":
        edges = np.stack([idx[:-1], idx[1:]], axis=1)
    elif kind == "cycle":
        edges = np.stack([idx, (idx + 1) % n], axis=1) if n > 2 else np.stack([idx[:-1], idx[1:]], axis=1)
    elif kind == "star":
        edges = np.stack([np.zeros(n - 1, dtype=np.int64), idx[1:]], axis=1)
    elif kind == "complete":
        edges = np.stack(np.triu_indices(n, k=1), axis=1)
    else:
        if p is None or not 0.0 <= p <= 1.0:
            raise ValueError(f"erdos_renyi needs probability p in [0, 1], got {p}")
        rng = np.random.default_rng(seed)
        iu = np.triu_indices(n, k=1)
        keep = rng.random(len(iu[0])) < p
        edges = np.stack([iu[0][keep], iu[1][keep]], axis=1)
    return Graph.from_edges(n, edges)
