"""Histogram / EDF aggregation of raw descriptors into fixed-length graph
embeddings, plus CSV and binary export of embedding matrices.

Binary layout (``.bin``): two little-endian uint64 values ``rows, cols``
followed by ``rows * cols`` little-endian float64 values in row-major order.
"""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from joblib import Parallel, delayed

from .descriptors import FEATURES, NODE_FEATURES, DescriptorMatrix, compute_descriptors
from .graph import Dataset, Graph

AGGREGATIONS = ("histogram", "edf")
NORMALIZATIONS = ("none", "graph", "dataset")
FEATURE_GROUPS = {
    "ldp5": NODE_FEATURES,
    "sp": ("sp",),
    "ebc": ("ebc",),
    "ji": ("ji",),
    "lds": ("lds",),
}
FEATURE_SETS = {
    "ldp": ("ldp5",),
    "ltp": ("ldp5", "ebc", "ji", "lds"),
}
BIN_GRID = (30, 50, 70, 100)


def parse_feature_set(text: str | Sequence[str]) -> tuple[str, ...]:
    """Accept ``"ltp"``, ``"ldp+sp"``, ``"ldp5,ebc"`` or a sequence of group names."""
    parts = text.replace("+", ",").split(",") if isinstance(text, str) else list(text)
    groups: list[str] = []
    for part in (p.strip().lower() for p in parts):
        if not part:
            continue
        if part in FEATURE_SETS:
            groups.extend(FEATURE_SETS[part])
        elif part in FEATURE_GROUPS:
            groups.append(part)
        else:
            raise ValueError(
                f"unknown feature group {part!r}; use {sorted(FEATURE_SETS)} or {sorted(FEATURE_GROUPS)}"
            )
    if not groups:
        raise ValueError("feature set must not be empty")
    return tuple(g for g in FEATURE_GROUPS if g in groups)


@dataclass(frozen=True)
class EmbeddingConfig:
    bins: int = 50
    aggregation: str = "histogram"
    normalization: str = "none"
    log_scale: bool = False
    feature_set: tuple[str, ...] = FEATURE_SETS["ltp"]

    def __post_init__(self):
        if isinstance(self.bins, bool) or int(self.bins) != self.bins or self.bins < 1:
            raise ValueError(f"bins must be a positive integer, got {self.bins!r}")
        object.__setattr__(self, "bins", int(self.bins))
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}, got {self.normalization!r}")
        object.__setattr__(self, "log_scale", bool(self.log_scale))
        object.__setattr__(self, "feature_set", parse_feature_set(self.feature_set))

    @property
    def features(self) -> tuple[str, ...]:
        """Expanded per-feature names in canonical order."""
        names = {f for g in self.feature_set for f in FEATURE_GROUPS[g]}
        return tuple(f for f in FEATURES if f in names)

    @property
    def dim(self) -> int:
        return len(self.features) * self.bins

    def replace(self, **changes) -> "EmbeddingConfig":
        return EmbeddingConfig(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["feature_set"] = list(self.feature_set)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "EmbeddingConfig":
        return cls(**{**d, "feature_set": tuple(d["feature_set"])})


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    config: EmbeddingConfig


def aggregate(values, bins: int, aggregation: str = "histogram", value_range=None) -> np.ndarray:
    """Density histogram (or its cumulative EDF) of ``values`` over
    ``bins`` equal-width bins spanning ``value_range``.

    The last bin is right-inclusive and values outside the range are counted
    in the nearest end bin. A zero-width range puts all mass in bin 0; an
    empty input gives zeros.
    """
    if isinstance(bins, bool) or int(bins) != bins or bins < 1:
        raise ValueError(f"bins must be a positive integer, got {bins!r}")
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"aggregation must be one of {AGGREGATIONS}, got {aggregation!r}")
    x = np.asarray(values, dtype=float).ravel()
    if np.isnan(x).any():
        raise ValueError("values contain NaN")
    bins = int(bins)
    if x.size == 0:
        return np.zeros(bins)
    lo, hi = (float(x.min()), float(x.max())) if value_range is None else map(float, value_range)
    if lo > hi:
        raise ValueError(f"invalid range [{lo}, {hi}]")
    if hi > lo:
        t = (x - lo) / (hi - lo) * bins
        # rounding noise must not move a value that sits on a bin edge
        edge = np.round(t)
        t = np.where(np.abs(t - edge) < 1e-9, edge, t)
        idx = np.floor(t).astype(np.int64)
        np.clip(idx, 0, bins - 1, out=idx)
    else:
        idx = np.zeros(x.size, dtype=np.int64)
    hist = np.bincount(idx, minlength=bins) / x.size
    return np.cumsum(hist) if aggregation == "edf" else hist


def _scaled(values: np.ndarray, log_scale: bool) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    return np.log1p(x) if log_scale else x


def dataset_maxima(
    descriptors: Iterable[DescriptorMatrix | Mapping[str, np.ndarray]], config: EmbeddingConfig
) -> dict[str, float]:
    """Per-feature maximum over a collection of graphs, after the log map."""
    maxima = {f: 0.0 for f in config.features}
    for desc in descriptors:
        for f in config.features:
            x = _scaled(desc[f], config.log_scale)
            if x.size:
                maxima[f] = max(maxima[f], float(x.max()))
    return maxima


def embed_values(
    descriptors: DescriptorMatrix | Mapping[str, np.ndarray],
    config: EmbeddingConfig,
    dataset_stats: Mapping[str, float] | None = None,
) -> np.ndarray:
    """Embed already-computed raw descriptor values of one graph."""
    if config.normalization == "dataset" and dataset_stats is None:
        raise ValueError("dataset normalization needs dataset_stats (per-feature maxima)")
    blocks = []
    for f in config.features:
        x = _scaled(descriptors[f], config.log_scale)
        if config.normalization == "none":
            rng = None
        else:
            top = float(x.max()) if config.normalization == "graph" and x.size else 0.0
            if config.normalization == "dataset":
                top = float(dataset_stats[f])
            if top > 0:
                x = x / top
            rng = (0.0, 1.0)
        blocks.append(aggregate(x, config.bins, config.aggregation, rng))
    return np.concatenate(blocks)


def embed_graph(
    g: Graph, config: EmbeddingConfig, dataset_stats: Mapping[str, float] | None = None
) -> EmbeddingVector:
    if config.normalization == "dataset" and dataset_stats is None:
        raise ValueError("dataset normalization needs dataset_stats (per-feature maxima)")
    desc = compute_descriptors(g, config.features)
    return EmbeddingVector(embed_values(desc, config, dataset_stats), config)


def _descriptor_batch(graphs: Sequence[Graph], features: tuple[str, ...]) -> list[DescriptorMatrix]:
    return [compute_descriptors(g, features) for g in graphs]


def compute_all_descriptors(
    graphs: Sequence[Graph], features: Iterable[str], n_jobs: int = 1
) -> list[DescriptorMatrix]:
    """Descriptors for every graph, in input order, on ``n_jobs`` workers."""
    feats = tuple(features)
    if n_jobs == 1 or len(graphs) < 2:
        return _descriptor_batch(graphs, feats)
    n_workers = os.cpu_count() if n_jobs in (-1, None) else n_jobs
    chunks = np.array_split(np.arange(len(graphs)), min(len(graphs), 4 * n_workers))
    parts = Parallel(n_jobs=n_workers)(
        delayed(_descriptor_batch)([graphs[i] for i in c], feats) for c in chunks if len(c)
    )
    return [d for part in parts for d in part]


def embed_descriptors(
    descriptors: Sequence[DescriptorMatrix],
    config: EmbeddingConfig,
    dataset_stats: Mapping[str, float] | None = None,
) -> np.ndarray:
    if config.normalization == "dataset" and dataset_stats is None:
        dataset_stats = dataset_maxima(descriptors, config)
    X = np.zeros((len(descriptors), config.dim))
    for i, desc in enumerate(descriptors):
        X[i] = embed_values(desc, config, dataset_stats)
    return X


def embed_dataset(d: Dataset, config: EmbeddingConfig, n_jobs: int = 1) -> np.ndarray:
    """``len(d) x config.dim`` embedding matrix, rows in dataset order.

    Dataset normalization takes its maxima from ``d`` itself; use
    :func:`embed_descriptors` with explicit stats to embed held-out graphs.
    """
    desc = compute_all_descriptors(d.graphs, config.features, n_jobs)
    return embed_descriptors(desc, config)


def column_names(config: EmbeddingConfig) -> list[str]:
    return [f"{f}:{b}" for f in config.features for b in range(config.bins)]


def write_embedding_csv(path, X: np.ndarray, columns: Sequence[str]) -> None:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(columns):
        raise ValueError("column names do not match matrix width")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        w.writerows([repr(v) for v in row] for row in X.tolist())


def read_embedding_csv(path) -> tuple[np.ndarray, list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    X = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(rows[0]))
    return X, rows[0]


_BIN_HEADER = struct.Struct("<QQ")


def write_embedding_bin(path, X: np.ndarray) -> None:
    X = np.ascontiguousarray(X, dtype="<f8")
    if X.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    with open(path, "wb") as fh:
        fh.write(_BIN_HEADER.pack(*X.shape))
        fh.write(X.tobytes(order="C"))


def read_embedding_bin(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    rows, cols = _BIN_HEADER.unpack_from(buf)
    data = np.frombuffer(buf, dtype="<f8", offset=_BIN_HEADER.size)
    if data.size != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} values, found {data.size}")
    return data.reshape(rows, cols).astype(float)
