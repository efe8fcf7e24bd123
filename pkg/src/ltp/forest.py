"""Random Forest of fully grown CART trees with Gini splits.

Each tree is trained on a bootstrap sample of ``n`` rows. At every node
``ceil(sqrt(d))`` candidate features are drawn without replacement; if none
of them yields a split with positive Gini decrease, further features are
drawn in the same random order until one does or all are exhausted.

Tree ``i`` draws all of its randomness from ``numpy.random.default_rng(
tree_seed(seed, i))``, where :func:`tree_seed` is the splitmix64 finalizer
applied to ``seed XOR (i + 1) * 0x9E3779B97F4A7C15`` (mod 2**64). Training
is therefore identical for any number of workers.

Model files: header ``<4sHIIIQ`` = magic ``b"LTPF"``, format version,
n_trees, n_features, n_classes, seed; then per tree a ``uint32`` node count
followed by the nodes in preorder. An internal node is ``int32 feature,
float64 threshold`` (left subtree follows immediately, then right); a leaf
is ``int32 -1`` followed by ``n_classes`` ``uint32`` class counts. All
values little-endian.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MAGIC = b"LTPF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIIIQ")
_GAIN_EPS = 1e-12


def splitmix64(x: int) -> int:
    z = (x + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def tree_seed(seed: int, index: int) -> int:
    return splitmix64((seed & MASK64) ^ (((index + 1) * GOLDEN) & MASK64))


def gini_impurity(class_counts) -> float:
    counts = np.asarray(class_counts, dtype=float)
    if counts.ndim != 1 or (counts < 0).any():
        raise ValueError("class counts must be a non-negative vector")
    total = counts.sum()
    if total <= 0:
        raise ValueError("gini impurity is undefined for an empty node")
    p = counts / total
    return float(1.0 - np.dot(p, p))


def max_features_for(d: int) -> int:
    return max(1, min(d, math.ceil(math.sqrt(d))))


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    seed: int = 0

    def __post_init__(self):
        if int(self.n_trees) != self.n_trees or self.n_trees < 1:
            raise ValueError(f"n_trees must be a positive integer, got {self.n_trees!r}")

    def to_dict(self) -> dict:
        return {"n_trees": self.n_trees, "seed": self.seed, "max_features": "ceil(sqrt(d))",
                "bootstrap": True, "criterion": "gini"}


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat binary tree; node 0 is the root and ids follow preorder."""

    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, n_classes)

    @property
    def node_count(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.feature[node] >= 0
        while active.any():
            r = rows[active]
            n = node[r]
            go_left = X[r, self.feature[n]] <= self.threshold[n]
            node[r] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        # argmax takes the lowest class index on ties
        return np.argmax(self.counts[self.apply(X)], axis=1)


def _best_split(Xn: np.ndarray, yn: np.ndarray, counts: np.ndarray, feats: np.ndarray):
    m = len(yn)
    n_classes = len(counts)
    order = np.argsort(Xn, axis=0, kind="stable")
    vals = np.take_along_axis(Xn, order, axis=0)
    onehot = yn[order][..., None] == np.arange(n_classes)
    left = np.cumsum(onehot, axis=0, dtype=np.int64)[:-1]
    right = counts - left
    n_left = np.arange(1, m, dtype=float)[:, None]
    score = (left * left).sum(axis=2) / n_left + (right * right).sum(axis=2) / (m - n_left)
    score[vals[:-1] >= vals[1:]] = -np.inf
    pos, col = np.unravel_index(np.argmax(score), score.shape)
    gain = score[pos, col] / m - float(counts @ counts) / (m * m)
    if not gain > _GAIN_EPS:
        return None
    lo, hi = vals[pos, col], vals[pos + 1, col]
    thr = lo / 2.0 + hi / 2.0
    if not lo <= thr < hi:
        thr = lo
    return int(feats[col]), float(thr), float(gain)


def grow_tree(X: np.ndarray, y: np.ndarray, n_classes: int, seed: int, max_features: int) -> Tree:
    """Fit one tree on a bootstrap sample drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    n, d = X.shape
    sample = rng.integers(0, n, size=n)
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    leaf_counts: list[np.ndarray] = []

    stack = [(sample, -1, False)]
    while stack:
        idx, parent, is_right = stack.pop()
        node = len(feature)
        if parent >= 0:
            (right if is_right else left)[parent] = node
        yn = y[idx]
        counts = np.bincount(yn, minlength=n_classes)
        split = None
        if np.count_nonzero(counts) > 1:
            perm = rng.permutation(d)
            for start in range(0, d, max_features):
                feats = perm[start : start + max_features]
                split = _best_split(X[np.ix_(idx, feats)], yn, counts, feats)
                if split is not None:
                    break
        left.append(-1)
        right.append(-1)
        if split is None:
            feature.append(-1)
            threshold.append(0.0)
            leaf_counts.append(counts)
            continue
        leaf_counts.append(np.zeros(n_classes, dtype=np.int64))
        f, thr, _ = split
        feature.append(f)
        threshold.append(thr)
        mask = X[idx, f] <= thr
        stack.append((idx[~mask], node, True))
        stack.append((idx[mask], node, False))

    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=float),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        counts=np.asarray(leaf_counts, dtype=np.int64).reshape(-1, n_classes),
    )


def _grow_batch(X, y, n_classes, seed, indices, max_features):
    return [grow_tree(X, y, n_classes, tree_seed(seed, i), max_features) for i in indices]


def _check_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D feature matrix, got shape {X.shape}")
    if np.isnan(X).any():
        raise ValueError("feature matrix contains NaN")
    return X


class RandomForest:
    """Bagged CART ensemble predicting by plurality vote of tree majorities."""

    def __init__(self, config: ForestConfig | None = None):
        self.config = config or ForestConfig()
        self.trees: list[Tree] = []
        self.n_features = 0
        self.n_classes = 0

    def fit(self, X, y, n_jobs: int = 1, n_classes: int | None = None) -> "RandomForest":
        X = _check_matrix(X)
        y = np.asarray(y)
        if X.shape[0] == 0 or X.shape[1] == 0:
            raise ValueError("cannot fit on an empty matrix")
        if len(y) != X.shape[0]:
            raise ValueError(f"{X.shape[0]} rows but {len(y)} labels")
        if y.ndim != 1 or not np.issubdtype(y.dtype, np.integer) or y.min() < 0:
            raise ValueError("labels must be non-negative integers")
        if len(np.unique(y)) < 2:
            raise ValueError("need at least two classes to fit a classifier")
        if len(y) < 2:
            raise ValueError("need at least two rows")
        y = y.astype(np.int64)
        self.n_features = X.shape[1]
        self.n_classes = int(n_classes or y.max() + 1)
        mf = max_features_for(self.n_features)
        n_trees, seed = self.config.n_trees, self.config.seed

        workers = (os.cpu_count() or 1) if n_jobs in (-1, None) else int(n_jobs)
        if workers <= 1:
            self.trees = _grow_batch(X, y, self.n_classes, seed, range(n_trees), mf)
        else:
            chunks = np.array_split(np.arange(n_trees), min(n_trees, workers))
            parts = Parallel(n_jobs=workers)(
                delayed(_grow_batch)(X, y, self.n_classes, seed, c.tolist(), mf) for c in chunks
            )
            self.trees = [t for part in parts for t in part]
        return self

    def _check_predict(self, X) -> np.ndarray:
        if not self.trees:
            raise ValueError("forest is not fitted")
        X = _check_matrix(X)
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} columns, got {X.shape[1]}")
        return X

    def votes(self, X) -> np.ndarray:
        X = self._check_predict(X)
        votes = np.zeros((len(X), self.n_classes), dtype=np.int64)
        rows = np.arange(len(X))
        for tree in self.trees:
            np.add.at(votes, (rows, tree.predict(X)), 1)
        return votes

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.votes(X), axis=1)

    def score(self, X, y) -> float:
        return float(np.mean(self.predict(X) == np.asarray(y)))

    def to_bytes(self) -> bytes:
        out = [_HEADER.pack(MAGIC, FORMAT_VERSION, len(self.trees), self.n_features,
                            self.n_classes, self.config.seed & MASK64)]
        leaf_fmt = struct.Struct(f"<i{self.n_classes}I")
        internal = struct.Struct("<id")
        for t in self.trees:
            out.append(struct.pack("<I", t.node_count))
            for i in range(t.node_count):
                f = int(t.feature[i])
                if f < 0:
                    out.append(leaf_fmt.pack(-1, *t.counts[i].tolist()))
                else:
                    out.append(internal.pack(f, float(t.threshold[i])))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "RandomForest":
        magic, version, n_trees, d, n_classes, seed = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise ValueError("not a forest model file")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {version}")
        forest = cls(ForestConfig(n_trees=n_trees, seed=seed))
        forest.n_features, forest.n_classes = d, n_classes
        pos = _HEADER.size
        counts_fmt = struct.Struct(f"<{n_classes}I")
        for _ in range(n_trees):
            (n_nodes,) = struct.unpack_from("<I", data, pos)
            pos += 4
            feature = np.full(n_nodes, -1, dtype=np.int64)
            threshold = np.zeros(n_nodes)
            left = np.full(n_nodes, -1, dtype=np.int64)
            right = np.full(n_nodes, -1, dtype=np.int64)
            counts = np.zeros((n_nodes, n_classes), dtype=np.int64)
            # preorder: a pending internal node gets its right child once
            # its left subtree is complete
            pending: list[int] = []
            for i in range(n_nodes):
                if i > 0:
                    parent = pending[-1]
                    if left[parent] < 0:
                        left[parent] = i
                    else:
                        right[parent] = i
                        pending.pop()
                (f,) = struct.unpack_from("<i", data, pos)
                if f < 0:
                    counts[i] = counts_fmt.unpack_from(data, pos + 4)
                    pos += 4 + counts_fmt.size
                else:
                    feature[i] = f
                    (threshold[i],) = struct.unpack_from("<d", data, pos + 4)
                    pos += 12
                    pending.append(i)
            forest.trees.append(Tree(feature, threshold, left, right, counts))
        if pos != len(data):
            raise ValueError("trailing bytes after the last tree")
        return forest

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "RandomForest":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def fit(X, y, config: ForestConfig | None = None, n_jobs: int = 1) -> RandomForest:
    return RandomForest(config).fit(X, y, n_jobs=n_jobs)


def predict(forest: RandomForest, X) -> np.ndarray:
    return forest.predict(X)
