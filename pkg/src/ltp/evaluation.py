"""Cross-validation harness: stratified folds, outer-CV reports with optional
inner grid search, single-hyperparameter sweeps, descriptor ablations and
average-rank tables.

Dataset-normalization maxima and any tuning decisions are always derived
from the outer training portion only.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import os
import time
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .descriptors import DescriptorMatrix
from .embedding import (
    EmbeddingConfig,
    compute_all_descriptors,
    dataset_maxima,
    embed_descriptors,
)
from .forest import ForestConfig, RandomForest, tree_seed
from .graph import Dataset

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
HYPERPARAMETERS = ("bins", "aggregation", "normalization", "log_scale")
ABLATION_VARIANTS = {
    "LDP": ("ldp5",),
    "LDP+SP": ("ldp5", "sp"),
    "LDP+EBC": ("ldp5", "ebc"),
    "LDP+JI": ("ldp5", "ji"),
    "LDP+LDS": ("ldp5", "lds"),
    "LTP": ("ldp5", "ebc", "ji", "lds"),
}


@dataclass(frozen=True, eq=False)
class FoldPlan:
    """Test-fold index per sample."""

    k: int
    assignments: np.ndarray
    seed: int | None = None
    source: str = "stratified"
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        a = np.asarray(self.assignments, dtype=np.int64)
        if self.k < 2:
            raise ValueError(f"need at least 2 folds, got {self.k}")
        if a.size and (a.min() < 0 or a.max() >= self.k):
            raise ValueError("fold assignment outside [0, k)")
        a.setflags(write=False)
        object.__setattr__(self, "assignments", a)

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def splits(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [
            (np.flatnonzero(self.assignments != f), np.flatnonzero(self.assignments == f))
            for f in range(self.k)
        ]

    def to_json(self) -> str:
        return json.dumps([{"fold": f, "indices": self.test_indices(f).tolist()} for f in range(self.k)])

    def to_dict(self) -> dict:
        return {"k": self.k, "seed": self.seed, "source": self.source}


def stratified_kfold(labels, k: int, seed: int = 0) -> FoldPlan:
    """Shuffle each class with a seeded RNG and deal it round-robin to folds.

    The dealing position carries over between classes so fold sizes stay
    balanced overall as well as per class.
    """
    y = np.asarray(labels)
    if k < 2:
        raise ValueError(f"need at least 2 folds, got {k}")
    if y.size == 0:
        raise ValueError("cannot split an empty label list")
    rng = np.random.default_rng(seed)
    assign = np.empty(len(y), dtype=np.int64)
    notes = []
    offset = 0
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        rng.shuffle(idx)
        assign[idx] = (offset + np.arange(len(idx))) % k
        offset = (offset + len(idx)) % k
        if len(idx) < k:
            msg = f"class {c} has {len(idx)} members, fewer than {k} folds"
            notes.append(msg)
            warnings.warn(msg, stacklevel=2)
    return FoldPlan(k=k, assignments=assign, seed=seed, warnings=tuple(notes))


def load_folds(path, n_samples: int) -> FoldPlan:
    """Read ``[{"fold": int, "indices": [int, ...]}, ...]`` (test indices per fold)."""
    with open(path) as fh:
        entries = json.load(fh)
    k = len(entries)
    assign = np.full(n_samples, -1, dtype=np.int64)
    for entry in entries:
        fold, idx = int(entry["fold"]), np.asarray(entry["indices"], dtype=np.int64)
        if not 0 <= fold < k:
            raise ValueError(f"{path}: fold id {fold} outside [0, {k})")
        if idx.size and (idx.min() < 0 or idx.max() >= n_samples):
            raise ValueError(f"{path}: sample index out of range for {n_samples} samples")
        if (assign[idx] >= 0).any() or len(np.unique(idx)) != len(idx):
            raise ValueError(f"{path}: a sample is assigned to more than one fold")
        assign[idx] = fold
    if (assign < 0).any():
        raise ValueError(f"{path}: {int((assign < 0).sum())} samples are not assigned to any fold")
    return FoldPlan(k=k, assignments=assign, seed=None, source=os.fspath(path))


@dataclass
class CVReport:
    dataset: str
    config: dict
    fold_accuracies: list[float]
    mean: float
    std: float
    extract_seconds: float = 0.0
    train_seconds: float = 0.0
    workers: int = 1
    fold_configs: list[dict] | None = None
    schema_version: int = SCHEMA_VERSION

    @classmethod
    def from_folds(cls, dataset: str, config: dict, accuracies: Sequence[float], **kw) -> "CVReport":
        acc = np.asarray(accuracies, dtype=float)
        return cls(dataset, config, acc.tolist(), float(acc.mean()), float(acc.std()), **kw)

    def summary(self) -> str:
        return f"{self.dataset}: {100 * self.mean:.1f} ± {100 * self.std:.1f}"

    def to_dict(self) -> dict:
        d = {
            "schema_version": self.schema_version,
            "dataset": self.dataset,
            "config": self.config,
            "fold_accuracies": self.fold_accuracies,
            "mean": self.mean,
            "std": self.std,
            "extract_seconds": self.extract_seconds,
            "train_seconds": self.train_seconds,
            "workers": self.workers,
        }
        if self.fold_configs is not None:
            d["fold_configs"] = self.fold_configs
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "CVReport":
        keys = ("dataset", "config", "fold_accuracies", "mean", "std", "extract_seconds",
                "train_seconds", "workers", "fold_configs", "schema_version")
        return cls(**{k: d[k] for k in keys if k in d})


def fold_matrices(
    descriptors: Sequence[DescriptorMatrix],
    train_idx: np.ndarray,
    test_idx: np.ndarray,
    config: EmbeddingConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Train and test embeddings; dataset maxima come from the training rows."""
    train = [descriptors[i] for i in train_idx]
    test = [descriptors[i] for i in test_idx]
    stats = dataset_maxima(train, config) if config.normalization == "dataset" else None
    return embed_descriptors(train, config, stats), embed_descriptors(test, config, stats)


def expand_grid(base: EmbeddingConfig, grid: Mapping[str, Sequence] | None) -> list[EmbeddingConfig]:
    if not grid:
        return [base]
    names = list(grid)
    for name in names:
        if name not in HYPERPARAMETERS and name != "feature_set":
            raise ValueError(f"cannot tune {name!r}")
        if not len(grid[name]):
            raise ValueError(f"empty grid for {name!r}")
    return [base.replace(**dict(zip(names, combo))) for combo in itertools.product(*grid.values())]


def _fit_score(descs, labels, train_idx, test_idx, ec, fc, n_jobs, n_classes) -> float:
    Xtr, Xte = fold_matrices(descs, train_idx, test_idx, ec)
    forest = RandomForest(fc).fit(Xtr, labels[train_idx], n_jobs=n_jobs, n_classes=n_classes)
    return forest.score(Xte, labels[test_idx])


def _select_config(descs, labels, train_idx, candidates, fc, inner_k, seed, n_jobs, n_classes):
    inner = stratified_kfold_quiet(labels[train_idx], inner_k, seed)
    best, best_acc = candidates[0], -1.0
    for ec in candidates:
        accs = [
            _fit_score(descs, labels, train_idx[tr], train_idx[te], ec, fc, n_jobs, n_classes)
            for tr, te in inner.splits()
        ]
        acc = float(np.mean(accs))
        if acc > best_acc:
            best, best_acc = ec, acc
    return best


def stratified_kfold_quiet(labels, k: int, seed: int) -> FoldPlan:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return stratified_kfold(labels, k, seed)


def _worker_count(n_jobs: int | None) -> int:
    return (os.cpu_count() or 1) if n_jobs in (-1, None) else int(n_jobs)


def run_cv(
    d: Dataset,
    ec: EmbeddingConfig,
    fc: ForestConfig,
    folds: FoldPlan,
    grid: Mapping[str, Sequence] | None = None,
    inner_k: int = 5,
    n_jobs: int = 1,
    descriptors: Sequence[DescriptorMatrix] | None = None,
) -> CVReport:
    """Outer k-fold evaluation of one embedding + forest configuration.

    With ``grid`` the embedding configuration of every outer fold is chosen
    by inner stratified ``inner_k``-fold accuracy on its training portion.
    The forest of outer fold ``f`` is seeded with ``tree_seed(fc.seed, f)``.
    """
    if len(folds.assignments) != len(d):
        raise ValueError(f"fold plan covers {len(folds.assignments)} samples, dataset has {len(d)}")
    candidates = expand_grid(ec, grid)
    workers = _worker_count(n_jobs)

    t0 = time.perf_counter()
    if descriptors is None:
        needed = sorted({f for c in candidates for f in c.features})
        descriptors = compute_all_descriptors(d.graphs, needed, workers)
    extract_seconds = time.perf_counter() - t0

    labels = d.labels
    accuracies, chosen = [], []
    t0 = time.perf_counter()
    for fold, (train_idx, test_idx) in enumerate(folds.splits()):
        fold_fc = ForestConfig(n_trees=fc.n_trees, seed=tree_seed(fc.seed, fold))
        cfg = ec
        if len(candidates) > 1:
            cfg = _select_config(descriptors, labels, train_idx, candidates, fold_fc, inner_k,
                                 tree_seed(fc.seed, fold), workers, d.num_classes)
            chosen.append(cfg.to_dict())
        acc = _fit_score(descriptors, labels, train_idx, test_idx, cfg, fold_fc, workers, d.num_classes)
        log.debug("%s fold %d: %.4f", d.name, fold, acc)
        accuracies.append(acc)
    train_seconds = time.perf_counter() - t0

    config = {
        "embedding": ec.to_dict(),
        "forest": fc.to_dict(),
        "protocol": {**folds.to_dict(), "inner_k": inner_k if grid else None,
                     "grid": {k: list(v) for k, v in grid.items()} if grid else None},
    }
    return CVReport.from_folds(
        d.name, config, accuracies,
        extract_seconds=extract_seconds, train_seconds=train_seconds, workers=workers,
        fold_configs=chosen or None,
    )


def _json_value(v):
    return v.item() if isinstance(v, np.generic) else v


@dataclass
class SweepTable:
    """Accuracy per (hyperparameter, value, dataset) plus win counts and the
    average absolute gap to the best value of the same hyperparameter."""

    rows: list[dict] = field(default_factory=list)
    summary: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "config": self.config,
                "rows": self.rows, "summary": self.summary}


def summarize_sweep(rows: Sequence[Mapping]) -> list[dict]:
    """Wins (ties credit every tying value) and mean of ``best - accuracy``
    across datasets, per hyperparameter value."""
    out = []
    for hp in dict.fromkeys(r["hyperparameter"] for r in rows):
        sub = [r for r in rows if r["hyperparameter"] == hp]
        values = list(dict.fromkeys(r["value"] for r in sub))
        datasets = list(dict.fromkeys(r["dataset"] for r in sub))
        acc = {(r["value"], r["dataset"]): r["accuracy"] for r in sub}
        best = {ds: max(acc[(v, ds)] for v in values) for ds in datasets}
        for v in values:
            gaps = [best[ds] - acc[(v, ds)] for ds in datasets]
            out.append({
                "hyperparameter": hp,
                "value": v,
                "wins": sum(1 for ds in datasets if acc[(v, ds)] == best[ds]),
                "abs_avg_difference": float(np.mean(np.abs(gaps))),
            })
    return out


def sweep_single_hyperparameter(
    datasets: Sequence[Dataset],
    defaults: EmbeddingConfig,
    grids: Mapping[str, Sequence],
    fc: ForestConfig = ForestConfig(),
    k: int = 10,
    seed: int = 0,
    n_jobs: int = 1,
) -> SweepTable:
    """Vary one embedding hyperparameter at a time around ``defaults``."""
    if not grids:
        raise ValueError("empty grid")
    for name, values in grids.items():
        if name not in HYPERPARAMETERS:
            raise ValueError(f"unknown hyperparameter {name!r}; expected one of {HYPERPARAMETERS}")
        if not len(values):
            raise ValueError(f"empty grid for {name!r}")
    rows = []
    for d in datasets:
        folds = stratified_kfold_quiet(d.labels, k, seed)
        descs = compute_all_descriptors(d.graphs, defaults.features, _worker_count(n_jobs))
        cache: dict[EmbeddingConfig, float] = {}
        for name, values in grids.items():
            for v in values:
                ec = defaults.replace(**{name: v})
                if ec not in cache:
                    cache[ec] = run_cv(d, ec, fc, folds, n_jobs=n_jobs, descriptors=descs).mean
                rows.append({"hyperparameter": name, "value": _json_value(v),
                             "dataset": d.name, "accuracy": cache[ec]})
    config = {"defaults": defaults.to_dict(), "forest": fc.to_dict(),
              "protocol": {"k": k, "seed": seed},
              "grids": {n: [_json_value(v) for v in vs] for n, vs in grids.items()}}
    return SweepTable(rows=rows, summary=summarize_sweep(rows), config=config)


def ablation(
    d: Dataset,
    defaults: EmbeddingConfig = EmbeddingConfig(),
    fc: ForestConfig = ForestConfig(),
    folds: FoldPlan | None = None,
    variants: Mapping[str, Sequence[str]] = ABLATION_VARIANTS,
    seed: int = 0,
    n_jobs: int = 1,
) -> dict[str, CVReport]:
    """One report per feature-set variant, all on the same folds."""
    folds = folds or stratified_kfold_quiet(d.labels, 10, seed)
    configs = {name: defaults.replace(feature_set=tuple(fs)) for name, fs in variants.items()}
    needed = sorted({f for c in configs.values() for f in c.features})
    t0 = time.perf_counter()
    descs = compute_all_descriptors(d.graphs, needed, _worker_count(n_jobs))
    shared = time.perf_counter() - t0
    reports = {}
    for name, ec in configs.items():
        rep = run_cv(d, ec, fc, folds, n_jobs=n_jobs, descriptors=descs)
        rep.extract_seconds = shared
        reports[name] = rep
    return reports


@dataclass
class RankTable:
    models: list[str]
    datasets: list[str]
    ranks: np.ndarray  # (datasets, models)
    ties: str = "average"

    @property
    def average(self) -> dict[str, float]:
        return dict(zip(self.models, self.ranks.mean(axis=0).tolist()))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "ties": self.ties,
            "models": self.models,
            "datasets": self.datasets,
            "ranks": self.ranks.tolist(),
            "average_rank": self.average,
        }


def _missing(x) -> bool:
    return x is None or (isinstance(x, float) and math.isnan(x))


def average_rank(
    table: Mapping[str, Sequence[float | None]],
    datasets: Sequence[str] | None = None,
    ties: str = "average",
) -> RankTable:
    """Rank models per dataset by descending accuracy and average the ranks.

    ``table`` maps model name to one accuracy per dataset; ``None`` or NaN
    marks a missing cell (e.g. out of resources), ranked below every
    reported value. ``ties="average"`` gives tied models the mean of their
    positions; ``ties="dense"`` gives them the shared best position and
    continues with the next integer.
    """
    if ties not in ("average", "dense", "min"):
        raise ValueError(f"unknown tie rule {ties!r}")
    models = list(table)
    if not models:
        raise ValueError("empty accuracy table")
    n_ds = {len(v) for v in table.values()}
    if len(n_ds) != 1 or 0 in n_ds:
        raise ValueError("every model needs one accuracy per dataset")
    (n,) = n_ds
    datasets = list(datasets) if datasets is not None else [f"dataset_{i}" for i in range(n)]
    if len(datasets) != n:
        raise ValueError("dataset names do not match table width")
    acc = np.array([[-np.inf if _missing(x) else float(x) for x in table[m]] for m in models]).T
    ranks = np.vstack([rankdata(-row, method=ties) for row in acc]).astype(float)
    return RankTable(models=models, datasets=datasets, ranks=ranks, ties=ties)


def read_accuracy_table(path) -> tuple[dict[str, list[float | None]], list[str]]:
    """CSV with a header ``dataset,<model>,...`` and one row per dataset.

    Cells may be plain numbers, ``"78.4 ± 4.5"`` style strings, or a
    non-numeric marker such as ``OOR`` / empty for missing results.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if len(rows) < 2:
        raise ValueError(f"{path}: need a header and at least one dataset row")
    models = [m.strip() for m in rows[0][1:]]
    table: dict[str, list[float | None]] = {m: [] for m in models}
    datasets = []
    for r in rows[1:]:
        if len(r) != len(models) + 1:
            raise ValueError(f"{path}: row {r[0]!r} has {len(r) - 1} cells for {len(models)} models")
        datasets.append(r[0].strip())
        for m, cell in zip(models, r[1:]):
            token = cell.replace("±", " ").split()
            try:
                table[m].append(float(token[0]))
            except (IndexError, ValueError):
                table[m].append(None)
    return table, datasets


def reports_to_csv(reports: Sequence[CVReport], labels: Sequence[str] | None = None) -> str:
    """Aligned CSV: one row per report with per-fold accuracies as columns."""
    k = max((len(r.fold_accuracies) for r in reports), default=0)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["dataset"] + (["variant"] if labels else []) + ["mean", "std"]
    w.writerow(head + [f"fold_{i}" for i in range(k)] + ["extract_seconds", "train_seconds", "workers"])
    for i, r in enumerate(reports):
        row = [r.dataset] + ([labels[i]] if labels else []) + [repr(r.mean), repr(r.std)]
        w.writerow(row + [repr(a) for a in r.fold_accuracies]
                   + [f"{r.extract_seconds:.3f}", f"{r.train_seconds:.3f}", r.workers])
    return buf.getvalue()


def sweep_to_csv(table: SweepTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["hyperparameter", "value", "dataset", "accuracy"])
    for r in table.rows:
        w.writerow([r["hyperparameter"], r["value"], r["dataset"], repr(r["accuracy"])])
    w.writerow([])
    w.writerow(["hyperparameter", "value", "wins", "abs_avg_difference"])
    for s in table.summary:
        w.writerow([s["hyperparameter"], s["value"], s["wins"], repr(s["abs_avg_difference"])])
    return buf.getvalue()


def ranks_to_csv(table: RankTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dataset"] + table.models)
    for ds, row in zip(table.datasets, table.ranks.tolist()):
        w.writerow([ds] + [repr(x) for x in row])
    w.writerow(["average_rank"] + [repr(x) for x in table.average.values()])
    return buf.getvalue()
