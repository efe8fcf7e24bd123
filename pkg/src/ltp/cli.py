"""Command-line entry point: ``ltp {extract,eval,sweep,ablate,rank}``.

Relative ``--dataset`` paths that do not exist are looked up under the
directory named by the ``LTP_DATA_ROOT`` environment variable.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .embedding import (
    AGGREGATIONS,
    NORMALIZATIONS,
    BIN_GRID,
    EmbeddingConfig,
    column_names,
    compute_all_descriptors,
    embed_descriptors,
    parse_feature_set,
    write_embedding_bin,
    write_embedding_csv,
)
from .evaluation import (
    ABLATION_VARIANTS,
    HYPERPARAMETERS,
    ablation,
    average_rank,
    load_folds,
    ranks_to_csv,
    read_accuracy_table,
    reports_to_csv,
    run_cv,
    stratified_kfold,
    sweep_single_hyperparameter,
    sweep_to_csv,
)
from .forest import ForestConfig
from .graph import detect_name, parse_tudataset, tudataset_files

log = logging.getLogger("ltp")

DATA_ROOT_ENV = "LTP_DATA_ROOT"
DEFAULT_GRIDS = {
    "bins": list(BIN_GRID),
    "aggregation": list(AGGREGATIONS),
    "normalization": list(NORMALIZATIONS),
    "log_scale": [False, True],
}


@dataclass
class ExperimentSpec:
    command: str
    datasets: list[dict] = field(default_factory=list)
    embedding: dict = field(default_factory=dict)
    forest: dict = field(default_factory=dict)
    protocol: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    version: str = __version__

    def to_dict(self) -> dict:
        return asdict(self)


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text!r}")
    return value


def _feature_set(text: str) -> tuple[str, ...]:
    try:
        return parse_feature_set(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _parse_value(name: str, text: str):
    if name == "bins":
        return _positive_int(text)
    if name == "log_scale":
        if text.lower() not in ("true", "false", "1", "0"):
            raise argparse.ArgumentTypeError(f"log_scale values must be true/false, got {text!r}")
        return text.lower() in ("true", "1")
    allowed = AGGREGATIONS if name == "aggregation" else NORMALIZATIONS
    if text not in allowed:
        raise argparse.ArgumentTypeError(f"{name} must be one of {allowed}, got {text!r}")
    return text


def _grid_item(text: str) -> tuple[str, list]:
    name, _, values = text.partition("=")
    name = name.strip().replace("-", "_")
    if name == "scale":
        name = "log_scale"
    if name not in HYPERPARAMETERS or not values:
        raise argparse.ArgumentTypeError(
            f"expected NAME=V1,V2 with NAME in {HYPERPARAMETERS}, got {text!r}"
        )
    return name, [_parse_value(name, v.strip()) for v in values.split(",") if v.strip()]


def resolve_dataset(path: str) -> Path:
    p = Path(path)
    if not p.exists() and not p.is_absolute() and os.environ.get(DATA_ROOT_ENV):
        alt = Path(os.environ[DATA_ROOT_ENV]) / p
        if alt.exists():
            return alt
    if not p.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {path}")
    return p


def _sha256(paths) -> dict[str, str]:
    out = {}
    for p in paths:
        h = hashlib.sha256()
        with open(p, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
        out[Path(p).name] = h.hexdigest()
    return out


def _load(path: str, name: str | None):
    directory = resolve_dataset(path)
    name = name or detect_name(directory)
    dataset = parse_tudataset(directory, name)
    info = {"path": str(path), "name": name, "sha256": _sha256(tudataset_files(directory, name))}
    return dataset, info


class Outputs:
    """Tracks written files so a failed command leaves nothing half-done."""

    def __init__(self, directory: str | os.PathLike):
        self.directory = Path(directory)
        self.written: list[Path] = []

    def __enter__(self):
        self.directory.mkdir(parents=True, exist_ok=True)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            for p in self.written:
                p.unlink(missing_ok=True)
        return False

    def path(self, name: str) -> Path:
        p = self.directory / name
        self.written.append(p)
        return p

    def json(self, name: str, payload: dict, spec: ExperimentSpec) -> Path:
        p = self.path(name)
        p.write_text(json.dumps({"spec": spec.to_dict(), **payload}, indent=2) + "\n")
        return p

    def csv(self, name: str, text: str, spec: ExperimentSpec) -> Path:
        p = self.path(name)
        p.write_text("# spec: " + json.dumps(spec.to_dict(), sort_keys=True) + "\n" + text)
        return p


def _embedding_config(args) -> EmbeddingConfig:
    return EmbeddingConfig(
        bins=args.bins,
        aggregation=args.aggregation,
        normalization=args.normalization,
        log_scale=args.log_scale,
        feature_set=args.features,
    )


def _spec(args, datasets_info, ec=None, protocol=None) -> ExperimentSpec:
    return ExperimentSpec(
        command=args.command,
        datasets=datasets_info,
        embedding=ec.to_dict() if ec is not None else {},
        forest=ForestConfig(args.trees, args.seed).to_dict() if hasattr(args, "trees") else {},
        protocol=protocol or {},
        output={"directory": str(args.output), "format": args.format, "workers": args.workers},
    )


def _wants(args, kind: str) -> bool:
    return args.format in (kind, "both")


def cmd_extract(args) -> int:
    dataset, info = _load(args.dataset, args.name)
    ec = _embedding_config(args)
    spec = _spec(args, [info], ec)
    descs = compute_all_descriptors(dataset.graphs, ec.features, args.workers)
    X = embed_descriptors(descs, ec)
    with Outputs(args.output) as out:
        files = []
        if args.format in ("csv", "both"):
            write_embedding_csv(out.path("embeddings.csv"), X, column_names(ec))
            files.append("embeddings.csv")
        if args.format in ("bin", "both"):
            write_embedding_bin(out.path("embeddings.bin"), X)
            files.append("embeddings.bin")
        labels = out.path("labels.csv")
        labels.write_text("label\n" + "".join(f"{int(y)}\n" for y in dataset.labels))
        out.json("manifest.json", {"shape": list(X.shape), "files": files + ["labels.csv"],
                                   "num_classes": dataset.num_classes}, spec)
    print(f"{dataset.name}: {X.shape[0]} x {X.shape[1]} embedding written to {args.output}")
    return 0


def _folds_for(args, dataset):
    if args.external_folds:
        return load_folds(args.external_folds, len(dataset))
    return stratified_kfold(dataset.labels, args.folds, args.seed)


def _grid(args):
    grid = dict(args.grid or [])
    if getattr(args, "tune", False):
        grid = {**DEFAULT_GRIDS, **grid}
    return grid or None


def cmd_eval(args) -> int:
    dataset, info = _load(args.dataset, args.name)
    ec = _embedding_config(args)
    folds = _folds_for(args, dataset)
    grid = _grid(args)
    protocol = {"k_outer": folds.k, "k_inner": args.inner_folds if grid else None, "seed": args.seed,
                "external_folds": args.external_folds, "grid": grid}
    spec = _spec(args, [info], ec, protocol)
    report = run_cv(dataset, ec, ForestConfig(args.trees, args.seed), folds, grid=grid,
                    inner_k=args.inner_folds, n_jobs=args.workers)
    stem = f"{dataset.name}_eval"
    with Outputs(args.output) as out:
        if _wants(args, "json"):
            out.json(stem + ".json", {"report": report.to_dict()}, spec)
        if _wants(args, "csv"):
            out.csv(stem + ".csv", reports_to_csv([report]), spec)
    print(report.summary())
    return 0


def cmd_ablate(args) -> int:
    dataset, info = _load(args.dataset, args.name)
    ec = _embedding_config(args)
    folds = _folds_for(args, dataset)
    variants = {v: ABLATION_VARIANTS[v] for v in args.variants} if args.variants else ABLATION_VARIANTS
    protocol = {"k_outer": folds.k, "seed": args.seed, "external_folds": args.external_folds,
                "variants": {k: list(v) for k, v in variants.items()}}
    spec = _spec(args, [info], ec, protocol)
    reports = ablation(dataset, ec, ForestConfig(args.trees, args.seed), folds, variants,
                       seed=args.seed, n_jobs=args.workers)
    stem = f"{dataset.name}_ablation"
    with Outputs(args.output) as out:
        if _wants(args, "json"):
            out.json(stem + ".json", {"reports": {k: r.to_dict() for k, r in reports.items()},
                                      "fold_assignments": folds.assignments.tolist()}, spec)
        if _wants(args, "csv"):
            out.csv(stem + ".csv", reports_to_csv(list(reports.values()), labels=list(reports)), spec)
    for name, r in reports.items():
        print(f"{name:8s} {r.summary()}")
    return 0


def cmd_sweep(args) -> int:
    loaded = [_load(p, None) for p in args.dataset]
    ec = _embedding_config(args)
    grids = dict(args.grid) if args.grid else DEFAULT_GRIDS
    protocol = {"k_outer": args.folds, "seed": args.seed, "grids": grids}
    spec = _spec(args, [info for _, info in loaded], ec, protocol)
    table = sweep_single_hyperparameter([d for d, _ in loaded], ec, grids,
                                        ForestConfig(args.trees, args.seed), k=args.folds,
                                        seed=args.seed, n_jobs=args.workers)
    with Outputs(args.output) as out:
        if _wants(args, "json"):
            out.json("sweep.json", {"sweep": table.to_dict()}, spec)
        if _wants(args, "csv"):
            out.csv("sweep.csv", sweep_to_csv(table), spec)
    for s in table.summary:
        print(f"{s['hyperparameter']}={s['value']}: wins {s['wins']}, "
              f"abs avg difference {100 * s['abs_avg_difference']:.2f}")
    return 0


def cmd_rank(args) -> int:
    table, datasets = read_accuracy_table(args.table)
    ranks = average_rank(table, datasets, ties=args.ties)
    spec = ExperimentSpec(command="rank", protocol={"table": str(args.table), "ties": args.ties},
                          output={"directory": str(args.output), "format": args.format})
    with Outputs(args.output) as out:
        if _wants(args, "json"):
            out.json("ranks.json", {"ranks": ranks.to_dict()}, spec)
        if _wants(args, "csv"):
            out.csv("ranks.csv", ranks_to_csv(ranks), spec)
    for model, r in ranks.average.items():
        print(f"{model}: {r:.2f}")
    return 0


def _add_embedding_flags(p):
    p.add_argument("--features", type=_feature_set, default=parse_feature_set("ltp"),
                   help="ltp, ldp, or groups joined by + or , (ldp5, sp, ebc, ji, lds)")
    p.add_argument("--bins", type=_positive_int, default=50)
    p.add_argument("--aggregation", choices=AGGREGATIONS, default="histogram")
    p.add_argument("--normalization", choices=NORMALIZATIONS, default="none")
    p.add_argument("--log-scale", action="store_true")


def _add_common(p, formats=("json", "csv", "both")):
    p.add_argument("--output", default="results", help="output directory")
    p.add_argument("--format", choices=formats, default="both")
    p.add_argument("--workers", type=_positive_int, default=os.cpu_count() or 1)
    p.add_argument("-v", "--verbose", action="store_true")


def _add_protocol(p):
    p.add_argument("--trees", type=_positive_int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--folds", type=_positive_int, default=10, help="outer CV folds")
    p.add_argument("--external-folds", help="JSON list of {fold, indices} test splits")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ltp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ltp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="compute the embedding matrix of a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--name", help="file prefix inside the dataset directory")
    _add_embedding_flags(p)
    _add_common(p, formats=("csv", "bin", "both"))
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("eval", help="k-fold cross-validated accuracy")
    p.add_argument("--dataset", required=True)
    p.add_argument("--name")
    _add_embedding_flags(p)
    _add_protocol(p)
    p.add_argument("--inner-folds", type=_positive_int, default=5)
    p.add_argument("--grid", type=_grid_item, action="append", metavar="NAME=V1,V2",
                   help="tune NAME over the values by inner CV (repeatable)")
    p.add_argument("--tune", action="store_true", help="tune over the full default grid")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="compare LDP with each extra descriptor and LTP")
    p.add_argument("--dataset", required=True)
    p.add_argument("--name")
    p.add_argument("--variants", nargs="+", choices=list(ABLATION_VARIANTS))
    _add_embedding_flags(p)
    _add_protocol(p)
    _add_common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="vary one embedding hyperparameter at a time")
    p.add_argument("--dataset", required=True, action="append", help="repeatable")
    _add_embedding_flags(p)
    _add_protocol(p)
    p.add_argument("--grid", type=_grid_item, action="append", metavar="NAME=V1,V2")
    _add_common(p)
    p.set_defaults(func=cmd_sweep, external_folds=None)

    p = sub.add_parser("rank", help="average model rank from an accuracy table")
    p.add_argument("--table", required=True, help="CSV: dataset,<model>,... one row per dataset")
    p.add_argument("--ties", choices=("average", "dense", "min"), default="average")
    _add_common(p)
    p.set_defaults(func=cmd_rank)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "eval" and args.inner_folds < 2:
        parser.error("argument --inner-folds: must be at least 2")
    if getattr(args, "folds", 2) < 2:
        parser.error("argument --folds: must be at least 2")
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"ltp {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
