"""Acceptance checks, one test per criterion.

Run ``pytest tests/test_acceptance.py`` to get the PASS/FAIL summary printed
at the end of the session. Checks that need the benchmark datasets read them
from ``$LTP_DATA_ROOT``. When that data, or the required core count, is not
available, the check still runs and fails, and it is reported as an expected
failure so that the rest of the suite stays usable.
"""

import math
import os
import resource
import time

import numpy as np
import pytest

import test_descriptors as desc_tests
import test_embedding as emb_tests
import test_forest as forest_tests
from conftest import BENCHMARK_DIRS, benchmark_dir, load_benchmark, random_graph
from ltp.descriptors import (
    edge_betweenness,
    jaccard_index,
    ldp_node_features,
    local_degree_score,
    shortest_path_multiset,
)
from ltp.embedding import EmbeddingConfig, compute_all_descriptors
from ltp.evaluation import ABLATION_VARIANTS, ablation, average_rank, read_accuracy_table, run_cv, stratified_kfold
from ltp.forest import ForestConfig, fit
from ltp.graph import Graph, generate_synthetic

TABLE = desc_tests.__file__.rsplit("/", 1)[0] + "/data/published_accuracies.csv"
CORES = os.cpu_count() or 1
DEFAULTS = EmbeddingConfig(bins=50, aggregation="histogram", normalization="none", log_scale=False, feature_set="ltp")
FOREST = ForestConfig(n_trees=500, seed=0)


def missing(keys, cores=1):
    gaps = [k for k in keys if benchmark_dir(k) is None]
    reasons = []
    if gaps:
        reasons.append("datasets not under $LTP_DATA_ROOT: " + ", ".join(gaps))
    if CORES < cores:
        reasons.append(f"needs {cores} cores, machine has {CORES}")
    return "; ".join(reasons)


def require(keys):
    absent = [k for k in keys if benchmark_dir(k) is None]
    if absent:
        pytest.fail("cannot evaluate without " + ", ".join(absent))


@pytest.mark.acceptance("EBC oracle equivalence")
def test_ebc_oracle_equivalence(record_property):
    start = time.perf_counter()
    graphs = list(desc_tests.small_connected_graphs()) + list(desc_tests.random_corpus(200, max_n=8))
    worst = 0.0
    for g in graphs:
        err = np.abs(edge_betweenness(g) - desc_tests.brute_force_ebc(g))
        worst = max(worst, float(err.max(initial=0.0)))
    elapsed = time.perf_counter() - start
    record_property("detail", f"{len(graphs)} graphs, max error {worst:.1e}, {elapsed:.1f}s")
    assert worst <= 1e-9
    assert elapsed < 10


@pytest.mark.acceptance("Descriptor analytic suite")
def test_descriptor_analytic_suite(record_property):
    P2, P3, P4 = (generate_synthetic("path", n) for n in (2, 3, 4))
    K3, K4 = generate_synthetic("complete", 3), generate_synthetic("complete", 4)
    S4 = generate_synthetic("star", 5)
    paw = Graph.from_edges(4, [(0, 1), (0, 2), (0, 3), (1, 2)])
    c4 = generate_synthetic("cycle", 4)
    value = desc_tests.edge_value

    ldp = lambda g, v: np.stack(ldp_node_features(g), axis=1)[v].tolist()
    assert ldp(P3, 1) == [2, 1, 1, 1, 0]
    assert ldp(S4, 0) == [4, 1, 1, 1, 0]
    assert all(ldp(S4, leaf) == [1, 4, 4, 4, 0] for leaf in range(1, 5))
    assert ldp(Graph.from_edges(1, []), 0) == [0, 0, 0, 0, 0]

    assert value(P3, edge_betweenness(P3), 0, 1) == 1.0
    assert edge_betweenness(K3).tolist() == [0.0, 0.0, 0.0]
    assert value(P4, edge_betweenness(P4), 1, 2) == 3.0

    assert jaccard_index(K3).tolist() == [1 / 3] * 3
    assert value(P3, jaccard_index(P3), 0, 1) == 0.0
    assert jaccard_index(K4).tolist() == [0.5] * 6

    assert local_degree_score(P2).tolist() == [1.0]
    lds = local_degree_score(paw)
    assert (value(paw, lds, 1, 2), value(paw, lds, 0, 3), value(paw, lds, 0, 1)) == (0.0, 1.0, 1.0)
    lds = local_degree_score(c4)
    assert value(c4, lds, 2, 3) == 0.0
    assert all(value(c4, lds, u, v) == 1.0 for u, v in [(0, 1), (1, 2), (0, 3)])

    assert shortest_path_multiset(P3).tolist() == [1, 1, 2]
    assert shortest_path_multiset(Graph.from_edges(4, [(0, 1), (2, 3)])).tolist() == [1, 1]
    assert shortest_path_multiset(K3).tolist() == [1, 1, 1]

    rng = np.random.default_rng(7)
    for _ in range(1000):
        g = random_graph(rng, int(rng.integers(1, 25)), float(rng.uniform(0, 1)))
        ji, lds = jaccard_index(g), local_degree_score(g)
        assert ((ji >= 0) & (ji <= 1)).all() and ((lds >= 0) & (lds <= 1)).all()
    record_property("detail", "all worked examples exact; JI and LDS in [0,1] on 1000 graphs")


@pytest.mark.acceptance("Embedding invariants")
def test_embedding_invariants(record_property):
    start = time.perf_counter()
    emb_tests.test_embedding_invariants()
    emb_tests.test_graph_normalization_scale_invariance()
    elapsed = time.perf_counter() - start
    record_property("detail", f"dimension, mass, EDF monotonicity, scale invariance in {elapsed:.1f}s")
    assert elapsed < 30


@pytest.mark.acceptance("Forest sanity")
def test_forest_sanity(record_property):
    bayes = forest_tests.bayes_accuracy()
    assert bayes == pytest.approx(math.erf(1.0) / 2 + 0.5, abs=1e-12)

    rng = np.random.default_rng(0)
    X = rng.normal(size=(300, 12))
    y = (X[:, 0] + 0.5 * X[:, 1] + rng.normal(0, 0.5, 300) > 0).astype(int)
    probe = rng.normal(size=(200, 12))
    one = fit(X, y, ForestConfig(n_trees=40, seed=4), n_jobs=1)
    eight = fit(X, y, ForestConfig(n_trees=40, seed=4), n_jobs=8)
    assert one.predict(probe).tobytes() == eight.predict(probe).tobytes()
    assert one.to_bytes() == eight.to_bytes()

    xs = np.linspace(-3, 3, 200)
    Xs = np.stack([xs, rng.normal(size=200)], axis=1)
    ys = (xs > 0.1).astype(int)
    assert fit(Xs, ys, ForestConfig(n_trees=50, seed=1)).score(Xs, ys) == 1.0

    Xg, yg, Xt, yt = forest_tests.two_gaussians(0)
    acc = fit(Xg, yg, ForestConfig(n_trees=500, seed=0)).score(Xt, yt)
    record_property("detail", f"1 vs 8 workers identical; separable 100%; gaussian {acc:.3f} (Bayes {bayes:.4f})")
    assert acc >= 0.90


REPRODUCTION = [
    ("IMDB-B", "ltp", 74.5),
    ("IMDB-M", "ltp", 50.0),
    ("PROTEINS", "ltp", 72.7),
    ("DD", "ltp", 77.1),
    ("NCI1", "ltp", 77.0),
    ("IMDB-B", "ldp", 71.3),
]
REPRO_KEYS = sorted({k for k, _, _ in REPRODUCTION})
REPRO_GAP = missing(REPRO_KEYS, cores=8)


@pytest.mark.acceptance("Reproduction on small and medium datasets")
@pytest.mark.slow
@pytest.mark.xfail(bool(REPRO_GAP), reason=REPRO_GAP, strict=False)
def test_reproduction(record_property):
    require(REPRO_KEYS)
    lines, failures = [], []
    for key, features, target in REPRODUCTION:
        d = load_benchmark(key)
        start = time.perf_counter()
        report = run_cv(d, DEFAULTS.replace(feature_set=features), FOREST,
                        stratified_kfold(d.labels, 10, 0), n_jobs=CORES)
        elapsed = time.perf_counter() - start
        got = 100 * report.mean
        lines.append(f"{key}/{features} {got:.1f} vs {target} in {elapsed:.0f}s")
        if abs(got - target) > 3.0 or elapsed > 600:
            failures.append(lines[-1])
    record_property("detail", "; ".join(lines))
    assert not failures, failures


ALL_DATASETS = list(BENCHMARK_DIRS)
ABLATION_GAP = missing(ALL_DATASETS)


@pytest.mark.acceptance("Ablation direction")
@pytest.mark.slow
@pytest.mark.xfail(bool(ABLATION_GAP), reason=ABLATION_GAP, strict=False)
def test_ablation_direction(record_property):
    require(ALL_DATASETS)
    wins, lines = 0, []
    pair = {v: ABLATION_VARIANTS[v] for v in ("LDP", "LTP")}
    for key in ALL_DATASETS:
        d = load_benchmark(key)
        reports = ablation(d, DEFAULTS, FOREST, stratified_kfold(d.labels, 10, 0), pair, n_jobs=CORES)
        ldp, ltp = reports["LDP"].mean, reports["LTP"].mean
        wins += ltp >= ldp
        lines.append(f"{key} {100 * ldp:.1f}->{100 * ltp:.1f}")
    record_property("detail", f"LTP >= LDP on {wins}/9: " + ", ".join(lines))
    assert wins >= 6


@pytest.mark.acceptance("Rank computation")
def test_rank_computation(record_property):
    table, datasets = read_accuracy_table(TABLE)
    assert [m for m in table if any(v is None for v in table[m])] == ["ECC"]
    ranks = average_rank(table, datasets, ties="dense")
    rounded = {m: round(r, 1) for m, r in ranks.average.items()}
    record_property("detail", ", ".join(f"{m} {r}" for m, r in rounded.items()))
    assert (rounded["GIN"], rounded["LTP"], rounded["ECC"]) == (2.7, 2.6, 7.6)
    assert rounded == {"Baseline": 3.8, "DGCNN": 5.2, "DiffPool": 4.6, "ECC": 7.6,
                       "GIN": 2.7, "GraphSAGE": 5.4, "LDP": 4.0, "LTP": 2.6}
    ecc = ranks.models.index("ECC")
    for i, ds in enumerate(datasets):
        if table["ECC"][i] is None:
            assert ranks.ranks[i, ecc] == ranks.ranks[i].max(), ds


SCALE_GAP = missing(["REDDIT-B", "COLLAB"], cores=8)


def peak_rss_bytes() -> int:
    # ru_maxrss is in KiB on Linux
    own = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    children = resource.getrusage(resource.RUSAGE_CHILDREN).ru_maxrss
    return 1024 * max(own, children)


@pytest.mark.acceptance("Scalability")
@pytest.mark.slow
@pytest.mark.xfail(bool(SCALE_GAP), reason=SCALE_GAP, strict=False)
def test_scalability(record_property):
    require(["REDDIT-B", "COLLAB"])
    lines = []
    for key in ("REDDIT-B", "COLLAB"):
        d = load_benchmark(key)
        report = run_cv(d, DEFAULTS, FOREST, stratified_kfold(d.labels, 10, 0), n_jobs=CORES)
        lines.append(f"{key} {100 * report.mean:.1f}")
    peak = peak_rss_bytes()
    collab = load_benchmark("COLLAB")
    rates = {}
    for workers in (1, 8):
        start = time.perf_counter()
        compute_all_descriptors(collab.graphs, DEFAULTS.features, workers)
        rates[workers] = len(collab) / (time.perf_counter() - start)
    speedup = rates[8] / rates[1]
    record_property("detail", f"{', '.join(lines)}; peak RSS {peak / 2**30:.2f} GiB; speedup {speedup:.2f}x")
    assert peak < 16 * 2**30
    assert speedup >= 3.0
