import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from conftest import random_graph
from ltp.descriptors import FEATURES, DescriptorMatrix, compute_descriptors
from ltp.embedding import (
    EmbeddingConfig,
    aggregate,
    column_names,
    dataset_maxima,
    embed_dataset,
    embed_graph,
    embed_values,
    parse_feature_set,
    read_embedding_bin,
    read_embedding_csv,
    write_embedding_bin,
    write_embedding_csv,
)
from ltp.graph import Dataset, generate_synthetic


class TestAggregate:
    def test_histogram(self):
        assert aggregate([0.1, 0.9], 2, "histogram", (0, 1)).tolist() == [0.5, 0.5]

    def test_edf(self):
        assert aggregate([0.1, 0.9], 2, "edf", (0, 1)).tolist() == [0.5, 1.0]

    def test_empty(self):
        assert aggregate([], 3).tolist() == [0, 0, 0]

    def test_degenerate_range(self):
        assert aggregate([2.0, 2.0, 2.0], 4).tolist() == [1, 0, 0, 0]

    def test_right_inclusive_last_bin(self):
        assert aggregate([0.0, 1.0], 4, "histogram", (0, 1)).tolist() == [0.5, 0, 0, 0.5]

    def test_matches_numpy_histogram(self, rng):
        x = rng.random(500) * 7
        expected, _ = np.histogram(x, bins=13, range=(0, 7))
        np.testing.assert_allclose(aggregate(x, 13, "histogram", (0, 7)), expected / 500)

    @pytest.mark.parametrize("bins", [0, -3, 2.5])
    def test_bad_bins(self, bins):
        with pytest.raises(ValueError, match="bins"):
            aggregate([1.0], bins)

    def test_nan_rejected(self):
        with pytest.raises(ValueError, match="NaN"):
            aggregate([1.0, float("nan")], 3)


class TestConfig:
    def test_dimensions(self):
        assert EmbeddingConfig(feature_set="ltp", bins=50).dim == 400
        assert EmbeddingConfig(feature_set="ldp", bins=30).dim == 150
        assert EmbeddingConfig(feature_set="ldp+sp", bins=50).dim == 300

    def test_feature_expansion_is_canonical(self):
        cfg = EmbeddingConfig(feature_set=("lds", "ldp5", "ebc"))
        assert cfg.features == ("degree", "dn_min", "dn_max", "dn_mean", "dn_std", "ebc", "lds")
        assert parse_feature_set("ltp") == ("ldp5", "ebc", "ji", "lds")

    @pytest.mark.parametrize(
        "kw", [{"bins": 0}, {"aggregation": "kde"}, {"normalization": "max"}, {"feature_set": ""}, {"feature_set": "foo"}]
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            EmbeddingConfig(**kw)

    def test_dict_roundtrip(self):
        cfg = EmbeddingConfig(bins=30, aggregation="edf", normalization="graph", log_scale=True)
        assert EmbeddingConfig.from_dict(cfg.to_dict()) == cfg


def test_two_graph_fixture():
    d = Dataset("f", [generate_synthetic("complete", 3), generate_synthetic("path", 2)], [0, 1], 2)
    X = embed_dataset(d, EmbeddingConfig(bins=2, feature_set="ldp"))
    assert X.shape == (2, 10)
    np.testing.assert_allclose(X.reshape(2, 5, 2).sum(axis=2), 1.0)


def test_dataset_normalization_divides_by_global_max():
    star = generate_synthetic("star", 5)  # degree 4 at the center
    path = generate_synthetic("path", 3)  # center degree 2
    cfg = EmbeddingConfig(bins=4, normalization="dataset", feature_set="ldp")
    stats = dataset_maxima([compute_descriptors(g) for g in (star, path)], cfg)
    assert stats["degree"] == 4
    # path degrees 1, 2, 1 -> 0.25, 0.5, 0.25 -> bins 1, 2, 1 over [0, 1]
    block = embed_values(compute_descriptors(path), cfg, stats)[:4]
    np.testing.assert_allclose(block, [0, 2 / 3, 1 / 3, 0])


def test_dataset_normalization_requires_stats():
    with pytest.raises(ValueError, match="dataset_stats"):
        embed_graph(generate_synthetic("path", 3), EmbeddingConfig(normalization="dataset"))


def test_log_scale_uses_log1p():
    vals = {f: np.array([0.0, np.e - 1]) for f in FEATURES}
    cfg = EmbeddingConfig(bins=2, log_scale=True, normalization="dataset", feature_set="ldp")
    stats = dataset_maxima([vals], cfg)
    assert stats["degree"] == pytest.approx(1.0)


configs = st.builds(
    EmbeddingConfig,
    bins=st.sampled_from([1, 2, 7, 30, 50]),
    aggregation=st.sampled_from(["histogram", "edf"]),
    normalization=st.sampled_from(["none", "graph", "dataset"]),
    log_scale=st.booleans(),
    feature_set=st.sets(st.sampled_from(["ldp5", "sp", "ebc", "ji", "lds"]), min_size=1).map(tuple),
)


@given(configs, st.integers(1, 15), st.floats(0, 1), st.integers(0, 10**6))
def test_embedding_invariants(cfg, n, p, seed):
    g = random_graph(np.random.default_rng(seed), n, p)
    stats = {f: 10.0 for f in cfg.features} if cfg.normalization == "dataset" else None
    vec = embed_graph(g, cfg, stats).values
    assert vec.shape == (len(cfg.features) * cfg.bins,)
    for block in vec.reshape(len(cfg.features), cfg.bins):
        if not block.any():
            continue
        if cfg.aggregation == "histogram":
            assert block.sum() == pytest.approx(1.0, abs=1e-9)
        else:
            assert (np.diff(block) >= -1e-12).all()
            assert block[-1] == pytest.approx(1.0, abs=1e-9)


@given(
    st.lists(st.floats(0, 1e3, allow_nan=False), min_size=1, max_size=60),
    st.floats(1e-3, 1e3),
    st.sampled_from([1, 3, 30, 50, 100]),
    st.sampled_from(["histogram", "edf"]),
)
def test_graph_normalization_scale_invariance(values, c, bins, aggregation):
    x = np.asarray(values)
    # scaling must not underflow, otherwise x * c is not a multiple of x
    tiny = np.finfo(float).tiny
    assume(np.all((x == 0) | ((x >= tiny) & (x * c >= tiny))))
    cfg = EmbeddingConfig(bins=bins, aggregation=aggregation, normalization="graph", feature_set="ebc")
    base = embed_values({"ebc": x}, cfg)
    scaled = embed_values({"ebc": x * c}, cfg)
    np.testing.assert_array_equal(base, scaled)


@given(st.integers(2, 14), st.floats(0.05, 0.95), st.integers(0, 10**6), configs)
def test_permutation_invariance(n, p, seed, cfg):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, p)
    h = g.relabel(rng.permutation(n))
    cfg = cfg.replace(feature_set=tuple(set(cfg.feature_set) - {"lds"}) or ("ldp5",))
    stats = {f: 10.0 for f in cfg.features} if cfg.normalization == "dataset" else None
    np.testing.assert_allclose(embed_graph(g, cfg, stats).values, embed_graph(h, cfg, stats).values, atol=1e-12)


def test_export_formats(tmp_path, rng):
    X = rng.random((4, 6))
    cfg = EmbeddingConfig(bins=3, feature_set="ebc+ji")
    write_embedding_csv(tmp_path / "e.csv", X, column_names(cfg))
    Y, cols = read_embedding_csv(tmp_path / "e.csv")
    assert cols == ["ebc:0", "ebc:1", "ebc:2", "ji:0", "ji:1", "ji:2"]
    assert np.array_equal(X, Y)
    write_embedding_bin(tmp_path / "e.bin", X)
    raw = (tmp_path / "e.bin").read_bytes()
    assert len(raw) == 16 + 8 * X.size
    assert int.from_bytes(raw[:8], "little") == 4 and int.from_bytes(raw[8:16], "little") == 6
    assert np.array_equal(read_embedding_bin(tmp_path / "e.bin"), X)


def test_parallel_descriptors_match_serial():
    d = Dataset(
        "p",
        [random_graph(np.random.default_rng(i), 10, 0.4) for i in range(12)],
        [i % 2 for i in range(12)],
        2,
    )
    cfg = EmbeddingConfig()
    assert np.array_equal(embed_dataset(d, cfg, n_jobs=1), embed_dataset(d, cfg, n_jobs=2))
