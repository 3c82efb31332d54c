import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gfgn.data import (DataError, Dataset, Split, SynthSpec, directory_hash, generate_synthetic, load_dataset,
                       random_split, row_normalize, write_dataset)
from gfgn.graph import edge_homophily, load_edges

DATA_ROOT = os.environ.get("GFGN_DATA")


def toy():
    g = load_edges([(0, 1)], 2)
    return Dataset(g, np.array([[0.25, 0.1], [1.0 / 3.0, 2.0]]), np.array([0, 1]), 2, "toy",
                   [])


def test_toy_round_trip(tmp_path):
    d = toy()
    write_dataset(d, tmp_path / "toy", row_normalize_on_load=False)
    assert load_dataset(tmp_path / "toy") == d


@settings(max_examples=20)
@given(st.integers(10, 30), st.integers(1, 5), st.integers(0, 2**31))
def test_round_trip_property(tmp_path_factory, n, D, seed):
    r = np.random.default_rng(seed)
    labels = np.concatenate([[0, 1, 2], r.integers(0, 3, n - 3)])
    iu, ju = np.triu_indices(n, 1)
    keep = r.random(iu.size) < 0.3
    g = load_edges(np.stack([iu[keep], ju[keep]], 1), n)
    d = Dataset(g, r.standard_normal((n, D)) * 10 ** r.uniform(-5, 5), labels, 3, "prop",
                [random_split(n, (0.4, 0.3, 0.3), seed)])
    out = tmp_path_factory.mktemp("rt")
    write_dataset(d, out, row_normalize_on_load=False)
    assert load_dataset(out) == d


def test_distinct_errors(tmp_path):
    d = toy()
    base = tmp_path / "base"
    write_dataset(d, base, row_normalize_on_load=False)
    with pytest.raises(DataError, match="does not exist"):
        load_dataset(tmp_path / "missing")
    (base / "labels.tsv").rename(base / "labels.bak")
    with pytest.raises(DataError, match="labels.tsv: missing file"):
        load_dataset(base)
    (base / "labels.bak").rename(base / "labels.tsv")
    (base / "features.tsv").write_text("1\t2\n3\n")
    with pytest.raises(DataError, match=r"features.tsv:2: ragged"):
        load_dataset(base)
    (base / "features.tsv").write_text("1\t2\n3\t4\n")
    (base / "labels.tsv").write_text("0\n7\n")
    with pytest.raises(DataError, match=r"label 7 on row 2"):
        load_dataset(base)
    (base / "labels.tsv").write_text("0\nx\n")
    with pytest.raises(DataError, match=r"labels.tsv:2"):
        load_dataset(base)
    (base / "labels.tsv").write_text("0\n1\n")
    (base / "edges.tsv").write_text("0\t5\n")
    with pytest.raises(DataError, match=r"edges.tsv:1"):
        load_dataset(base)


def test_row_normalization_flag(tmp_path):
    d = toy()
    write_dataset(d, tmp_path / "a", row_normalize_on_load=True)
    loaded = load_dataset(tmp_path / "a")
    assert loaded.row_normalized
    assert np.allclose(np.abs(loaded.features).sum(1), 1.0)
    assert np.array_equal(load_dataset(tmp_path / "a", row_normalize_features=False).features, d.features)
    assert not row_normalize(np.zeros((2, 3))).any()


def test_content_hash_tracks_files(tmp_path):
    write_dataset(toy(), tmp_path / "a", row_normalize_on_load=False)
    h1 = directory_hash(tmp_path / "a")
    assert h1 == directory_hash(tmp_path / "a")
    (tmp_path / "a" / "labels.tsv").write_text("1\n0\n")
    assert directory_hash(tmp_path / "a") != h1


def test_dataset_invariants():
    g = load_edges([(0, 1)], 3)
    with pytest.raises(DataError, match="never appear"):
        Dataset(g, np.zeros((3, 2)), [0, 0, 2], 3)
    with pytest.raises(DataError):
        Dataset(g, np.zeros((2, 2)), [0, 1, 2], 3)
    with pytest.raises(DataError):
        Dataset(g, np.zeros((3, 2)), [0, 1, 2], 3, splits=[Split([0], [0], [1])])


def test_random_split_sizes():
    assert random_split(100, seed=0).sizes() == (48, 32, 20)
    assert random_split(183, seed=0).sizes() == (87, 58, 38)
    assert random_split(50, seed=3) == random_split(50, seed=3)
    assert random_split(50, seed=3) != random_split(50, seed=4)
    with pytest.raises(DataError):
        random_split(2)
    with pytest.raises(DataError):
        random_split(100, (0.5, 0.5, 0.5))


@given(st.integers(5, 500), st.integers(0, 2**31))
def test_random_split_partition(n, seed):
    s = random_split(n, seed=seed)
    allidx = np.concatenate([s.train, s.val, s.test])
    assert np.array_equal(np.sort(allidx), np.arange(n))
    assert s.train.size == int(np.floor(0.48 * n + 1e-9)) and s.val.size == int(np.floor(0.32 * n + 1e-9))


def test_synth_examples():
    d = generate_synthetic(SynthSpec(n=60, C=2, D=4, homophilous_dims=(0,), p_in=1.0, p_out=0.0, seed=2))
    assert edge_homophily(d.graph, d.labels) == 1.0
    d = generate_synthetic(SynthSpec(n=400, C=4, D=16, homophilous_dims=range(8), p_in=0.05, p_out=0.005,
                                     signal_strength=1.0, seed=7))
    assert edge_homophily(d.graph, d.labels) > 0.6


def test_synth_without_signal_is_uninformative():
    from scipy.special import softmax
    d = generate_synthetic(SynthSpec(n=2000, C=4, D=16, homophilous_dims=(), seed=5))
    X = np.hstack([d.features, np.ones((d.n, 1))])
    tr, te = np.arange(1000), np.arange(1000, 2000)
    Y = np.eye(4)[d.labels]
    W = np.zeros((17, 4))
    for _ in range(300):
        P = softmax(X[tr] @ W, axis=1)
        W -= 0.1 * (X[tr].T @ (P - Y[tr]) / tr.size + 1e-2 * W)
    acc = np.mean(np.argmax(X[te] @ W, 1) == d.labels[te])
    assert abs(acc - 0.25) < 0.05


def test_synth_deterministic_and_signal():
    spec = SynthSpec(n=300, C=3, D=6, homophilous_dims=(1, 4), seed=11)
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    assert a == b and np.array_equal(a.features, b.features)
    # dim 1 carries class 0, dim 4 carries class 1
    assert a.features[a.labels == 0, 1].mean() > 0.7
    assert a.features[a.labels == 1, 4].mean() > 0.7
    assert abs(a.features[:, 0].mean()) < 0.2


def test_synth_spec_validation():
    with pytest.raises(DataError):
        SynthSpec(D=4, homophilous_dims=(4,))
    with pytest.raises(DataError):
        SynthSpec(p_in=0.1, p_out=0.2)
    with pytest.raises(DataError):
        SynthSpec.from_json({"n": 10, "bogus": 1})
    assert SynthSpec.from_json(SynthSpec(seed=3).to_json()) == SynthSpec(seed=3)


@pytest.mark.skipif(not DATA_ROOT, reason="GFGN_DATA not set")
@pytest.mark.parametrize("name,n,D,C", [("texas", 183, 1703, 5), ("cora", 2708, 1433, 7)])
def test_reference_datasets(name, n, D, C):
    path = os.path.join(DATA_ROOT, name)
    if not os.path.isdir(path):
        pytest.skip(f"{path} not present")
    d = load_dataset(path)
    assert (d.n, d.num_features, d.num_classes) == (n, D, C)
