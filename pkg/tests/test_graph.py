import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from conftest import dense_adj_norm, graphs, random_graph
from gfgn import tensor as T
from gfgn.graph import (GraphFormatError, SparseOperator, XorShift64Star, add_random_edges, edge_homophily,
                        induced_subgraph, largest_component_sample, load_edges, normalized_adjacency,
                        normalized_laplacian, read_edge_file, round_half_up, write_edge_file)
from gfgn.tensor import DimensionError, Tensor


def test_load_edges_degrees():
    g = load_edges([(0, 1)], 3)
    assert np.array_equal(g.deg_aug, [2, 2, 1])
    e = load_edges([], 2)
    assert np.array_equal(e.deg_aug, [1, 1]) and e.csr_targets.size == 0


def test_load_edges_cleans_input():
    g = load_edges([(0, 1), (1, 0), (0, 1), (2, 2), (2, 1)], 3)
    assert g.num_edges == 2
    assert g.edges().tolist() == [[0, 1], [1, 2]]


def test_load_edges_index_error():
    with pytest.raises(GraphFormatError, match="edge 1"):
        load_edges([(0, 1), (0, 3)], 3)


def test_edge_file_round_trip(tmp_path):
    g = load_edges([(0, 4), (1, 2), (3, 4)], 5)
    write_edge_file(g, tmp_path / "e.tsv")
    assert read_edge_file(tmp_path / "e.tsv", 5) == g


def test_edge_file_errors_carry_line(tmp_path):
    p = tmp_path / "e.tsv"
    p.write_text("# header\n0\t1\n1\tx\n")
    with pytest.raises(GraphFormatError, match=r"e.tsv:3"):
        read_edge_file(p)
    p.write_text("0\t1\n0\t9\n")
    with pytest.raises(GraphFormatError, match=r"e.tsv:2"):
        read_edge_file(p, n=3)


def test_normalized_adjacency_examples():
    assert normalized_adjacency(load_edges([], 1)).dense().tolist() == [[1.0]]
    A = normalized_adjacency(load_edges([(0, 1)], 2)).dense()
    assert np.allclose(A, [[0.5, 0.5], [0.5, 0.5]], rtol=0, atol=1e-15)
    path = load_edges([(0, 1), (1, 2)], 3)
    assert np.allclose(normalized_adjacency(path).dense().sum(1), dense_adj_norm(path).sum(1), atol=1e-15)


def test_laplacian_examples():
    assert not normalized_laplacian(load_edges([], 3), self_loops=True).dense().any()
    assert not normalized_laplacian(load_edges([], 3), self_loops=False).dense().any()
    k2 = normalized_laplacian(load_edges([(0, 1)], 2), self_loops=False).dense()
    assert np.allclose(np.linalg.eigvalsh(k2), [0, 2])
    c4 = normalized_laplacian(load_edges([(0, 1), (1, 2), (2, 3), (3, 0)], 4), self_loops=False).dense()
    assert np.allclose(np.linalg.eigvalsh(c4), [0, 1, 1, 2])


def test_isolated_node_row_is_zero_without_self_loops():
    L = normalized_laplacian(load_edges([(0, 1)], 3), self_loops=False).dense()
    assert not L[2].any() and not L[:, 2].any()


@given(graphs(max_nodes=10))
def test_graph_invariants(g):
    A = g.adjacency().toarray()
    assert np.array_equal(A, A.T)
    assert A.max(initial=0) <= 1 and not np.diag(A).any()
    for i in range(g.n):
        nb = g.neighbors(i)
        assert np.all(np.diff(nb) > 0)
    assert np.all(g.deg_aug >= 1)
    assert load_edges(g.edges(), g.n) == g


@given(graphs(max_nodes=12), st.booleans())
def test_laplacian_spectrum_in_range(g, loops):
    ev = np.linalg.eigvalsh(normalized_laplacian(g, self_loops=loops).dense())
    assert ev.min() > -1e-10 and ev.max() < 2 + 1e-10


def test_spmm_examples(rng):
    h = Tensor(rng.standard_normal((4, 3)))
    assert np.array_equal(T.spmm(SparseOperator(sp.identity(4, format="csr")), h).data, h.data)
    assert not T.spmm(SparseOperator(sp.csr_matrix((4, 4))), h).data.any()
    g = random_graph(5, rng)
    A = normalized_adjacency(g)
    H = rng.standard_normal((5, 3))
    assert np.max(np.abs(T.spmm(A, Tensor(H)).data - A.dense() @ H)) < 1e-12
    with pytest.raises(DimensionError):
        T.spmm(A, h)


@given(graphs(max_nodes=16), st.integers(0, 2**31))
def test_spmm_matches_dense_and_gradient(g, seed):
    r = np.random.default_rng(seed)
    H = Tensor(r.standard_normal((g.n, 3)), requires_grad=True)
    A = normalized_adjacency(g)
    out = T.spmm(A, H)
    assert np.max(np.abs(out.data - A.dense() @ H.data)) < 1e-12
    G = r.standard_normal((g.n, 3))
    with T.Tape():
        T.backward(T.total(T.mul(T.spmm(A, H), Tensor(G))))
    assert np.allclose(H.grad, A.dense().T @ G, atol=1e-12)


def test_xorshift_reference_values():
    a, b = XorShift64Star(42), XorShift64Star(42)
    seq = [a.next_u64() for _ in range(5)]
    assert seq == [b.next_u64() for _ in range(5)]
    assert len(set(seq)) == 5 and all(0 <= v < 2**64 for v in seq)
    assert all(0 <= XorShift64Star(s).below(7) < 7 for s in range(50))


def test_round_half_up():
    assert [round_half_up(x) for x in (0.5, 1.5, 2.5, 2.4999)] == [1, 2, 3, 2]


def test_add_random_edges_examples(rng):
    g = random_graph(12, rng, 0.2)
    assert add_random_edges(g, 0.0, 1) is g
    ten = load_edges([(i, i + 1) for i in range(10)], 11)
    assert add_random_edges(ten, 0.2, 3).num_edges == 12
    with pytest.raises(ValueError):
        add_random_edges(load_edges([(0, 1)], 3), 5.0, 0)


@given(graphs(min_nodes=4, max_nodes=14), st.floats(0, 1.0), st.integers(0, 10**6))
def test_add_random_edges_properties(g, ratio, seed):
    absent = g.n * (g.n - 1) // 2 - g.num_edges
    want = round_half_up(ratio * g.num_edges)
    if want > absent:
        with pytest.raises(ValueError):
            add_random_edges(g, ratio, seed)
        return
    h = add_random_edges(g, ratio, seed)
    assert h.num_edges == g.num_edges + want
    old = set(map(tuple, g.edges().tolist()))
    assert old <= set(map(tuple, h.edges().tolist()))
    assert h == add_random_edges(g, ratio, seed)


def test_add_random_edges_dense_fill_path():
    # more than half of the absent pairs requested: exercises the shuffle path
    g = load_edges([(0, 1), (1, 2), (2, 3), (3, 4)], 6)
    h = add_random_edges(g, 2.5, 11)
    assert h.num_edges == 14


def test_edge_homophily(rng):
    g = random_graph(10, rng, 0.5)
    assert edge_homophily(g, np.zeros(10, int)) == 1.0
    bip = load_edges([(0, 1), (1, 2), (2, 3)], 4)
    assert edge_homophily(bip, [0, 1, 0, 1]) == 0.0
    labels = rng.integers(0, 3, 10)
    same = sum(labels[i] == labels[j] for i in range(10) for j in g.neighbors(i) if i < j)
    assert edge_homophily(g, labels) == same / g.num_edges
    assert np.isnan(edge_homophily(load_edges([], 3), [0, 1, 2]))


def test_subgraph_sampling(rng):
    g = random_graph(40, rng, 0.08)
    nodes = largest_component_sample(g, 15)
    assert nodes.size <= 15 and np.all(np.diff(nodes) > 0)
    sub = induced_subgraph(g, nodes)
    assert sub.n == nodes.size
    assert np.array_equal(largest_component_sample(g, 100), np.arange(40))
