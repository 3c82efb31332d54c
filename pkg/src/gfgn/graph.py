"""Immutable undirected graphs in CSR form and the sparse operators built on them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components


class GraphFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    """Symmetric, deduplicated adjacency without self-loops.

    ``deg_aug[i] = 1 + deg(i)`` is the degree of node ``i`` once a self-loop
    is added; every normalized operator in this package is built from it.
    """

    n: int
    csr_offsets: np.ndarray
    csr_targets: np.ndarray
    deg_aug: np.ndarray
    self_loops: bool = True
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_edges(self) -> int:
        """Undirected edge count."""
        return int(self.csr_targets.size // 2)

    def degrees(self) -> np.ndarray:
        return np.diff(self.csr_offsets)

    def neighbors(self, i: int) -> np.ndarray:
        return self.csr_targets[self.csr_offsets[i]:self.csr_offsets[i + 1]]

    def edges(self) -> np.ndarray:
        """Undirected edges as an (m, 2) array with ``u < v``, lexicographically sorted."""
        src = np.repeat(np.arange(self.n), self.degrees())
        keep = src < self.csr_targets
        return np.stack([src[keep], self.csr_targets[keep]], axis=1)

    def adjacency(self) -> sp.csr_matrix:
        data = np.ones(self.csr_targets.size)
        return sp.csr_matrix((data, self.csr_targets, self.csr_offsets), shape=(self.n, self.n))

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.n == other.n
            and np.array_equal(self.csr_offsets, other.csr_offsets)
            and np.array_equal(self.csr_targets, other.csr_targets)
        )

    def __hash__(self):
        return hash((self.n, self.csr_targets.tobytes()))

    def augmented_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Directed pairs ``(i, j)`` with ``j`` in N(i) plus ``i`` itself.

        Ordered by source, then target, which is the storage order of every
        operator returned by :func:`normalized_adjacency`.
        """
        if "pairs" not in self._cache:
            mat = self.adjacency() + sp.identity(self.n, format="csr")
            mat = sp.csr_matrix(mat)
            mat.sort_indices()
            src = np.repeat(np.arange(self.n), np.diff(mat.indptr))
            self._cache["pairs"] = (src, mat.indices.astype(np.int64))
        return self._cache["pairs"]


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """CSR matrix with float64 weights; ``matrix`` is a scipy ``csr_matrix``."""

    matrix: sp.csr_matrix
    symmetric: bool = True

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def nnz(self):
        return self.matrix.nnz

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def __matmul__(self, other):
        return self.matrix @ other


def load_edges(edges: Iterable, n: int) -> Graph:
    """Build a Graph from an edge list that may hold duplicates, both directions and self-edges."""
    arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
    if arr.size == 0:
        arr = arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise GraphFormatError(f"edge list must be pairs, got shape {arr.shape}")
    bad = np.nonzero((arr < 0) | (arr >= n))[0]
    if bad.size:
        k = int(bad[0])
        raise GraphFormatError(f"edge {k}: node index {tuple(arr[k])} outside [0, {n})")
    arr = arr[arr[:, 0] != arr[:, 1]]
    both = np.concatenate([arr, arr[:, ::-1]])
    mat = sp.csr_matrix((np.ones(len(both)), (both[:, 0], both[:, 1])), shape=(n, n))
    mat.sum_duplicates()
    mat.sort_indices()
    offsets = mat.indptr.astype(np.int64)
    targets = mat.indices.astype(np.int64)
    deg_aug = 1.0 + np.diff(offsets).astype(np.float64)
    return Graph(n=n, csr_offsets=offsets, csr_targets=targets, deg_aug=deg_aug)


def read_edge_file(path, n: Optional[int] = None) -> Graph:
    """Read ``src<TAB>dst`` lines (0-indexed, ``#`` comments) into a Graph."""
    pairs = []
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise GraphFormatError(f"{path}:{lineno}: expected 'src<TAB>dst', got {line!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: non-integer node index in {line!r}") from None
            if u < 0 or v < 0 or (n is not None and (u >= n or v >= n)):
                raise GraphFormatError(f"{path}:{lineno}: node index outside [0, {n})")
            pairs.append((u, v))
    if n is None:
        n = 1 + max((max(p) for p in pairs), default=-1)
    return load_edges(pairs, n)


def write_edge_file(g: Graph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# n={g.n} edges={g.num_edges}\n")
        for u, v in g.edges():
            fh.write(f"{u}\t{v}\n")


def normalized_adjacency(g: Graph) -> SparseOperator:
    """D~^{-1/2} (A + I) D~^{-1/2}, diagonal included."""
    if "adj_norm" not in g._cache:
        src, dst = g.augmented_pairs()
        inv_sqrt = 1.0 / np.sqrt(g.deg_aug)
        w = inv_sqrt[src] * inv_sqrt[dst]
        mat = sp.csr_matrix((w, dst, _offsets(src, g.n)), shape=(g.n, g.n))
        g._cache["adj_norm"] = SparseOperator(mat)
    return g._cache["adj_norm"]


def normalized_laplacian(g: Graph, self_loops: bool = True) -> SparseOperator:
    """I minus the normalized adjacency.

    With ``self_loops=False`` the plain ``I - D^{-1/2} A D^{-1/2}`` is built;
    an isolated node there gets degree 1 as a placeholder and a zero diagonal,
    so its row and column of L are all zero.
    """
    eye = sp.identity(g.n, format="csr")
    if self_loops:
        mat = eye - normalized_adjacency(g).matrix
    else:
        deg = g.degrees().astype(np.float64)
        safe = np.where(deg > 0, deg, 1.0)
        inv_sqrt = 1.0 / np.sqrt(safe)
        scaled = sp.diags(inv_sqrt) @ g.adjacency() @ sp.diags(inv_sqrt)
        mat = sp.diags((deg > 0).astype(np.float64)) - scaled
    mat = sp.csr_matrix(mat)
    mat.sort_indices()
    return SparseOperator(mat)


def combinatorial_laplacian(g: Graph) -> SparseOperator:
    """D - A on the raw adjacency."""
    mat = sp.diags(g.degrees().astype(np.float64)) - g.adjacency()
    return SparseOperator(sp.csr_matrix(mat))


def _offsets(src: np.ndarray, n: int) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(np.bincount(src, minlength=n))]).astype(np.int64)


class XorShift64Star:
    """xorshift64* generator (Vigna 2016), seeded through one splitmix64 step.

    Pure integer arithmetic, so a seed gives the same stream on every platform.
    """

    MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        z = (seed + 0x9E3779B97F4A7C15) & self.MASK
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & self.MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & self.MASK
        z ^= z >> 31
        self.state = z or 0x2545F4914F6CDD1D

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & self.MASK
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & self.MASK

    def below(self, bound: int) -> int:
        """Uniform integer in [0, bound) by rejection (no modulo bias)."""
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % bound


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def add_random_edges(g: Graph, ratio: float, seed: int) -> Graph:
    """Add ``round(ratio * |E|)`` new undirected edges chosen uniformly among absent pairs."""
    if ratio < 0:
        raise ValueError(f"noise ratio must be >= 0, got {ratio}")
    count = round_half_up(ratio * g.num_edges)
    if count == 0:
        return g
    absent = g.n * (g.n - 1) // 2 - g.num_edges
    if count > absent:
        raise ValueError(f"cannot add {count} edges: only {absent} absent pairs")
    rng = XorShift64Star(seed)
    existing = g.edges()
    taken = set(map(tuple, existing.tolist()))
    new = []
    if count <= absent // 2:
        while len(new) < count:
            i, j = rng.below(g.n), rng.below(g.n)
            if i == j:
                continue
            pair = (i, j) if i < j else (j, i)
            if pair in taken:
                continue
            taken.add(pair)
            new.append(pair)
    else:
        pool = [(i, j) for i in range(g.n) for j in range(i + 1, g.n) if (i, j) not in taken]
        for k in range(count):
            r = k + rng.below(len(pool) - k)
            pool[k], pool[r] = pool[r], pool[k]
        new = pool[:count]
    return load_edges(np.concatenate([existing, np.array(new, dtype=np.int64)]), g.n)


def edge_homophily(g: Graph, labels) -> float:
    """Fraction of undirected edges whose endpoints carry the same label (nan if edgeless)."""
    labels = np.asarray(labels)
    if labels.shape[0] != g.n:
        raise ValueError(f"labels has length {labels.shape[0]}, graph has {g.n} nodes")
    e = g.edges()
    if len(e) == 0:
        return float("nan")
    return float(np.mean(labels[e[:, 0]] == labels[e[:, 1]]))


def induced_subgraph(g: Graph, nodes) -> Graph:
    nodes = np.asarray(nodes, dtype=np.int64)
    remap = -np.ones(g.n, dtype=np.int64)
    remap[nodes] = np.arange(nodes.size)
    e = g.edges()
    keep = (remap[e[:, 0]] >= 0) & (remap[e[:, 1]] >= 0)
    return load_edges(remap[e[keep]], nodes.size)


def largest_component_sample(g: Graph, max_nodes: int) -> np.ndarray:
    """Nodes of a BFS ball of at most ``max_nodes`` nodes grown from the highest-degree node
    of the largest connected component."""
    if g.n <= max_nodes:
        return np.arange(g.n)
    _, comp = connected_components(g.adjacency(), directed=False)
    big = np.argmax(np.bincount(comp))
    members = np.nonzero(comp == big)[0]
    root = int(members[np.argmax(g.degrees()[members])])
    seen = {root}
    order = [root]
    head = 0
    while head < len(order) and len(order) < max_nodes:
        for v in g.neighbors(order[head]):
            v = int(v)
            if v not in seen:
                seen.add(v)
                order.append(v)
                if len(order) == max_nodes:
                    break
        head += 1
    return np.array(sorted(order), dtype=np.int64)
