"""MLP, GCN and the three feature-gating layers (graph, neighbor, pair level).

All gating layers share one update rule per output dimension::

    H'_i = act( (1 - a_i) * (H W)_i + sum_{j in N~(i)} s_ij * (H W)_j / sqrt(d~_i d~_j) )

where N~(i) is the neighborhood of i including i itself and d~ are the
self-loop-augmented degrees. The variants differ only in how the smoothing
scores ``s`` are shared:

* graph:    one score vector for the whole graph, a_i = s
* neighbor: one vector per node, a_i = s_i
* pair:     one vector per ordered pair (i, j), a_i = sum_j s_ij / d~_i

Scores are ``lam * sigmoid(. @ W_s)`` per head, so they lie in (0, lam).
The transform ``W`` of a layer with K heads is stored as one D_in x D_out
matrix whose K column blocks are the per-head transforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .graph import Graph, normalized_adjacency
from .tensor import ConfigError, DimensionError, Tensor

VARIANTS = ("graph", "neighbor", "pair")
MODELS = ("mlp", "gcn", "gfgn-graph", "gfgn-neighbor", "gfgn-pair")

ACTIVATIONS = {"relu": T.relu, "identity": T.identity, None: T.identity}


def _activation(act):
    if callable(act):
        return act
    try:
        return ACTIVATIONS[act]
    except KeyError:
        raise ConfigError(f"unknown activation {act!r}") from None


@dataclass(frozen=True)
class GraphOperators:
    """Constant sparse operators a gating layer needs for one graph."""

    adj: sp.csr_matrix        # n x n, D~^-1/2 A~ D~^-1/2
    mean: sp.csr_matrix       # n x n, row i averages over N~(i)
    gather_src: sp.csr_matrix  # E x n, row e selects node src[e]
    gather_dst: sp.csr_matrix  # E x n, row e selects node dst[e]
    pair_sum: sp.csr_matrix   # n x E, row i sums pairs (i, j) with j != i
    gather_self: sp.csr_matrix  # n x E, row i selects the pair (i, i)
    pair_agg: sp.csr_matrix   # n x E, same pattern weighted by 1/sqrt(d~_i d~_j)
    inv_deg: Tensor           # n x 1, 1/d~_i
    src: np.ndarray
    dst: np.ndarray


def graph_operators(g: Graph) -> GraphOperators:
    if "ops" in g._cache:
        return g._cache["ops"]
    n = g.n
    src, dst = g.augmented_pairs()
    E = src.size
    adj = normalized_adjacency(g).matrix
    indptr = np.concatenate([[0], np.cumsum(np.bincount(src, minlength=n))])
    inv_deg = 1.0 / g.deg_aug
    mean = sp.csr_matrix((inv_deg[src], dst, indptr), shape=(n, n))
    rows = np.arange(E + 1)
    gather_src = sp.csr_matrix((np.ones(E), src, rows), shape=(E, n))
    gather_dst = sp.csr_matrix((np.ones(E), dst, rows), shape=(E, n))
    off = src != dst
    off_ptr = np.concatenate([[0], np.cumsum(np.bincount(src[off], minlength=n))])
    pair_sum = sp.csr_matrix((np.ones(int(off.sum())), np.nonzero(off)[0], off_ptr), shape=(n, E))
    self_edge = np.nonzero(~off)[0]
    gather_self = sp.csr_matrix((np.ones(n), self_edge, np.arange(n + 1)), shape=(n, E))
    pair_agg = sp.csr_matrix((adj.data.copy(), np.arange(E), indptr), shape=(n, E))
    ops = GraphOperators(adj, mean, gather_src, gather_dst, pair_sum, gather_self, pair_agg,
                         Tensor(inv_deg.reshape(-1, 1)), src, dst)
    g._cache["ops"] = ops
    return ops


@dataclass
class ScoreRecord:
    """Smoothing scores of one gating layer.

    ``scores`` is 1 x D (graph), n x D (neighbor) or E x D (pair, one row per
    ordered pair ``(src[e], dst[e])`` of the self-looped graph).
    """

    variant: str
    scores: np.ndarray
    src: Optional[np.ndarray] = None
    dst: Optional[np.ndarray] = None

    def rows(self):
        """CSV rows: (dim, score) / (node, dim, score) / (src, dst, dim, score)."""
        S = self.scores
        if self.variant == "graph":
            for d in range(S.shape[1]):
                yield (d, S[0, d])
        elif self.variant == "neighbor":
            for i in range(S.shape[0]):
                for d in range(S.shape[1]):
                    yield (i, d, S[i, d])
        else:
            for e in range(S.shape[0]):
                for d in range(S.shape[1]):
                    yield (int(self.src[e]), int(self.dst[e]), d, S[e, d])

    @property
    def header(self):
        return {"graph": ("dim", "score"), "neighbor": ("node", "dim", "score"),
                "pair": ("src", "dst", "dim", "score")}[self.variant]

    def dim_means(self) -> np.ndarray:
        """Mean score per output dimension over nodes or pairs."""
        return self.scores.mean(axis=0)


def input_attribution(W: np.ndarray, dim_scores: np.ndarray) -> np.ndarray:
    """Carry per-hidden-unit scores back to input dimensions.

    Input d gets the average of the hidden scores weighted by W[d, j]^2, the
    share of unit j's squared weight mass that comes from d.
    """
    W2 = np.asarray(W) ** 2
    mass = W2.sum(axis=1)
    return np.divide(W2 @ np.asarray(dim_scores).ravel(), mass, out=np.zeros_like(mass), where=mass > 0)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, name: str = "") -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True, name=name)


@dataclass
class GfgnLayerParams:
    variant: str
    W: Tensor
    W_s: list
    lam: float = 1.0
    heads: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown gating variant {self.variant!r}")
        if self.heads < 1 or self.W.cols % self.heads:
            raise ConfigError(f"output width {self.W.cols} is not divisible by {self.heads} heads")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        w = self.head_width
        m = 1 if self.variant == "graph" else 2
        for Ws in self.W_s:
            if Ws.shape != (m * w, w):
                raise DimensionError(f"W_s must be {(m * w, w)} for {self.variant}, got {Ws.shape}")
        if len(self.W_s) != self.heads:
            raise ConfigError(f"expected {self.heads} gating matrices, got {len(self.W_s)}")

    @property
    def head_width(self) -> int:
        return self.W.cols // self.heads

    @classmethod
    def init(cls, variant, in_dim, out_dim, heads, lam, rng_w, rng_s):
        if heads < 1 or out_dim % heads:
            raise ConfigError(f"output width {out_dim} is not divisible by {heads} heads")
        w = out_dim // heads
        m = 1 if variant == "graph" else 2
        W = glorot(rng_w, in_dim, out_dim, "W")
        W_s = [glorot(rng_s, m * w, w, f"W_s[{k}]") for k in range(heads)]
        return cls(variant, W, W_s, lam, heads)

    def parameters(self) -> list:
        return [self.W, *self.W_s]

    def count(self) -> int:
        return sum(p.data.size for p in self.parameters())


def expected_param_count(variant: str, in_dim: int, out_dim: int, heads: int) -> int:
    """D_in * D_out + m * (D_out / K) * D_out with m = 1 (graph) or 2 (neighbor, pair)."""
    m = 1 if variant == "graph" else 2
    return in_dim * out_dim + m * (out_dim // heads) * out_dim


def _gate(z: Tensor, params: "GfgnLayerParams", m: int) -> Tensor:
    """lam * sigmoid(z @ W_s) for all heads in one product.

    ``z`` is the column concatenation of ``m`` full-width inputs; the
    per-head W_s matrices sit on the block structure built by block_heads.
    """
    Ws = params.W_s[0] if params.heads == 1 else T.block_heads(params.W_s, m)
    return T.scale(T.sigmoid(T.matmul(z, Ws)), params.lam)


def mlp_forward(H: Tensor, W: Tensor, activation="identity") -> Tensor:
    return _activation(activation)(T.matmul(H, W))


def gcn_forward(g: Graph, H: Tensor, W: Tensor, activation="identity") -> Tensor:
    if H.rows != g.n:
        raise DimensionError(f"feature matrix has {H.rows} rows, graph has {g.n} nodes")
    return _activation(activation)(T.spmm(graph_operators(g).adj, T.matmul(H, W)))


def _graph_scores_from(HW: Tensor, params: GfgnLayerParams) -> Tensor:
    return _gate(T.row_mean(HW), params, 1)


def _neighbor_scores_from(g: Graph, HW: Tensor, params: GfgnLayerParams) -> Tensor:
    pooled = T.spmm(graph_operators(g).mean, HW)
    return _gate(T.concat_cols(HW, pooled), params, 2)


def _pair_scores_from(g: Graph, HW: Tensor, params: GfgnLayerParams, HW_dst: Optional[Tensor] = None) -> Tensor:
    ops = graph_operators(g)
    HW_src = T.spmm(ops.gather_src, HW)
    if HW_dst is None:
        HW_dst = T.spmm(ops.gather_dst, HW)
    return _gate(T.concat_cols(HW_src, HW_dst), params, 2)


def _params(W, W_s, lam, variant) -> GfgnLayerParams:
    W_s = list(W_s) if isinstance(W_s, (list, tuple)) else [W_s]
    return GfgnLayerParams(variant, W, W_s, lam, len(W_s))


def gfgn_graph_scores(H: Tensor, W: Tensor, W_s, lam: float) -> ScoreRecord:
    """s = lam * sigmoid(mean_i(H W)_i @ W_s), one 1 x D_out vector (per head, concatenated)."""
    s = _graph_scores_from(T.matmul(H, W), _params(W, W_s, lam, "graph"))
    return ScoreRecord("graph", s.data)


def gfgn_neighbor_scores(g: Graph, H: Tensor, W: Tensor, W_s, lam: float) -> ScoreRecord:
    s = _neighbor_scores_from(g, T.matmul(H, W), _params(W, W_s, lam, "neighbor"))
    return ScoreRecord("neighbor", s.data)


def gfgn_pair_scores(g: Graph, H: Tensor, W: Tensor, W_s, lam: float) -> ScoreRecord:
    ops = graph_operators(g)
    s = _pair_scores_from(g, T.matmul(H, W), _params(W, W_s, lam, "pair"))
    return ScoreRecord("pair", s.data, ops.src, ops.dst)


def _override(score_override, rows: int, cols: int) -> Tensor:
    s = np.asarray(score_override.data if isinstance(score_override, Tensor) else score_override,
                   dtype=np.float64)
    s = np.atleast_2d(s)
    if s.shape == (1, cols) and rows != 1:
        s = np.tile(s, (rows, 1))
    if s.shape != (rows, cols):
        raise DimensionError(f"score override must have shape {(rows, cols)}, got {s.shape}")
    return Tensor(s)


def _check_rows(g: Graph, H: Tensor):
    if H.rows != g.n:
        raise DimensionError(f"feature matrix has {H.rows} rows, graph has {g.n} nodes")


def gfgn_graph_forward(g: Graph, H: Tensor, params: GfgnLayerParams, activation="identity",
                       score_override=None) -> tuple[Tensor, ScoreRecord]:
    _check_rows(g, H)
    HW = T.matmul(H, params.W)
    if score_override is None:
        s = _graph_scores_from(HW, params)
    else:
        s = _override(score_override, 1, HW.cols)
    # scaling before aggregating gives every variant the same float operations
    # when its scores are uniform, so the reductions between them are exact
    agg = T.spmm(graph_operators(g).adj, T.mul(HW, s))
    out = T.add(T.mul(HW, T.rsub(1.0, s)), agg)
    return _activation(activation)(out), ScoreRecord("graph", s.data)


def gfgn_neighbor_forward(g: Graph, H: Tensor, params: GfgnLayerParams, activation="identity",
                          score_override=None) -> tuple[Tensor, ScoreRecord]:
    _check_rows(g, H)
    ops = graph_operators(g)
    HW = T.matmul(H, params.W)
    if score_override is None:
        S = _neighbor_scores_from(g, HW, params)
    else:
        S = _override(score_override, g.n, HW.cols)
    per_pair = T.mul(T.spmm(ops.gather_src, S), T.spmm(ops.gather_dst, HW))
    out = T.add(T.mul(HW, T.rsub(1.0, S)), T.spmm(ops.pair_agg, per_pair))
    return _activation(activation)(out), ScoreRecord("neighbor", S.data)


def gfgn_pair_forward(g: Graph, H: Tensor, params: GfgnLayerParams, activation="identity",
                      score_override=None) -> tuple[Tensor, ScoreRecord]:
    _check_rows(g, H)
    ops = graph_operators(g)
    HW = T.matmul(H, params.W)
    HW_dst = T.spmm(ops.gather_dst, HW)
    if score_override is None:
        S = _pair_scores_from(g, HW, params, HW_dst)
    else:
        S = _override(score_override, ops.src.size, HW.cols)
    # 1 - sum_j s_ij / d~_i, written as 1 - s_ii - sum_{j != i} (s_ij - s_ii) / d~_i
    s_self = T.spmm(ops.gather_self, S)
    spread = T.sub(S, T.spmm(ops.gather_src, s_self))
    self_coef = T.sub(T.rsub(1.0, s_self), T.mul(T.spmm(ops.pair_sum, spread), ops.inv_deg))
    agg = T.spmm(ops.pair_agg, T.mul(S, HW_dst))
    out = T.add(T.mul(HW, self_coef), agg)
    return _activation(activation)(out), ScoreRecord("pair", S.data, ops.src, ops.dst)


_FORWARD = {"graph": gfgn_graph_forward, "neighbor": gfgn_neighbor_forward, "pair": gfgn_pair_forward}


def gfgn_forward(g, H, params: GfgnLayerParams, activation="identity", score_override=None):
    return _FORWARD[params.variant](g, H, params, activation, score_override)


@dataclass
class Layer:
    """One layer of a model: ``kind`` is mlp, gcn, graph, neighbor or pair."""

    kind: str
    W: Tensor
    gating: Optional[GfgnLayerParams] = None
    bias: Optional[Tensor] = None

    def parameters(self) -> list:
        params = self.gating.parameters() if self.gating else [self.W]
        return params + ([self.bias] if self.bias is not None else [])

    def forward(self, g: Optional[Graph], H: Tensor, activation, score_override=None):
        act = _activation(activation)
        post = act if self.bias is None else T.identity
        if self.kind == "mlp":
            out, rec = mlp_forward(H, self.W, post), None
        elif self.kind == "gcn":
            out, rec = gcn_forward(g, H, self.W, post), None
        else:
            out, rec = gfgn_forward(g, H, self.gating, post, score_override)
        if self.bias is not None:
            out = act(T.add(out, self.bias))
        return out, rec


@dataclass
class ModelConfig:
    model: str = "gfgn-graph"
    in_dim: int = 0
    num_classes: int = 0
    heads: int = 8
    units_per_head: int = 8
    lam: float = 1.0
    dropout: float = 0.5
    bias: bool = False
    seed: int = 0

    @property
    def hidden(self) -> int:
        return self.heads * self.units_per_head

    def validate(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; choose from {', '.join(MODELS)}")
        if self.in_dim < 1 or self.num_classes < 1:
            raise ConfigError("in_dim and num_classes must be positive")
        if self.heads < 1 or self.units_per_head < 1:
            raise ConfigError("heads and units_per_head must be positive")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")


def init_streams(seed: int) -> tuple:
    """Independent generators for transforms, gates and dropout.

    Keeping the streams apart makes W identical across model kinds for a seed,
    which is what lets a lambda = 0 gating model reproduce the MLP exactly.
    """
    return tuple(np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))


@dataclass
class Model:
    config: ModelConfig
    layers: list
    dropout_rng: np.random.Generator = field(repr=False, default=None)

    @property
    def uses_graph(self) -> bool:
        return self.config.model != "mlp"

    def parameters(self) -> list:
        return [p for layer in self.layers for p in layer.parameters()]

    def named_parameters(self) -> list:
        out = []
        for li, layer in enumerate(self.layers, 1):
            if layer.gating:
                out.append((f"layer{li}.W", layer.gating.W))
                out.extend((f"layer{li}.W_s[{k}]", w) for k, w in enumerate(layer.gating.W_s))
            else:
                out.append((f"layer{li}.W", layer.W))
            if layer.bias is not None:
                out.append((f"layer{li}.b", layer.bias))
        return out

    def forward(self, g: Optional[Graph], X: Tensor, training: bool = False,
                score_overrides: Optional[Sequence] = None):
        """Returns (logits, [ScoreRecord or None per layer])."""
        p = self.config.dropout
        graph = g if self.uses_graph else None
        H = T.dropout(X, p, training, self.dropout_rng)
        records = []
        last = len(self.layers) - 1
        for li, layer in enumerate(self.layers):
            override = score_overrides[li] if score_overrides else None
            H, rec = layer.forward(graph, H, "identity" if li == last else "relu", override)
            records.append(rec)
            if li != last:
                H = T.dropout(H, p, training, self.dropout_rng)
        return H, records

    def state(self) -> list:
        return [p.data.copy() for p in self.parameters()]

    def load_state(self, state: list):
        for p, v in zip(self.parameters(), state):
            p.data = v.copy()


def build_model(config: ModelConfig) -> Model:
    """Two layers: ``heads`` x ``units_per_head`` hidden units (ReLU), then one head to classes."""
    config.validate()
    rng_w, rng_s, rng_d = init_streams(config.seed)
    dims = [(config.in_dim, config.hidden, config.heads), (config.hidden, config.num_classes, 1)]
    layers = []
    kind = config.model.removeprefix("gfgn-")
    for i, (d_in, d_out, heads) in enumerate(dims):
        if kind in VARIANTS:
            gating = GfgnLayerParams.init(kind, d_in, d_out, heads, config.lam, rng_w, rng_s)
            W = gating.W
        else:
            gating = None
            W = glorot(rng_w, d_in, d_out, "W")
        bias = Tensor(np.zeros((1, d_out)), requires_grad=True, name="b") if config.bias else None
        layers.append(Layer(kind, W, gating, bias))
    return Model(config, layers, rng_d)
