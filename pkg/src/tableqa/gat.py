"""Relation-aware graph attention selector with hand-written gradients.

One layer updates every node state h_t by attending over its neighbors plus
itself:

    h_t  <-  f_g( sum_s alpha_st * m_st ) + h_t
    m_st  =  f_m(h_s, u_s, r_st)
    alpha_st = softmax_s( Q_st . K_st / sqrt(N) )   over s in neighbors(t) + {t}
    Q_st  =  g_q(h_s, u_s, r_st)
    K_st  =  g_k(h_t, u_t, r_st)

u is a learned projection of the node kind, r a learned feature of the
(relation, source kind, target kind) triple, f_m/g_q/g_k linear maps, and
f_g a two-layer perceptron with batch normalization. Self-loops use a
dedicated relation category. Attention normalizes over the incoming edges
of each target node. After the final layer a row head scores row-header
nodes and a column head scores column-header nodes.

Forward, loss, and gradient code are all explicit numpy; gradients are
exact (finite-difference checked in the test suite).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Iterator

import numpy as np
from scipy.special import erf

from .featurizer import FeaturizerParams, Vocab, embed_from_ids, embedding_grad, node_token_ids
from .graph import N_NODE_KINDS, N_RELATIONS, Relation, TableGraph

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

N_COMBOS = N_RELATIONS * N_NODE_KINDS * N_NODE_KINDS  # (relation, src kind, dst kind)

# Fixed one-hot encodings of the 64 (relation, src kind, dst kind) triples.
_X_COMBO = np.zeros((N_COMBOS, N_RELATIONS + 2 * N_NODE_KINDS))
for _c in range(N_COMBOS):
    _rel, _ks, _kt = _c // 16, (_c // 4) % 4, _c % 4
    _X_COMBO[_c, _rel] = 1.0
    _X_COMBO[_c, N_RELATIONS + _ks] = 1.0
    _X_COMBO[_c, N_RELATIONS + N_NODE_KINDS + _kt] = 1.0

_COMBO_SRC_KIND = (np.arange(N_COMBOS) // 4) % 4
_COMBO_DST_KIND = np.arange(N_COMBOS) % 4


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class GatConfig:
    layers: int = 3
    dim: int = 200       # node state width
    msg_dim: int = 200   # message / attention width
    type_dim: int = 40   # relation feature width; node-kind feature is half
    dropout: float = 0.2
    top_rows: int = 3
    top_cols: int = 3

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if min(self.dim, self.msg_dim, self.type_dim) <= 0:
            raise ValueError("dims must be positive")
        if self.type_dim % 2:
            raise ValueError("type_dim must be even")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.dim != self.msg_dim:
            # The residual adds the update output to the node state directly.
            raise ValueError("dim and msg_dim must match")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, obj: dict) -> "GatConfig":
        return cls(**obj)


@dataclass
class LayerParams:
    kind_proj: np.ndarray  # (4, T/2)
    rel_w1: np.ndarray     # (T, 12)
    rel_b1: np.ndarray     # (T,)
    rel_w2: np.ndarray     # (T, T)
    rel_b2: np.ndarray     # (T,)
    msg_w: np.ndarray      # (N, D + T/2 + T)
    msg_b: np.ndarray      # (N,)
    query_w: np.ndarray    # (N, D + T/2 + T)
    query_b: np.ndarray    # (N,)
    key_w: np.ndarray      # (N, D + T/2 + T)
    key_b: np.ndarray      # (N,)
    upd_w1: np.ndarray     # (N, N)
    upd_b1: np.ndarray     # (N,)
    bn_gamma: np.ndarray   # (N,)
    bn_beta: np.ndarray    # (N,)
    upd_w2: np.ndarray     # (D, N)
    upd_b2: np.ndarray     # (D,)
    bn_mean: np.ndarray    # (N,) running buffer, not trained
    bn_var: np.ndarray     # (N,) running buffer, not trained


_LAYER_PARAM_FIELDS = (
    "kind_proj", "rel_w1", "rel_b1", "rel_w2", "rel_b2",
    "msg_w", "msg_b", "query_w", "query_b", "key_w", "key_b",
    "upd_w1", "upd_b1", "bn_gamma", "bn_beta", "upd_w2", "upd_b2",
)
_LAYER_BUFFER_FIELDS = ("bn_mean", "bn_var")


@dataclass
class GatParams:
    featurizer: FeaturizerParams
    layers: list[LayerParams]
    row_w: np.ndarray  # (D,)
    row_b: np.ndarray  # (1,)
    col_w: np.ndarray  # (D,)
    col_b: np.ndarray  # (1,)

    def named_parameters(self) -> Iterator[tuple[str, np.ndarray]]:
        yield "featurizer.embedding", self.featurizer.embedding
        for i, lp in enumerate(self.layers):
            for name in _LAYER_PARAM_FIELDS:
                yield f"layers.{i}.{name}", getattr(lp, name)
        yield "row_head.weight", self.row_w
        yield "row_head.bias", self.row_b
        yield "col_head.weight", self.col_w
        yield "col_head.bias", self.col_b

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for i, lp in enumerate(self.layers):
            for name in _LAYER_BUFFER_FIELDS:
                yield f"layers.{i}.{name}", getattr(lp, name)

    def get(self, name: str) -> np.ndarray:
        for n, arr in list(self.named_parameters()) + list(self.named_buffers()):
            if n == name:
                return arr
        raise KeyError(name)

    def copy(self) -> "GatParams":
        return GatParams(
            featurizer=FeaturizerParams(embedding=self.featurizer.embedding.copy()),
            layers=[
                LayerParams(**{
                    f.name: getattr(lp, f.name).copy() for f in fields(LayerParams)
                })
                for lp in self.layers
            ],
            row_w=self.row_w.copy(),
            row_b=self.row_b.copy(),
            col_w=self.col_w.copy(),
            col_b=self.col_b.copy(),
        )

    def check_finite(self) -> bool:
        return all(np.isfinite(a).all() for _, a in self.named_parameters())


def _glorot(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


def init_params(config: GatConfig, vocab_size: int, rng: np.random.Generator) -> GatParams:
    """Initialize all trainable tensors from a seeded generator (fixed draw order)."""
    D, N, T = config.dim, config.msg_dim, config.type_dim
    th = T // 2
    edge_in = D + th + T
    embedding = rng.uniform(-0.05, 0.05, size=(vocab_size, D))
    layers = []
    for _ in range(config.layers):
        layers.append(LayerParams(
            kind_proj=_glorot(rng, (N_NODE_KINDS, th)),
            rel_w1=_glorot(rng, (T, _X_COMBO.shape[1])),
            rel_b1=np.zeros(T),
            rel_w2=_glorot(rng, (T, T)),
            rel_b2=np.zeros(T),
            msg_w=_glorot(rng, (N, edge_in)),
            msg_b=np.zeros(N),
            query_w=_glorot(rng, (N, edge_in)),
            query_b=np.zeros(N),
            key_w=_glorot(rng, (N, edge_in)),
            key_b=np.zeros(N),
            upd_w1=_glorot(rng, (N, N)),
            upd_b1=np.zeros(N),
            bn_gamma=np.ones(N),
            bn_beta=np.zeros(N),
            upd_w2=_glorot(rng, (D, N)),
            upd_b2=np.zeros(D),
            bn_mean=np.zeros(N),
            bn_var=np.ones(N),
        ))
    return GatParams(
        featurizer=FeaturizerParams(embedding=embedding),
        layers=layers,
        row_w=_glorot(rng, (1, D))[0],
        row_b=np.zeros(1),
        col_w=_glorot(rng, (1, D))[0],
        col_b=np.zeros(1),
    )


@dataclass
class GraphTensors:
    """Index arrays for vectorized message passing over one graph."""

    kinds: np.ndarray       # (V,)
    src: np.ndarray         # (E,) sorted by (dst, src); self-loops included
    dst: np.ndarray         # (E,)
    combo: np.ndarray       # (E,) relation*16 + src kind*4 + dst kind
    dst_seg: np.ndarray     # (V+1,) segment offsets grouping edges by dst
    src_perm: np.ndarray    # (E,) permutation sorting edges by src
    src_seg: np.ndarray     # (V+1,)
    combo_perm: np.ndarray  # (E,)
    combo_present: np.ndarray  # (U,) distinct combo ids, ascending
    combo_seg: np.ndarray   # (U+1,)
    row_nodes: np.ndarray   # (n_rows,) row-header node ids
    col_nodes: np.ndarray   # (n_cols,) column-header node ids
    n_nodes: int

    def segsum_dst(self, x: np.ndarray) -> np.ndarray:
        return np.add.reduceat(x, self.dst_seg[:-1], axis=0)

    def segsum_src(self, x: np.ndarray) -> np.ndarray:
        return np.add.reduceat(x[self.src_perm], self.src_seg[:-1], axis=0)

    def segsum_combo(self, x: np.ndarray) -> np.ndarray:
        sums = np.add.reduceat(x[self.combo_perm], self.combo_seg[:-1], axis=0)
        out_shape = (N_COMBOS,) + x.shape[1:]
        out = np.zeros(out_shape)
        out[self.combo_present] = sums
        return out


def tensors_from_arrays(
    kinds: np.ndarray,
    src: np.ndarray,
    dst: np.ndarray,
    rel: np.ndarray,
    row_nodes: np.ndarray,
    col_nodes: np.ndarray,
) -> GraphTensors:
    """Build message-passing tensors from directed edges (self-loops added here)."""
    V = len(kinds)
    kinds = np.asarray(kinds, dtype=np.int64)
    src = np.concatenate([np.asarray(src, dtype=np.int64), np.arange(V)])
    dst = np.concatenate([np.asarray(dst, dtype=np.int64), np.arange(V)])
    rel = np.concatenate(
        [np.asarray(rel, dtype=np.int64), np.full(V, int(Relation.SELF_LOOP))]
    )
    order = np.lexsort((src, dst))
    src, dst, rel = src[order], dst[order], rel[order]
    combo = rel * 16 + kinds[src] * 4 + kinds[dst]

    dst_seg = np.searchsorted(dst, np.arange(V + 1))
    src_perm = np.argsort(src, kind="stable")
    src_seg = np.searchsorted(src[src_perm], np.arange(V + 1))
    combo_perm = np.argsort(combo, kind="stable")
    combo_sorted = combo[combo_perm]
    combo_present, first = np.unique(combo_sorted, return_index=True)
    combo_seg = np.append(first, len(combo_sorted))

    return GraphTensors(
        kinds=kinds,
        src=src,
        dst=dst,
        combo=combo,
        dst_seg=dst_seg,
        src_perm=src_perm,
        src_seg=src_seg,
        combo_perm=combo_perm,
        combo_present=combo_present,
        combo_seg=combo_seg,
        row_nodes=np.array(graph.row_header_ids, dtype=np.int64),
        col_nodes=np.array(graph.col_header_ids, dtype=np.int64),
        n_nodes=V,
    )


def _split_edge_weight(w: np.ndarray, dim: int, th: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return w[:, :dim], w[:, dim : dim + th], w[:, dim + th :]


@dataclass
class _LayerCache:
    h_in: np.ndarray
    z1_rel: np.ndarray
    a1_rel: np.ndarray
    rel_feat: np.ndarray
    m: np.ndarray
    q: np.ndarray
    k: np.ndarray
    alpha: np.ndarray
    agg: np.ndarray
    z_upd: np.ndarray
    bn_xhat: np.ndarray
    bn_inv: np.ndarray
    bn_train: bool
    y_bn: np.ndarray
    act: np.ndarray
    drop_mask: np.ndarray | None = None


def _layer_forward(
    lp: LayerParams,
    H: np.ndarray,
    gt: GraphTensors,
    config: GatConfig,
    train: bool,
    update_stats: bool,
) -> tuple[np.ndarray, _LayerCache]:
    D, N, T = config.dim, config.msg_dim, config.type_dim
    th = T // 2

    # Relation features for every (relation, src kind, dst kind) triple.
    z1_rel = _X_COMBO @ lp.rel_w1.T + lp.rel_b1
    a1_rel = gelu(z1_rel)
    rel_feat = a1_rel @ lp.rel_w2.T + lp.rel_b2  # (64, T)

    wm_h, wm_u, wm_r = _split_edge_weight(lp.msg_w, D, th)
    wq_h, wq_u, wq_r = _split_edge_weight(lp.query_w, D, th)
    wk_h, wk_u, wk_r = _split_edge_weight(lp.key_w, D, th)

    u = lp.kind_proj  # (4, T/2)
    hm, hq, hk = H @ wm_h.T, H @ wq_h.T, H @ wk_h.T          # (V, N)
    um, uq, uk = u @ wm_u.T, u @ wq_u.T, u @ wk_u.T          # (4, N)
    rm, rq, rk = rel_feat @ wm_r.T, rel_feat @ wq_r.T, rel_feat @ wk_r.T  # (64, N)

    src_kind = gt.kinds[gt.src]
    dst_kind = gt.kinds[gt.dst]
    m = hm[gt.src] + um[src_kind] + rm[gt.combo] + lp.msg_b   # (E, N)
    q = hq[gt.src] + uq[src_kind] + rq[gt.combo] + lp.query_b
    k = hk[gt.dst] + uk[dst_kind] + rk[gt.combo] + lp.key_b

    gamma = (q * k).sum(axis=1) / np.sqrt(N)                  # (E,)
    gmax = np.maximum.reduceat(gamma, gt.dst_seg[:-1])
    ex = np.exp(gamma - gmax[gt.dst])
    denom = np.add.reduceat(ex, gt.dst_seg[:-1])
    alpha = ex / denom[gt.dst]

    agg = gt.segsum_dst(alpha[:, None] * m)                   # (V, N)

    z_upd = agg @ lp.upd_w1.T + lp.upd_b1                     # (V, N)
    if train:
        mu = z_upd.mean(axis=0)
        var = z_upd.var(axis=0)
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (z_upd - mu) * inv
        if update_stats:
            n = z_upd.shape[0]
            unbiased = var * n / (n - 1) if n > 1 else var
            lp.bn_mean *= 1.0 - BN_MOMENTUM
            lp.bn_mean += BN_MOMENTUM * mu
            lp.bn_var *= 1.0 - BN_MOMENTUM
            lp.bn_var += BN_MOMENTUM * unbiased
    else:
        inv = 1.0 / np.sqrt(lp.bn_var + BN_EPS)
        xhat = (z_upd - lp.bn_mean) * inv
    y_bn = lp.bn_gamma * xhat + lp.bn_beta
    act = gelu(y_bn)
    update = act @ lp.upd_w2.T + lp.upd_b2                    # (V, D)

    h_out = update + H
    cache = _LayerCache(
        h_in=H, z1_rel=z1_rel, a1_rel=a1_rel, rel_feat=rel_feat,
        m=m, q=q, k=k, alpha=alpha, agg=agg,
        z_upd=z_upd, bn_xhat=xhat, bn_inv=inv, bn_train=train,
        y_bn=y_bn, act=act,
    )
    return h_out, cache


def _layer_backward(
    lp: LayerParams,
    cache: _LayerCache,
    d_out: np.ndarray,
    gt: GraphTensors,
    config: GatConfig,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    D, N, T = config.dim, config.msg_dim, config.type_dim
    th = T // 2
    g: dict[str, np.ndarray] = {}

    d_h = d_out.copy()  # residual branch

    # f_g: linear -> batch norm -> gelu -> linear
    d_act = d_out @ lp.upd_w2
    g["upd_w2"] = d_out.T @ cache.act
    g["upd_b2"] = d_out.sum(axis=0)
    d_y = d_act * gelu_grad(cache.y_bn)
    g["bn_gamma"] = (d_y * cache.bn_xhat).sum(axis=0)
    g["bn_beta"] = d_y.sum(axis=0)
    d_xhat = d_y * lp.bn_gamma
    if cache.bn_train:
        n = cache.z_upd.shape[0]
        d_z = (cache.bn_inv / n) * (
            n * d_xhat
            - d_xhat.sum(axis=0)
            - cache.bn_xhat * (d_xhat * cache.bn_xhat).sum(axis=0)
        )
    else:
        d_z = d_xhat * cache.bn_inv
    d_agg = d_z @ lp.upd_w1
    g["upd_w1"] = d_z.T @ cache.agg
    g["upd_b1"] = d_z.sum(axis=0)

    # attention aggregation
    d_weighted = d_agg[gt.dst]                       # (E, N)
    d_alpha = (d_weighted * cache.m).sum(axis=1)     # (E,)
    d_m = cache.alpha[:, None] * d_weighted
    inner = gt.segsum_dst(cache.alpha * d_alpha)     # (V,)
    d_gamma = cache.alpha * (d_alpha - inner[gt.dst])
    scale = d_gamma / np.sqrt(N)
    d_q = cache.k * scale[:, None]
    d_k = cache.q * scale[:, None]

    wm_h, wm_u, wm_r = _split_edge_weight(lp.msg_w, D, th)
    wq_h, wq_u, wq_r = _split_edge_weight(lp.query_w, D, th)
    wk_h, wk_u, wk_r = _split_edge_weight(lp.key_w, D, th)
    u = lp.kind_proj

    d_u = np.zeros_like(u)
    d_rel = np.zeros_like(cache.rel_feat)
    H = cache.h_in

    def edge_path(d_e, wh, wu, wr, by_src):
        nonlocal d_u, d_rel, d_h
        node_sum = gt.segsum_src(d_e) if by_src else gt.segsum_dst(d_e)  # (V, N)
        gw_h = node_sum.T @ H
        d_h += node_sum @ wh
        combo_sum = gt.segsum_combo(d_e)                                 # (64, N)
        # fold combo sums down to per-kind sums
        kind_idx = _COMBO_SRC_KIND if by_src else _COMBO_DST_KIND
        d_ue = np.zeros((N_NODE_KINDS, d_e.shape[1]))
        np.add.at(d_ue, kind_idx, combo_sum)
        gw_u = d_ue.T @ u
        d_u += d_ue @ wu
        gw_r = combo_sum.T @ cache.rel_feat
        d_rel += combo_sum @ wr
        gb = d_e.sum(axis=0)
        return np.concatenate([gw_h, gw_u, gw_r], axis=1), gb

    g["msg_w"], g["msg_b"] = edge_path(d_m, wm_h, wm_u, wm_r, by_src=True)
    g["query_w"], g["query_b"] = edge_path(d_q, wq_h, wq_u, wq_r, by_src=True)
    g["key_w"], g["key_b"] = edge_path(d_k, wk_h, wk_u, wk_r, by_src=False)

    # relation MLP
    d_a1 = d_rel @ lp.rel_w2
    g["rel_w2"] = d_rel.T @ cache.a1_rel
    g["rel_b2"] = d_rel.sum(axis=0)
    d_z1 = d_a1 * gelu_grad(cache.z1_rel)
    g["rel_w1"] = d_z1.T @ _X_COMBO
    g["rel_b1"] = d_z1.sum(axis=0)

    g["kind_proj"] = d_u
    return d_h, g


def forward_with_cache(
    params: GatParams,
    config: GatConfig,
    gt: GraphTensors,
    features: np.ndarray,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    update_stats: bool | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[_LayerCache]]:
    """Full forward pass keeping per-layer caches for the backward pass."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == "train"
    if update_stats is None:
        update_stats = train
    if features.shape != (gt.n_nodes, config.dim):
        raise ValueError(
            f"features shaped {features.shape}, expected {(gt.n_nodes, config.dim)}"
        )
    if train and config.dropout > 0.0 and rng is None:
        raise ValueError("training forward with dropout needs a random generator")

    H = features
    caches: list[_LayerCache] = []
    for layer_index, lp in enumerate(params.layers):
        H, cache = _layer_forward(lp, H, gt, config, train, update_stats)
        if not np.isfinite(H).all():
            raise FloatingPointError(f"non-finite node states after layer {layer_index}")
        if train and config.dropout > 0.0 and layer_index < config.layers - 1:
            mask = (rng.random(H.shape) >= config.dropout) / (1.0 - config.dropout)
            H = H * mask
            cache.drop_mask = mask
        caches.append(cache)

    row_logits = H[gt.row_nodes] @ params.row_w + params.row_b[0]
    col_logits = H[gt.col_nodes] @ params.col_w + params.col_b[0]
    return row_logits, col_logits, H, caches


def gat_forward(
    params: GatParams,
    config: GatConfig,
    graph: TableGraph,
    features: np.ndarray,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row logits (one per table row), column logits, and final node states."""
    gt = graph_tensors(graph)
    row_logits, col_logits, H, _ = forward_with_cache(
        params, config, gt, features, mode=mode, rng=rng
    )
    return row_logits, col_logits, H


def _bce_with_logits(logits: np.ndarray, labels: np.ndarray) -> float:
    # max(x,0) - x*y + log(1 + exp(-|x|)), numerically stable
    x, y = logits, labels
    return float(np.mean(np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))))


def selection_loss(
    row_logits: np.ndarray,
    col_logits: np.ndarray,
    row_labels,
    col_labels,
) -> float:
    """Mean binary cross-entropy over rows plus mean over columns."""
    row_logits = np.asarray(row_logits, dtype=np.float64)
    col_logits = np.asarray(col_logits, dtype=np.float64)
    ry = np.asarray(row_labels, dtype=np.float64)
    cy = np.asarray(col_labels, dtype=np.float64)
    if row_logits.shape != ry.shape:
        raise ValueError(f"row logits {row_logits.shape} vs labels {ry.shape}")
    if col_logits.shape != cy.shape:
        raise ValueError(f"col logits {col_logits.shape} vs labels {cy.shape}")
    return _bce_with_logits(row_logits, ry) + _bce_with_logits(col_logits, cy)


def _backward_from_logits(
    params: GatParams,
    config: GatConfig,
    gt: GraphTensors,
    caches: list[_LayerCache],
    H_final: np.ndarray,
    d_row: np.ndarray,
    d_col: np.ndarray,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    grads: dict[str, np.ndarray] = {
        "row_head.weight": H_final[gt.row_nodes].T @ d_row,
        "row_head.bias": np.array([d_row.sum()]),
        "col_head.weight": H_final[gt.col_nodes].T @ d_col,
        "col_head.bias": np.array([d_col.sum()]),
    }
    d_H = np.zeros_like(H_final)
    np.add.at(d_H, gt.row_nodes, d_row[:, None] * params.row_w)
    np.add.at(d_H, gt.col_nodes, d_col[:, None] * params.col_w)

    for layer_index in range(config.layers - 1, -1, -1):
        cache = caches[layer_index]
        if cache.drop_mask is not None:
            d_H = d_H * cache.drop_mask
        d_H, layer_grads = _layer_backward(params.layers[layer_index], cache, d_H, gt, config)
        for name, arr in layer_grads.items():
            grads[f"layers.{layer_index}.{name}"] = arr
    return d_H, grads


def loss_and_gradients(
    params: GatParams,
    config: GatConfig,
    gt: GraphTensors,
    ids_per_node: list[np.ndarray],
    row_labels,
    col_labels,
    mode: str = "train",
    rng: np.random.Generator | None = None,
    update_stats: bool | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Selection loss plus exact gradients for every trainable tensor,
    embedding table included."""
    features = embed_from_ids(params.featurizer.embedding, ids_per_node)
    row_logits, col_logits, H_final, caches = forward_with_cache(
        params, config, gt, features, mode=mode, rng=rng, update_stats=update_stats
    )
    ry = np.asarray(row_labels, dtype=np.float64)
    cy = np.asarray(col_labels, dtype=np.float64)
    loss = selection_loss(row_logits, col_logits, ry, cy)

    d_row = (sigmoid(row_logits) - ry) / len(ry)
    d_col = (sigmoid(col_logits) - cy) / len(cy)
    d_features, grads = _backward_from_logits(
        params, config, gt, caches, H_final, d_row, d_col
    )
    grads["featurizer.embedding"] = embedding_grad(
        ids_per_node, d_features, params.featurizer.embedding.shape[0]
    )
    return loss, grads


def loss_value(
    params: GatParams,
    config: GatConfig,
    gt: GraphTensors,
    ids_per_node: list[np.ndarray],
    row_labels,
    col_labels,
    mode: str = "train",
) -> float:
    """Forward-only loss; never touches the batch-norm running buffers."""
    features = embed_from_ids(params.featurizer.embedding, ids_per_node)
    row_logits, col_logits, _, _ = forward_with_cache(
        params, config, gt, features, mode=mode, update_stats=False
    )
    return selection_loss(row_logits, col_logits, row_labels, col_labels)


def gradients(
    params: GatParams,
    config: GatConfig,
    graph: TableGraph,
    vocab: Vocab,
    row_labels,
    col_labels,
    mode: str = "train",
    rng: np.random.Generator | None = None,
    max_tokens: int = 35,
) -> tuple[float, dict[str, np.ndarray]]:
    """Convenience wrapper: featurize a graph and return (loss, gradient set)."""
    gt = graph_tensors(graph)
    ids = node_token_ids(graph, vocab, max_tokens)
    return loss_and_gradients(
        params, config, gt, ids, row_labels, col_labels, mode=mode, rng=rng
    )
