"""One GRED layer: hop aggregation, reversed linear recurrence, gated output.

The layer computes, per target node v, one aggregate per shortest distance k
(a sum over N_k(v) followed by a one-hidden-layer MLP), feeds the resulting
hop sequence to the diagonal recurrence farthest-hop-first, and projects the
final state back to the model width. Two pre-norm residual branches:

    m  = h + Dropout( Re[ W_out * scan( MLP(hop_sums(LN_a(h))) ) ] )
    h' = m + Dropout( GLU( LN_b(m) ) )

Hop sums are one sparse matrix-vector product per batch: row (v, k) of the
aggregation matrix selects N_k(v), so the per-distance passes the complexity
contract describes collapse into a single masked reduction. Entries beyond a
node's eccentricity are zeroed before the scan (zero padding passes through
the recurrence without contributing).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import ValidationError
from .graphs import HopPartition
from .lru import LruParams, init_lru, lru_block
from .tensor import (Tensor, add, dropout, glu, layer_norm, linear,
                     masked_row_sum, mul, relu, reshape)


@dataclass
class HopMasks:
    """Batched hop partition in matrix form (one disjoint union per batch).

    ``agg`` has shape (n*(K+1), n): row v*(K+1)+k is the indicator of N_k(v).
    ``valid`` is the (n, K+1) eccentricity mask. ``graph_ids`` maps nodes to
    their graph within the batch; ``root_index`` holds each graph's node 0.
    Hop lists never cross graph boundaries.
    """

    k_max: int
    n_nodes: int
    n_graphs: int
    agg: sparse.csr_matrix
    agg_t: sparse.csr_matrix
    valid: np.ndarray
    graph_ids: np.ndarray
    root_index: np.ndarray


def build_hop_masks(parts: list[HopPartition]) -> HopMasks:
    if not parts:
        raise ValidationError("empty batch")
    k_max = parts[0].k_max
    if any(p.k_max != k_max for p in parts):
        raise ValidationError("mixed hop limits in one batch")
    kk = k_max + 1
    rows, cols, valids, gids, roots = [], [], [], [], []
    offset = 0
    for gi, part in enumerate(parts):
        n = len(part.hops)
        r, c = part.flat_indices()
        rows.append(r + offset * kk)
        cols.append(c + offset)
        valids.append(part.valid_mask())
        gids.append(np.full(n, gi, dtype=np.int64))
        roots.append(offset)
        offset += n
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    data = np.ones(len(rows), dtype=np.float64)
    agg = sparse.csr_matrix((data, (rows, cols)), shape=(offset * kk, offset))
    return HopMasks(
        k_max=k_max,
        n_nodes=offset,
        n_graphs=len(parts),
        agg=agg,
        agg_t=agg.T.tocsr(),
        valid=np.concatenate(valids, axis=0),
        graph_ids=np.concatenate(gids),
        root_index=np.asarray(roots, dtype=np.int64),
    )


@dataclass
class LayerParams:
    """Trainable pieces of one layer, as Tensors registered in a ParamStore."""

    agg_w1: Tensor  # (d, d_h)
    agg_b1: Tensor  # (d_h,)
    agg_w2: Tensor  # (d_h, d)
    agg_b2: Tensor  # (d,)
    nu_log: Tensor
    theta_log: Tensor
    w_in_re: Tensor
    w_in_im: Tensor
    w_out_re: Tensor
    w_out_im: Tensor
    glu_w1: Tensor  # (d, d)
    glu_w2: Tensor  # (d, d)
    norm_a_g: Tensor
    norm_a_b: Tensor
    norm_b_g: Tensor
    norm_b_b: Tensor
    dropout_rate: float = 0.0
    gamma_enabled: bool = True


def init_layer(store, prefix: str, d: int, d_s: int, d_hidden: int,
               dropout_rate: float, rng: np.random.Generator,
               r_min: float = 0.5, r_max: float = 0.99,
               max_phase: float = 2.0 * np.pi,
               gamma_enabled: bool = True) -> LayerParams:
    """Create and register one layer's parameters under ``prefix``."""
    lru = init_lru(d_s, d, r_min=r_min, r_max=r_max, max_phase=max_phase,
                   seed=int(rng.integers(2**63)), gamma_enabled=gamma_enabled)
    he1 = np.sqrt(2.0 / d)
    he2 = np.sqrt(2.0 / d_hidden)
    xav = np.sqrt(1.0 / d)
    return LayerParams(
        agg_w1=store.add(f"{prefix}.agg.w1", rng.standard_normal((d, d_hidden)) * he1),
        agg_b1=store.add(f"{prefix}.agg.b1", np.zeros(d_hidden), decay=False),
        agg_w2=store.add(f"{prefix}.agg.w2", rng.standard_normal((d_hidden, d)) * he2),
        agg_b2=store.add(f"{prefix}.agg.b2", np.zeros(d), decay=False),
        nu_log=store.add(f"{prefix}.lru.nu_log", lru.nu_log, decay=False),
        theta_log=store.add(f"{prefix}.lru.theta_log", lru.theta_log, decay=False),
        w_in_re=store.add(f"{prefix}.lru.w_in_re", lru.w_in_re),
        w_in_im=store.add(f"{prefix}.lru.w_in_im", lru.w_in_im),
        w_out_re=store.add(f"{prefix}.lru.w_out_re", lru.w_out_re),
        w_out_im=store.add(f"{prefix}.lru.w_out_im", lru.w_out_im),
        glu_w1=store.add(f"{prefix}.glu.w1", rng.standard_normal((d, d)) * xav),
        glu_w2=store.add(f"{prefix}.glu.w2", rng.standard_normal((d, d)) * xav),
        norm_a_g=store.add(f"{prefix}.norm_a.g", np.ones(d), decay=False),
        norm_a_b=store.add(f"{prefix}.norm_a.b", np.zeros(d), decay=False),
        norm_b_g=store.add(f"{prefix}.norm_b.g", np.ones(d), decay=False),
        norm_b_b=store.add(f"{prefix}.norm_b.b", np.zeros(d), decay=False),
        dropout_rate=dropout_rate,
        gamma_enabled=gamma_enabled,
    )


def lru_params_view(p: LayerParams) -> LruParams:
    """Read-only numpy view of the layer's recurrence parameters."""
    return LruParams(
        nu_log=p.nu_log.data, theta_log=p.theta_log.data,
        w_in_re=p.w_in_re.data, w_in_im=p.w_in_im.data,
        w_out_re=p.w_out_re.data, w_out_im=p.w_out_im.data,
        gamma_enabled=p.gamma_enabled,
    )


def aggregate_hops(h: Tensor, masks: HopMasks, p: LayerParams) -> Tensor:
    """Per-node, per-distance multiset aggregates: MLP(sum over N_k(v)).

    Output has shape (n, K+1, d); an empty hop yields MLP(0), the same
    constant row everywhere. Row (v, 0) is MLP(h_v).
    """
    if h.data.shape[0] != masks.n_nodes:
        raise ValidationError(
            f"feature rows {h.data.shape[0]} != partition nodes {masks.n_nodes}"
        )
    sums = masked_row_sum(h, masks.agg, masks.agg_t)
    hidden = relu(linear(sums, p.agg_w1, p.agg_b1))
    out = linear(hidden, p.agg_w2, p.agg_b2)
    return reshape(out, (masks.n_nodes, masks.k_max + 1, out.data.shape[-1]))


def layer_forward(h: Tensor, masks: HopMasks, p: LayerParams,
                  train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Apply one layer; pure in (h, masks, params, rng draw order)."""
    a = layer_norm(h, p.norm_a_g, p.norm_a_b)
    x = aggregate_hops(a, masks, p)
    x = mul(x, Tensor(masks.valid[:, :, None]))
    y = lru_block(x, p.nu_log, p.theta_log, p.w_in_re, p.w_in_im,
                  p.w_out_re, p.w_out_im, gamma_enabled=p.gamma_enabled)
    m = add(h, dropout(y, p.dropout_rate, rng, train))
    z = layer_norm(m, p.norm_b_g, p.norm_b_b)
    return add(m, dropout(glu(z, p.glu_w1, p.glu_w2), p.dropout_rate, rng, train))
