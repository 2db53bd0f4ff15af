"""Steady embeddings from the snapshot sequence.

Each snapshot is encoded by stacked aggregation layers that pool same-type
features over two hops of the bipartite graph: a node's neighbors are first
summarized by the mean of *their* neighbors (same type as the node), passed
through a projection + ReLU, and then attended over with scores conditioned
on the node's own embedding. A GRU per side fuses the per-snapshot outputs
into one steady embedding trajectory across the ordered snapshots.
"""

from __future__ import annotations

import numpy as np

from graphtpp.autodiff import Parameters, Value, concat, glorot, gru_matrix, softmax, stack
from graphtpp.data import Snapshot


def init_topology_params(params: Parameters, rng: np.random.Generator,
                         dim: int, n_layers: int) -> None:
    for k in range(n_layers):
        for side in ("user", "item"):
            params.add(f"agg{k}_{side}_mid", glorot(rng, dim, dim))
            params.add(f"agg{k}_{side}_score", glorot(rng, dim, dim))
            params.add(f"agg{k}_{side}_out", glorot(rng, dim, 2 * dim))
    for side in ("user", "item"):
        params.add(f"fuse_{side}_wx", glorot(rng, 3 * dim, dim))
        params.add(f"fuse_{side}_wh", glorot(rng, 3 * dim, dim))
        params.add(f"fuse_{side}_b", np.zeros(3 * dim))


def _aggregate_side(own_mat: Value, own_adj: dict, other_adj: dict,
                    mid: Value, score: Value, out: Value) -> Value:
    """One side of an aggregation layer.

    `own_adj` maps each node of this side to its (other-type) neighbors;
    `other_adj` maps those neighbors back to this side, providing the 2-hop
    same-type pools. Nodes without neighbors pass through unchanged, and
    their attention set is skipped entirely (never a softmax over nothing).
    All-zero ReLU scores degrade to uniform attention by construction.
    """
    n_nodes = own_mat.shape[0]
    active = sorted(other_adj)
    if active:
        pools = [own_mat.gather(other_adj[c]).mean_rows() for c in active]
        inter = (stack(pools) @ mid.transpose()).relu()
        row_of = {c: i for i, c in enumerate(active)}
    rows = []
    for i in range(n_nodes):
        nbrs = own_adj.get(i)
        own_row = own_mat.row(i)
        if not nbrs:
            rows.append(own_row)
            continue
        nbr_inter = inter.gather([row_of[c] for c in nbrs])
        weights = softmax((nbr_inter @ (score @ own_row)).relu())
        pooled = (weights @ nbr_inter).relu()
        rows.append(out @ concat([pooled, own_row]))
    return stack(rows)


def aggregation_layer(snapshot: Snapshot, user_mat: Value, item_mat: Value,
                      params: Parameters, layer: int) -> tuple[Value, Value]:
    """Apply layer `layer` to both sides, reading layer-k-1 embeddings."""
    n_users, n_items = user_mat.shape[0], item_mat.shape[0]
    if snapshot.user_adj and max(snapshot.user_adj) >= n_users:
        raise ValueError("user embedding matrix smaller than snapshot user ids")
    if snapshot.item_adj and max(snapshot.item_adj) >= n_items:
        raise ValueError("item embedding matrix smaller than snapshot item ids")
    users_out = _aggregate_side(
        user_mat, snapshot.user_adj, snapshot.item_adj,
        params[f"agg{layer}_user_mid"], params[f"agg{layer}_user_score"],
        params[f"agg{layer}_user_out"])
    items_out = _aggregate_side(
        item_mat, snapshot.item_adj, snapshot.user_adj,
        params[f"agg{layer}_item_mid"], params[f"agg{layer}_item_score"],
        params[f"agg{layer}_item_out"])
    return users_out, items_out


def encode_snapshot(snapshot: Snapshot, user_table: Value, item_table: Value,
                    params: Parameters, n_layers: int) -> tuple[Value, Value]:
    """Run the stacked aggregation layers starting from the static tables."""
    u_mat, v_mat = user_table, item_table
    for k in range(n_layers):
        u_mat, v_mat = aggregation_layer(snapshot, u_mat, v_mat, params, k)
    return u_mat, v_mat


def steady_embeddings(snapshots: list, user_table: Value, item_table: Value,
                      params: Parameters, n_layers: int,
                      bptt_depth: int = 8) -> list:
    """Fused steady embeddings for every snapshot.

    The per-snapshot encoder outputs are threaded through one GRU per side
    (zero initial state); the carried state is detached every `bptt_depth`
    snapshots to bound the backpropagation window.
    """
    if not snapshots:
        raise ValueError("steady_embeddings needs at least one snapshot")
    dim = user_table.shape[1]
    h_user = Value(np.zeros((user_table.shape[0], dim)))
    h_item = Value(np.zeros((item_table.shape[0], dim)))
    fuse = {side: (params[f"fuse_{side}_wx"], params[f"fuse_{side}_wh"],
                   params[f"fuse_{side}_b"]) for side in ("user", "item")}
    out = []
    for m, snap in enumerate(snapshots):
        if m > 0 and bptt_depth > 0 and m % bptt_depth == 0:
            h_user = h_user.detach()
            h_item = h_item.detach()
        u_mat, v_mat = encode_snapshot(snap, user_table, item_table, params, n_layers)
        h_user = gru_matrix(u_mat, h_user, *fuse["user"])
        h_item = gru_matrix(v_mat, h_item, *fuse["item"])
        out.append((h_user, h_item))
    return out
