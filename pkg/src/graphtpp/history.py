"""Dynamic embeddings: attention over a user's interaction history, GRU
updates at event times, and the temporal shift projection between events.

The attention scores a query built from the (user, candidate item) pair at
the event time against one key per history entry; parallel heads split the
projected query/key dimensions and the value dimension, so their
concatenation is already the output dimension and a single head reduces to
the plain formulation exactly.
"""

from __future__ import annotations

import numpy as np

from graphtpp.autodiff import Parameters, Value, concat, glorot, gru_cell, softmax, stack
from graphtpp.embedding import time_embedding, time_embedding_rows


def init_history_params(params: Parameters, rng: np.random.Generator,
                        dim: int, n_users: int, n_items: int) -> None:
    params.add("attn_query", glorot(rng, 2 * dim, 2 * dim))
    params.add("attn_key", glorot(rng, 2 * dim, 2 * dim))
    params.add("attn_value", glorot(rng, dim, dim))
    for side in ("user", "item"):
        params.add(f"dyn_{side}_wx", glorot(rng, 3 * dim, dim))
        params.add(f"dyn_{side}_wh", glorot(rng, 3 * dim, dim))
        params.add(f"dyn_{side}_b", np.zeros(3 * dim))
    # zero shift vectors start every node on the identity trajectory
    params.add("shift_user", np.zeros((n_users, dim)))
    params.add("shift_item", np.zeros((n_items, dim)))


def interaction_feature(user_vec: Value, item_vec: Value, t: float,
                        entries, item_table: Value, freq: Value,
                        params: Parameters, heads: int = 8,
                        positions=None) -> Value:
    """Attention summary o of the history as seen by the (user, item) pair at t.

    `entries` is a chronological ((item, time), ...) sequence strictly before
    t; `positions` may override the 1-based position indices (defaults to
    1..len). An empty history returns the zero vector (cold start), so
    downstream GRUs see a well-defined input.
    """
    dim = user_vec.shape[0]
    if not entries:
        return Value(np.zeros(dim))
    if any(e[1] > t for e in entries):
        raise ValueError("history entries must precede the query time")
    n = len(entries)
    if positions is None:
        positions = list(range(1, n + 1))
    if len(positions) != n:
        raise ValueError("positions must match history length")
    if (2 * dim) % heads or dim % heads:
        raise ValueError(f"head count {heads} must divide {2 * dim} and {dim}")

    w_q, w_k, w_v = params["attn_query"], params["attn_key"], params["attn_value"]

    last = max(range(n), key=lambda i: positions[i])
    p_query = time_embedding(freq, positions[last], entries[last][1], t)
    query = w_q @ concat([user_vec, item_vec + p_query])

    # key_h = W_K [u | (v_h + p_h)] split into the user and item column
    # blocks so the user half is projected once
    hist_items = item_table.gather([e[0] for e in entries])
    p_rows = time_embedding_rows(freq, positions, [e[1] for e in entries], t)
    keys = ((hist_items + p_rows) @ w_k.cols(dim, 2 * dim).transpose()
            + w_k.cols(0, dim) @ user_vec)
    values = hist_items @ w_v.transpose()

    qk_width = (2 * dim) // heads
    v_width = dim // heads
    head_outs = []
    for g in range(heads):
        q_g = query.segment(g * qk_width, (g + 1) * qk_width)
        k_g = keys.cols(g * qk_width, (g + 1) * qk_width)
        weights = softmax(k_g @ q_g)
        head_outs.append(weights @ values.cols(g * v_width, (g + 1) * v_width))
    return concat(head_outs).relu()


def attention_weights(user_vec: Value, item_vec: Value, t: float, entries,
                      item_table: Value, freq: Value, params: Parameters,
                      heads: int = 8, positions=None) -> np.ndarray:
    """Per-head attention weights, for inspection/tests: shape (heads, |H|)."""
    dim = user_vec.shape[0]
    n = len(entries)
    if positions is None:
        positions = list(range(1, n + 1))
    w_q, w_k = params["attn_query"], params["attn_key"]
    last = max(range(n), key=lambda i: positions[i])
    p_query = time_embedding(freq, positions[last], entries[last][1], t)
    query = w_q @ concat([user_vec, item_vec + p_query])
    key_inputs = []
    for (hist_item, hist_time), pos in zip(entries, positions):
        p_h = time_embedding(freq, pos, hist_time, t)
        key_inputs.append(concat([user_vec, item_table.row(hist_item) + p_h]))
    keys = stack(key_inputs) @ w_k.transpose()
    qk_width = (2 * dim) // heads
    out = np.zeros((heads, n))
    for g in range(heads):
        q_g = query.segment(g * qk_width, (g + 1) * qk_width)
        k_g = keys.cols(g * qk_width, (g + 1) * qk_width)
        out[g] = softmax(k_g @ q_g).data
    return out


def update_dynamic(user_vec: Value, item_vec: Value, feature: Value,
                   params: Parameters) -> tuple[Value, Value]:
    """Event-time dynamic embeddings: one GRU per side, state = static row."""
    u_t = gru_cell(feature, user_vec,
                   params["dyn_user_wx"], params["dyn_user_wh"], params["dyn_user_b"])
    v_t = gru_cell(feature, item_vec,
                   params["dyn_item_wx"], params["dyn_item_wh"], params["dyn_item_b"])
    return u_t, v_t


def temporal_shift(emb: Value, shift: Value, delta: float) -> Value:
    """Project an event-time embedding `delta` time units forward along the
    node's learned trajectory: (1 + delta * shift) * emb elementwise.

    Shifts always originate at the embedding's own event time; composing two
    shifts is not equivalent to one longer shift.
    """
    if delta < 0:
        raise ValueError(f"shift interval must be non-negative, got {delta}")
    return (1.0 + shift * float(delta)) * emb


class DynamicState:
    """Latest event-time embedding and timestamp per node.

    Values are stored detached (plain arrays): gradient never flows through
    the cache, only through the shift vectors and — for cold nodes that fall
    back to their static row — the embedding tables.
    """

    def __init__(self, n_users: int, n_items: int):
        self._vec = {"user": {}, "item": {}}
        self._time = {"user": {}, "item": {}}
        self.counts = {"user": n_users, "item": n_items}

    def _check(self, kind: str, idx: int) -> None:
        if kind not in self._vec:
            raise KeyError(f"unknown node kind {kind!r}")
        if not 0 <= idx < self.counts[kind]:
            raise IndexError(f"{kind} id {idx} out of range")

    def update(self, kind: str, idx: int, vector: np.ndarray, time: float) -> None:
        self._check(kind, idx)
        prev = self._time[kind].get(idx)
        if prev is not None and time < prev:
            raise ValueError(f"{kind} {idx}: update time {time} precedes last update {prev}")
        self._vec[kind][idx] = np.array(vector, dtype=np.float64)
        self._time[kind][idx] = float(time)

    def last_time(self, kind: str, idx: int) -> float:
        self._check(kind, idx)
        return self._time[kind].get(idx, 0.0)

    def raw_state(self, kind: str, idx: int, static_data: np.ndarray) -> tuple[np.ndarray, float]:
        """Array view of the last event-time embedding and its timestamp."""
        self._check(kind, idx)
        stored = self._vec[kind].get(idx)
        base = stored if stored is not None else static_data[idx]
        return base, self._time[kind].get(idx, 0.0)

    def base_and_origin(self, kind: str, idx: int, static_table: Value) -> tuple[Value, float]:
        """Last event-time embedding and its timestamp; cold nodes fall back
        to their live static row at time 0."""
        self._check(kind, idx)
        stored = self._vec[kind].get(idx)
        origin = self._time[kind].get(idx, 0.0)
        base = Value(stored) if stored is not None else static_table.row(idx)
        return base, origin

    def dynamic_at(self, kind: str, idx: int, t: float, static_table: Value,
                   shift_table: Value) -> Value:
        """Dynamic embedding at query time t, shifted once from the node's
        last event (cold nodes shift their live static row from time 0)."""
        base, origin = self.base_and_origin(kind, idx, static_table)
        return temporal_shift(base, shift_table.row(idx), t - origin)

    def copy(self) -> "DynamicState":
        dup = DynamicState(self.counts["user"], self.counts["item"])
        for kind in ("user", "item"):
            dup._vec[kind] = {k: v.copy() for k, v in self._vec[kind].items()}
            dup._time[kind] = dict(self._time[kind])
        return dup
