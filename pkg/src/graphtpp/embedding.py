"""Static node embedding tables and the trigonometric time embedding.

The time embedding folds a learnable frequency per dimension (scaling the
continuous interval to the query time) together with a fixed positional
phase, so one vector carries both the order and the age of a history entry.
"""

from __future__ import annotations

import functools

import numpy as np

from graphtpp.autodiff import Parameters, Value


def init_node_tables(params: Parameters, rng: np.random.Generator,
                     n_users: int, n_items: int, dim: int,
                     std: float = 0.1) -> tuple[Value, Value]:
    """Register |U| x D and |V| x D tables drawn from N(0, std^2)."""
    if dim <= 0:
        raise ValueError("embedding dimension must be positive")
    users = params.add("node_user", rng.normal(0.0, std, size=(n_users, dim)))
    items = params.add("node_item", rng.normal(0.0, std, size=(n_items, dim)))
    return users, items


def init_time_frequencies(params: Parameters, dim: int) -> Value:
    """Learnable per-dimension frequencies, geometric ladder 1/10000^(j/D)."""
    j = np.arange(1, dim + 1, dtype=np.float64)
    return params.add("time_freq", 1.0 / np.power(10000.0, j / dim))


def lookup(table: Value, node: int) -> Value:
    """Differentiable row fetch; gradient flows only to the fetched row."""
    if not 0 <= node < table.shape[0]:
        raise IndexError(f"node id {node} out of range [0, {table.shape[0]})")
    return table.row(node)


@functools.lru_cache(maxsize=4096)
def _phase_and_masks(position: int, dim: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # 1-based j: odd j -> cos with exponent (j-1)/D, even j -> sin with j/D
    j = np.arange(1, dim + 1, dtype=np.float64)
    odd = (j % 2 == 1)
    exponent = np.where(odd, (j - 1) / dim, j / dim)
    phase = position / np.power(10000.0, exponent)
    cos_mask = odd.astype(np.float64)
    return phase, cos_mask, 1.0 - cos_mask


def time_embedding(freq: Value, position: int, t_event: float, t_query: float) -> Value:
    """Embedding of history position `position` (timestamp `t_event`) as seen
    from `t_query`: cos on odd 1-based dimensions, sin on even ones, of
    freq_j * (t_query - t_event) + positional phase.
    """
    if t_query < t_event:
        raise ValueError(f"query time {t_query} precedes event time {t_event}")
    if position < 0:
        raise ValueError("position index must be non-negative")
    dim = freq.shape[0]
    phase, cos_mask, sin_mask = _phase_and_masks(position, dim)
    arg = freq * (t_query - t_event) + phase
    return arg.cos() * cos_mask + arg.sin() * sin_mask


def time_embedding_rows(freq: Value, positions, times, t_query: float) -> Value:
    """Stacked time embeddings, one row per (position, timestamp) pair.

    Row i equals time_embedding(freq, positions[i], times[i], t_query).
    """
    times = np.asarray(times, dtype=np.float64)
    if times.size and t_query < times.max():
        raise ValueError("query time precedes an event time")
    dim = freq.shape[0]
    rows = [_phase_and_masks(int(p), dim) for p in positions]
    if any(p < 0 for p in positions):
        raise ValueError("position indices must be non-negative")
    phases = np.stack([r[0] for r in rows])
    cos_mask, sin_mask = rows[0][1], rows[0][2]
    arg = freq * (t_query - times).reshape(-1, 1) + phases
    return arg.cos() * cos_mask + arg.sin() * sin_mask
