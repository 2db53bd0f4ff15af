"""Interaction-log ingestion, chronological splits, snapshots, histories,
and t-batch organization.

The on-disk format is the JODIE CSV layout: a header line followed by
`user_id,item_id,timestamp,state_label,feature_1,...`; a minimal 3-column
variant without label/features is also accepted. Raw ids are remapped to
dense 0-based indices in order of first appearance and the mapping is kept
on the network for persistence.
"""

from __future__ import annotations

import bisect
import io
from dataclasses import dataclass, field, replace

import numpy as np


class DataFormatError(ValueError):
    """Malformed input row; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class Interaction:
    user: int
    item: int
    time: float
    label: float = 0.0
    features: tuple = ()


@dataclass(frozen=True)
class InteractionSequence:
    """A user's recent interactions strictly before some query time."""

    user: int
    entries: tuple  # ((item, time), ...) chronological


@dataclass(frozen=True)
class Snapshot:
    """Frozen bipartite adjacency of all interactions before `window_end`.

    Adjacency lists are sorted tuples without multiplicity; nodes with no
    edges are absent from the dicts.
    """

    index: int
    window_end: float
    user_adj: dict  # user -> tuple of item ids
    item_adj: dict  # item -> tuple of user ids

    def edges(self) -> set:
        return {(u, v) for u, items in self.user_adj.items() for v in items}


@dataclass(frozen=True)
class TemporalNetwork:
    n_users: int
    n_items: int
    interactions: tuple  # chronological Interaction tuple
    horizon: float
    user_ids: tuple = ()  # dense index -> raw id
    item_ids: tuple = ()
    time_scale: float = 1.0
    _user_hist: dict = field(default=None, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.interactions)

    def prefix(self, count: int) -> "TemporalNetwork":
        """First `count` interactions, same id tables and horizon."""
        return replace(self, interactions=self.interactions[:count], _user_hist=None)

    def user_history_index(self) -> dict:
        """user -> (sorted time array, item array), cached."""
        cached = object.__getattribute__(self, "_user_hist")
        if cached is None:
            per_user: dict[int, tuple[list, list]] = {}
            for it in self.interactions:
                times, items = per_user.setdefault(it.user, ([], []))
                times.append(it.time)
                items.append(it.item)
            cached = {u: (np.asarray(t), np.asarray(i)) for u, (t, i) in per_user.items()}
            object.__setattr__(self, "_user_hist", cached)
        return cached

    def mean_interval(self) -> float:
        times = [it.time for it in self.interactions]
        if len(times) < 2 or times[-1] <= times[0]:
            return 1.0
        return (times[-1] - times[0]) / (len(times) - 1)


def _dense_index(raw: str, mapping: dict, order: list) -> int:
    idx = mapping.get(raw)
    if idx is None:
        idx = len(order)
        mapping[raw] = idx
        order.append(raw)
    return idx


def parse_interactions(stream) -> TemporalNetwork:
    """Read a JODIE-layout CSV stream into a dense TemporalNetwork.

    Rows are stably sorted by timestamp (ties keep file order), so raw files
    with locally unordered timestamps are accepted. Negative timestamps and
    rows with fewer than 3 columns are rejected with their line number.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)

    user_map: dict[str, int] = {}
    item_map: dict[str, int] = {}
    user_order: list[str] = []
    item_order: list[str] = []
    rows = []

    header = stream.readline()
    if header == "":
        raise DataFormatError(1, "empty input, expected a header line")
    for line_no, line in enumerate(stream, start=2):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) < 3:
            raise DataFormatError(line_no, f"expected at least 3 columns, got {len(parts)}")
        try:
            t = float(parts[2])
        except ValueError:
            raise DataFormatError(line_no, f"bad timestamp {parts[2]!r}") from None
        if not np.isfinite(t):
            raise DataFormatError(line_no, f"non-finite timestamp {parts[2]!r}")
        if t < 0:
            raise DataFormatError(line_no, f"negative timestamp {t}")
        label = 0.0
        features: tuple = ()
        if len(parts) > 3:
            try:
                label = float(parts[3])
                features = tuple(float(p) for p in parts[4:] if p != "")
            except ValueError:
                raise DataFormatError(line_no, "bad label/feature column") from None
        u = _dense_index(parts[0], user_map, user_order)
        v = _dense_index(parts[1], item_map, item_order)
        rows.append(Interaction(u, v, t, label, features))

    rows.sort(key=lambda it: it.time)  # list.sort is stable
    if rows:
        horizon = float(np.nextafter(rows[-1].time, np.inf))
    else:
        horizon = 0.0
    return TemporalNetwork(
        n_users=len(user_order),
        n_items=len(item_order),
        interactions=tuple(rows),
        horizon=horizon,
        user_ids=tuple(user_order),
        item_ids=tuple(item_order),
    )


def serialize_interactions(net: TemporalNetwork, stream) -> None:
    """Inverse of parse_interactions on the dense representation."""
    stream.write("user_id,item_id,timestamp,state_label,comma_separated_list_of_features\n")
    for it in net.interactions:
        raw_u = net.user_ids[it.user] if net.user_ids else str(it.user)
        raw_v = net.item_ids[it.item] if net.item_ids else str(it.item)
        cols = [raw_u, raw_v, repr(it.time), repr(it.label)]
        cols.extend(repr(f) for f in it.features)
        stream.write(",".join(cols) + "\n")


def rescale_time(net: TemporalNetwork) -> TemporalNetwork:
    """Rescale timestamps so the mean inter-event interval is 1.0.

    Raw second-scale timestamps saturate the trigonometric time embedding;
    the applied factor is recorded in `time_scale` for persistence.
    """
    mean = net.mean_interval()
    if mean <= 0 or mean == 1.0:
        return net
    scale = 1.0 / mean
    scaled = tuple(replace(it, time=it.time * scale) for it in net.interactions)
    return replace(net, interactions=scaled,
                   horizon=float(np.nextafter(scaled[-1].time, np.inf)) if scaled else 0.0,
                   time_scale=net.time_scale * scale, _user_hist=None)


def chrono_split(net: TemporalNetwork, ratios=(0.8, 0.1, 0.1)):
    """Contiguous chronological (train, valid, test) segments by count.

    The first two splits take floor(ratio * n) interactions, the test split
    takes the remainder.
    """
    if len(net.interactions) == 0:
        raise ValueError("cannot split an empty network")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    n = len(net.interactions)
    n_train = int(np.floor(ratios[0] * n))
    n_valid = int(np.floor(ratios[1] * n))
    a, b = n_train, n_train + n_valid
    mk = lambda sl: replace(net, interactions=net.interactions[sl], _user_hist=None)
    return mk(slice(0, a)), mk(slice(a, b)), mk(slice(b, n))


def build_snapshots(net: TemporalNetwork, n_snapshots: int) -> list:
    """Snapshot sequence G^0..G^{M-1} with interval d = horizon / M.

    Snapshot m holds exactly the (deduplicated) edges of interactions with
    time < d*m, so G^0 is always empty and the sequence grows monotonically.
    """
    if n_snapshots < 1:
        raise ValueError("snapshot count must be >= 1")
    d = net.horizon / n_snapshots
    snapshots = []
    user_adj: dict[int, set] = {}
    item_adj: dict[int, set] = {}
    pos = 0
    inters = net.interactions
    for m in range(n_snapshots):
        end = d * m
        while pos < len(inters) and inters[pos].time < end:
            it = inters[pos]
            user_adj.setdefault(it.user, set()).add(it.item)
            item_adj.setdefault(it.item, set()).add(it.user)
            pos += 1
        snapshots.append(Snapshot(
            index=m,
            window_end=end,
            user_adj={u: tuple(sorted(s)) for u, s in user_adj.items()},
            item_adj={v: tuple(sorted(s)) for v, s in item_adj.items()},
        ))
    return snapshots


def history(net: TemporalNetwork, user: int, t: float, max_len: int) -> InteractionSequence:
    """The user's most recent <= max_len interactions strictly before t.

    Interactions at exactly time t are excluded so the features that predict
    an interaction never contain it.
    """
    if not 0 <= user < net.n_users:
        raise IndexError(f"unknown user id {user}")
    idx = net.user_history_index().get(user)
    if idx is None:
        return InteractionSequence(user, ())
    times, items = idx
    cut = bisect.bisect_left(times, t)
    start = max(0, cut - max_len)
    entries = tuple((int(items[i]), float(times[i])) for i in range(start, cut))
    return InteractionSequence(user, entries)


def t_batch(interactions) -> list:
    """Partition a chronological stream into t-batches.

    Every interaction lands in batch 1 + max(batch of the user's previous
    interaction, batch of the item's previous interaction), absent
    predecessors counting as 0 — so no user or item repeats within a batch
    and batches can be processed with parallel per-node updates.
    """
    interactions = list(interactions)
    for prev, cur in zip(interactions, interactions[1:]):
        if cur.time < prev.time:
            raise ValueError("t_batch input must be chronologically sorted")
    last_user_batch: dict[int, int] = {}
    last_item_batch: dict[int, int] = {}
    batches: list[list] = []
    for it in interactions:
        b = 1 + max(last_user_batch.get(it.user, 0), last_item_batch.get(it.item, 0))
        last_user_batch[it.user] = b
        last_item_batch[it.item] = b
        while len(batches) < b:
            batches.append([])
        batches[b - 1].append(it)
    return batches
