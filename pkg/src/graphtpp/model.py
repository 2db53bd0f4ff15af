"""Model assembly: parameter construction, steady/dynamic state management,
pair intensity scoring, the batch objective, and item ranking.

A `Model` owns the full interaction network (histories may span splits; an
event only ever sees strictly earlier events), the snapshot sequence of the
active split prefix, the per-snapshot steady embeddings, and the dynamic
per-node state cache. Scoring at an event time runs the history attention
afresh; scoring between events shifts each node once from its last update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from graphtpp.autodiff import Parameters, Value, softplus, stack
from graphtpp.config import TrainConfig
from graphtpp.data import TemporalNetwork, build_snapshots, history, t_batch
from graphtpp.embedding import init_node_tables, init_time_frequencies
from graphtpp.history import (
    DynamicState,
    init_history_params,
    interaction_feature,
    temporal_shift,
    update_dynamic,
)
from graphtpp.likelihood import combine_nll, grid_rescale, pair_intensity, telescoped_integral
from graphtpp.topology import init_topology_params, steady_embeddings


class Model:
    def __init__(self, net: TemporalNetwork, cfg: TrainConfig,
                 rng: np.random.Generator | None = None):
        cfg.validate()
        self.cfg = cfg
        self.net = net
        self.rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.params = Parameters()
        self.user_table, self.item_table = init_node_tables(
            self.params, self.rng, net.n_users, net.n_items, cfg.dim)
        self.freq = init_time_frequencies(self.params, cfg.dim)
        init_topology_params(self.params, self.rng, cfg.dim, cfg.n_layers)
        init_history_params(self.params, self.rng, cfg.dim, net.n_users, net.n_items)
        self.state = DynamicState(net.n_users, net.n_items)
        self.snapshots: list = []
        self.steady: list = []
        self.snapshot_interval = net.horizon / cfg.n_snapshots

    # -- snapshot / steady management ---------------------------------------

    def set_snapshot_prefix(self, prefix_len: int) -> None:
        """Build snapshots from the interactions available at a split
        boundary (training: train prefix; test: train+valid prefix)."""
        self.snapshots = build_snapshots(self.net.prefix(prefix_len), self.cfg.n_snapshots)
        self.steady = []

    def refresh_steady(self) -> None:
        if not self.snapshots:
            raise RuntimeError("set_snapshot_prefix must run before refresh_steady")
        self.steady = steady_embeddings(
            self.snapshots, self.user_table, self.item_table,
            self.params, self.cfg.n_layers, self.cfg.bptt_depth)

    def snapshot_id(self, t: float) -> int:
        m = int(t // self.snapshot_interval)
        return min(max(m, 0), self.cfg.n_snapshots - 1)

    def reset_dynamic(self) -> None:
        self.state = DynamicState(self.net.n_users, self.net.n_items)

    # -- event-time scoring ----------------------------------------------------

    def event_terms(self, user: int, item: int, t: float):
        """(intensity, user dynamic, item dynamic) for an interaction at t,
        with the dynamic pair computed afresh by history attention."""
        entries = history(self.net, user, t, self.cfg.max_history).entries
        u_row = self.user_table.row(user)
        v_row = self.item_table.row(item)
        feature = interaction_feature(u_row, v_row, t, entries, self.item_table,
                                      self.freq, self.params, self.cfg.heads)
        dyn_u, dyn_v = update_dynamic(u_row, v_row, feature, self.params)
        m = self.snapshot_id(t)
        lam = pair_intensity(self.steady[m][0].row(user), self.steady[m][1].row(item),
                             dyn_u, dyn_v)
        return lam, dyn_u, dyn_v

    # -- between-event scoring ----------------------------------------------------

    def shifted_intensity(self, user: int, item: int, tau: float, m: int,
                          user_dyn: Value | None = None,
                          user_origin: float | None = None) -> Value:
        """Intensity at an interior time tau: steady pair frozen at snapshot
        m, dynamic pair shifted once from each node's last event. A freshly
        computed user embedding (and its origin time) may be supplied to
        represent the interval's start."""
        if user_dyn is not None:
            dyn_u = temporal_shift(user_dyn, self.params["shift_user"].row(user),
                                   tau - user_origin)
        else:
            dyn_u = self.state.dynamic_at("user", user, tau, self.user_table,
                                          self.params["shift_user"])
        dyn_v = self.state.dynamic_at("item", item, tau, self.item_table,
                                      self.params["shift_item"])
        return pair_intensity(self.steady[m][0].row(user), self.steady[m][1].row(item),
                              dyn_u, dyn_v)

    def intensity_profile(self, user: int, item: int, taus: np.ndarray, m: int) -> np.ndarray:
        """Vectorized float path of shifted_intensity over query times `taus`
        (same shift-from-last-event semantics), for quadrature loops."""
        su = self.steady[m][0].data[user]
        sv = self.steady[m][1].data[item]
        base_u, origin_u = self.state.raw_state("user", user, self.user_table.data)
        base_v, origin_v = self.state.raw_state("item", item, self.item_table.data)
        w_u = self.params["shift_user"].data[user]
        w_v = self.params["shift_item"].data[item]
        du = (1.0 + (taus - origin_u)[:, None] * w_u) * base_u
        dv = (1.0 + (taus - origin_v)[:, None] * w_v) * base_v
        return softplus(float(su @ sv) + np.einsum("nd,nd->n", du, dv))

    # -- ranking ----------------------------------------------------------------

    def rank_items(self, user: int, t_plus: float):
        """All items sorted by intensity for `user` at `t_plus`, descending,
        ties broken by ascending item id.

        The returned scores are normalized by the total intensity over items;
        dividing every intensity by the same positive constant cannot change
        the order, so the ranking equals the raw-intensity ranking.
        """
        if not 0 <= user < self.net.n_users:
            raise IndexError(f"unknown user id {user}")
        entries = history(self.net, user, t_plus, self.cfg.max_history).entries
        m = self.snapshot_id(t_plus)
        su = self.steady[m][0].data[user]
        u_row = self.user_table.row(user)
        lams = np.empty(self.net.n_items)
        for item in range(self.net.n_items):
            v_row = self.item_table.row(item)
            feature = interaction_feature(u_row, v_row, t_plus, entries, self.item_table,
                                          self.freq, self.params, self.cfg.heads)
            dyn_u, dyn_v = update_dynamic(u_row, v_row, feature, self.params)
            sv = self.steady[m][1].data[item]
            lams[item] = softplus(float(su @ sv + dyn_u.data @ dyn_v.data))
        scores = lams / lams.sum()
        order = np.lexsort((np.arange(self.net.n_items), -scores))
        return [int(i) for i in order], scores

    # -- state updates ---------------------------------------------------------------

    def apply_event(self, user: int, item: int, t: float) -> None:
        """Advance the dynamic cache past an observed interaction."""
        _, dyn_u, dyn_v = self.event_terms(user, item, t)
        self.state.update("user", user, dyn_u.data, t)
        self.state.update("item", item, dyn_v.data, t)


@dataclass(frozen=True)
class IntervalPlan:
    """Frozen randomness for one interaction's non-happened-interaction term."""

    t_plus: float
    next_item: int
    times: np.ndarray
    negatives: tuple


def draw_mc_plan(window: TemporalNetwork, interactions, rng: np.random.Generator,
                 cfg: TrainConfig) -> list:
    """One IntervalPlan (or None) per interaction: the user's next event in
    the window, a sorted stratified timestamp set, and the negative items.

    Freezing the draws up front keeps the batch objective a pure function of
    the parameters, which the gradient checks rely on.
    """
    from graphtpp.likelihood import sample_negatives, stratified_times

    index = window.user_history_index()
    n_negatives = min(cfg.negatives, window.n_items - 1)
    plans = []
    for inter in interactions:
        times, items = index[inter.user]
        nxt = int(np.searchsorted(times, inter.time, side="right"))
        if nxt >= len(times) or times[nxt] <= inter.time:
            plans.append(None)
            continue
        t_plus = float(times[nxt])
        next_item = int(items[nxt])
        sample = stratified_times(rng, inter.time, t_plus, cfg.mc_samples)
        negs = sample_negatives(rng, next_item, window.n_items, n_negatives)
        plans.append(IntervalPlan(t_plus, next_item, sample, tuple(negs)))
    return plans


def batch_nll(model: Model, interactions, plans, update_state: bool = True) -> tuple:
    """Negative log-likelihood of one batch of consecutive interactions.

    Interactions are organized into t-batches; each t-batch's forward pass
    reads a consistent dynamic-state snapshot, and its state updates are
    applied before the next t-batch (skipped when `update_state` is False,
    which makes the loss a pure function of the parameters for gradient
    checks). Returns (loss Value, per-interaction mean loss float).
    """
    interactions = list(interactions)
    if not interactions:
        raise ValueError("batch must contain at least one interaction")
    plan_of = {id(it): p for it, p in zip(interactions, plans)}
    log_terms = []
    integral_terms = []
    for group in t_batch(interactions):
        updates = []
        for inter in group:
            lam, dyn_u, dyn_v = model.event_terms(inter.user, inter.item, inter.time)
            log_lam = lam.log()
            if not np.isfinite(log_lam.data):
                raise ValueError(
                    f"non-finite log-intensity for interaction "
                    f"(user={inter.user}, item={inter.item}, t={inter.time})")
            log_terms.append(log_lam)
            plan = plan_of[id(inter)]
            if plan is not None:
                integral_terms.append(_interval_term(model, inter, plan, dyn_u))
            updates.append((inter, dyn_u.data.copy(), dyn_v.data.copy()))
        if update_state:
            for inter, du, dv in updates:
                model.state.update("user", inter.user, du, inter.time)
                model.state.update("item", inter.item, dv, inter.time)

    loss = combine_nll(log_terms, integral_terms)
    if not np.isfinite(loss.data):
        raise ValueError("non-finite batch loss")
    return loss, float(loss.data) / len(interactions)


def _interval_term(model: Model, inter, plan: IntervalPlan, dyn_u: Value) -> Value:
    """Telescoping estimate of the total-intensity integral over the user's
    inter-event interval, scored on the next item plus the negative set and
    rescaled to the full user x item grid.

    The sampled items are evaluated as one stacked matrix per timestamp; the
    per-row softplus arguments equal the scalar intensities pair_intensity
    would produce."""
    m = model.snapshot_id(inter.time)
    items = list((plan.next_item,) + plan.negatives)
    rescale = grid_rescale(model.net.n_users, model.net.n_items, len(items))
    steady_u = model.steady[m][0].row(inter.user)
    shift_u = model.params["shift_user"].row(inter.user)
    shift_vecs = model.params["shift_item"].gather(items)
    bases = []
    origins = []
    for item in items:
        base, origin = model.state.base_and_origin("item", item, model.item_table)
        bases.append(base)
        origins.append(origin)
    base_mat = stack(bases)
    origins = np.asarray(origins)
    steady_dots = model.steady[m][1].gather(items) @ steady_u  # fixed across tau
    t0 = inter.time

    def lam_hat(tau: float) -> Value:
        dyn_u_tau = temporal_shift(dyn_u, shift_u, tau - t0)
        ages = (tau - origins).reshape(-1, 1)
        dyn_items = (1.0 + shift_vecs * ages) * base_mat
        lam_vec = (steady_dots + dyn_items @ dyn_u_tau).softplus()
        return lam_vec.sum() * rescale

    return telescoped_integral(plan.times, lam_hat)
