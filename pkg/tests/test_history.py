import numpy as np
import pytest

from graphtpp.autodiff import Parameters, Value, dot
from graphtpp.embedding import init_node_tables, init_time_frequencies
from graphtpp.history import (
    DynamicState,
    attention_weights,
    init_history_params,
    interaction_feature,
    temporal_shift,
    update_dynamic,
)
from oracles import check_grads

D = 8
HEADS = 4


@pytest.fixture
def setup():
    params = Parameters()
    rng = np.random.default_rng(0)
    users, items = init_node_tables(params, rng, n_users=3, n_items=5, dim=D)
    freq = init_time_frequencies(params, D)
    init_history_params(params, rng, D, n_users=3, n_items=5)
    return params, users, items, freq


def _o(params, users, items, freq, entries, t=10.0, heads=HEADS, positions=None):
    return interaction_feature(users.row(0), items.row(0), t, entries, items,
                               freq, params, heads=heads, positions=positions)


# -- attentive interaction ------------------------------------------------------

def test_single_history_item_is_relu_of_value_projection(setup):
    params, users, items, freq = setup
    out = _o(params, users, items, freq, ((2, 4.0),))
    expected = np.maximum(params["attn_value"].data @ items.data[2], 0.0)
    assert np.allclose(out.data, expected, atol=1e-12)


def test_single_history_attention_weight_is_one(setup):
    params, users, items, freq = setup
    w = attention_weights(users.row(0), items.row(0), 10.0, ((2, 4.0),),
                          items, freq, params, heads=HEADS)
    assert np.allclose(w, 1.0)


def test_two_identical_entries_split_evenly(setup):
    params, users, items, freq = setup
    entries = ((2, 4.0), (2, 4.0))
    # identical items, timestamps, and position handling -> 0.5/0.5 per head
    w = attention_weights(users.row(0), items.row(0), 10.0, entries, items,
                          freq, params, heads=HEADS, positions=[3, 3])
    assert np.allclose(w, 0.5, atol=1e-12)
    out = _o(params, users, items, freq, entries, positions=[3, 3])
    single = _o(params, users, items, freq, ((2, 4.0),), positions=[3])
    assert np.allclose(out.data, single.data, atol=1e-12)


def test_attention_weights_sum_to_one(setup):
    params, users, items, freq = setup
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(1, 9))
        entries = tuple((int(rng.integers(0, 5)), float(x))
                        for x in np.sort(rng.uniform(0, 9, size=n)))
        w = attention_weights(users.row(0), items.row(0), 10.0, entries, items,
                              freq, params, heads=HEADS)
        assert np.allclose(w.sum(axis=1), 1.0, atol=1e-12)


def test_empty_history_cold_start_zero_vector(setup):
    params, users, items, freq = setup
    out = _o(params, users, items, freq, ())
    assert np.array_equal(out.data, np.zeros(D))


def test_history_after_query_time_rejected(setup):
    params, users, items, freq = setup
    with pytest.raises(ValueError):
        _o(params, users, items, freq, ((1, 11.0),), t=10.0)


def test_permutation_with_matching_positions_identical(setup):
    params, users, items, freq = setup
    entries = ((1, 2.0), (3, 5.0), (4, 7.5))
    base = _o(params, users, items, freq, entries)
    perm = (2, 0, 1)
    shuffled = tuple(entries[i] for i in perm)
    positions = [perm[i] + 1 for i in range(3)]
    # entry k keeps its original 1-based position k+1 wherever it lands
    out = _o(params, users, items, freq, shuffled,
             positions=[i + 1 for i in perm])
    assert np.max(np.abs(out.data - base.data)) < 1e-10


def test_head_count_must_divide_dims(setup):
    params, users, items, freq = setup
    with pytest.raises(ValueError):
        _o(params, users, items, freq, ((1, 2.0),), heads=3)


def test_single_head_matches_plain_formula(setup):
    params, users, items, freq = setup
    entries = ((1, 2.0), (3, 5.0))
    out = _o(params, users, items, freq, entries, heads=1)
    # plain single-score evaluation with numpy
    u = users.data[0]
    v = items.data[0]
    w_q, w_k, w_v = (params[k].data for k in ("attn_query", "attn_key", "attn_value"))
    from graphtpp.embedding import time_embedding

    def p(pos, te):
        return time_embedding(Value(params["time_freq"].data), pos, te, 10.0).data

    q = w_q @ np.concatenate([u, v + p(2, 5.0)])
    scores = []
    for pos, (it, te) in enumerate(entries, start=1):
        k = w_k @ np.concatenate([u, items.data[it] + p(pos, te)])
        scores.append(q @ k)
    scores = np.array(scores)
    alpha = np.exp(scores - scores.max())
    alpha /= alpha.sum()
    expected = np.maximum(sum(a * (w_v @ items.data[it])
                              for a, (it, _) in zip(alpha, entries)), 0.0)
    assert np.allclose(out.data, expected, atol=1e-10)


def test_query_projection_gradient_matches_fd(setup):
    params, users, items, freq = setup
    entries = ((1, 2.0), (3, 5.0), (2, 6.0))

    def build():
        out = _o(params, users, items, freq, entries)
        return dot(out, out)

    errs = check_grads([("attn_query", params["attn_query"]),
                        ("attn_key", params["attn_key"]),
                        ("attn_value", params["attn_value"]),
                        ("time_freq", params["time_freq"])], build)
    assert max(errs.values()) < 1e-5, errs


# -- dynamic update ----------------------------------------------------------------

def test_update_dynamic_zero_params_halves_static():
    params = Parameters()
    rng = np.random.default_rng(2)
    users, items = init_node_tables(params, rng, 2, 2, D)
    for side in ("user", "item"):
        params.add(f"dyn_{side}_wx", np.zeros((3 * D, D)))
        params.add(f"dyn_{side}_wh", np.zeros((3 * D, D)))
        params.add(f"dyn_{side}_b", np.zeros(3 * D))
    o = Value(rng.normal(size=D))
    u_t, v_t = update_dynamic(users.row(0), items.row(1), o, params)
    assert np.allclose(u_t.data, 0.5 * users.data[0], atol=1e-14)
    assert np.allclose(v_t.data, 0.5 * items.data[1], atol=1e-14)


def test_update_dynamic_shapes_and_determinism(setup):
    params, users, items, freq = setup
    o = Value(np.random.default_rng(3).normal(size=D))
    a = update_dynamic(users.row(1), items.row(2), o, params)
    b = update_dynamic(users.row(1), items.row(2), o, params)
    assert a[0].shape == (D,) and a[1].shape == (D,)
    assert np.array_equal(a[0].data, b[0].data)
    assert np.array_equal(a[1].data, b[1].data)


# -- temporal shift ------------------------------------------------------------------

def test_shift_zero_interval_identity():
    emb = Value(np.array([1.0, 2.0, -3.0]))
    w = Value(np.array([0.5, -0.5, 2.0]))
    assert np.array_equal(temporal_shift(emb, w, 0.0).data, emb.data)


def test_shift_zero_vector_identity():
    emb = Value(np.array([1.0, 2.0]))
    assert np.array_equal(temporal_shift(emb, Value(np.zeros(2)), 7.3).data, emb.data)


def test_shift_hand_example():
    out = temporal_shift(Value(np.array([1.0, 2.0])),
                         Value(np.array([0.5, -0.5])), 2.0)
    assert np.allclose(out.data, [2.0, 0.0])


def test_shift_rejects_negative_interval():
    with pytest.raises(ValueError):
        temporal_shift(Value(np.ones(2)), Value(np.ones(2)), -0.1)


def test_shift_composition_is_not_additive_and_canonical_path_used():
    rng = np.random.default_rng(4)
    state = DynamicState(1, 1)
    vec = rng.normal(size=D)
    state.update("user", 0, vec, 5.0)
    params = Parameters()
    users, _ = init_node_tables(params, rng, 1, 1, D)
    shift = params.add("shift_user", rng.normal(size=(1, D)))
    at_9 = state.dynamic_at("user", 0, 9.0, users, shift)
    canonical = temporal_shift(Value(vec), shift.row(0), 4.0)
    assert np.allclose(at_9.data, canonical.data)
    chained = temporal_shift(temporal_shift(Value(vec), shift.row(0), 2.0),
                             shift.row(0), 2.0)
    assert not np.allclose(chained.data, canonical.data)


def test_dynamic_state_rejects_time_regression():
    state = DynamicState(2, 2)
    state.update("item", 1, np.ones(3), 4.0)
    with pytest.raises(ValueError):
        state.update("item", 1, np.ones(3), 3.0)


def test_dynamic_state_cold_node_uses_static_row():
    rng = np.random.default_rng(5)
    params = Parameters()
    users, _ = init_node_tables(params, rng, 2, 1, D)
    shift = params.add("shift_user", np.zeros((2, D)))
    state = DynamicState(2, 1)
    out = state.dynamic_at("user", 1, 3.0, users, shift)
    assert np.allclose(out.data, users.data[1])
