import numpy as np
import pytest

from graphtpp.autodiff import Parameters, Value, dot
from graphtpp.embedding import (
    init_node_tables,
    init_time_frequencies,
    lookup,
    time_embedding,
)
from oracles import check_grads


@pytest.fixture
def tables():
    params = Parameters()
    rng = np.random.default_rng(0)
    users, items = init_node_tables(params, rng, n_users=4, n_items=3, dim=6)
    return params, users, items


def test_lookup_deterministic(tables):
    _, users, _ = tables
    assert np.array_equal(lookup(users, 2).data, lookup(users, 2).data)


def test_lookup_out_of_range(tables):
    _, users, _ = tables
    with pytest.raises(IndexError):
        lookup(users, 4)


def test_lookup_gradient_hits_only_that_row(tables):
    params, users, _ = tables
    c = Value(np.arange(6.0))
    params.zero_grad()
    dot(lookup(users, 1), c).backward()
    grad = users.grad
    assert np.allclose(grad[1], c.data)
    assert np.allclose(np.delete(grad, 1, axis=0), 0.0)


def test_time_embedding_zero_interval_zero_position():
    params = Parameters()
    freq = init_time_frequencies(params, 8)
    out = time_embedding(freq, position=0, t_event=5.0, t_query=5.0).data
    assert np.allclose(out[0::2], 1.0)  # odd 1-based j = even 0-based index -> cos(0)
    assert np.allclose(out[1::2], 0.0)


def test_time_embedding_quarter_period():
    params = Parameters()
    freq = params.add("time_freq", np.ones(6))
    out = time_embedding(freq, position=0, t_event=0.0, t_query=np.pi / 2).data
    assert np.allclose(out[0::2], 0.0, atol=1e-12)
    assert np.allclose(out[1::2], 1.0, atol=1e-12)


def test_time_embedding_bounded():
    params = Parameters()
    freq = init_time_frequencies(params, 10)
    rng = np.random.default_rng(1)
    for _ in range(200):
        t0 = rng.uniform(0, 1e4)
        out = time_embedding(freq, int(rng.integers(0, 50)), t0, t0 + rng.uniform(0, 1e4))
        assert np.all(out.data >= -1.0) and np.all(out.data <= 1.0)


def test_time_embedding_translation_invariant():
    params = Parameters()
    freq = init_time_frequencies(params, 12)
    a = time_embedding(freq, 3, 10.0, 14.5).data
    b = time_embedding(freq, 3, 110.0, 114.5).data
    assert np.max(np.abs(a - b)) < 1e-12


def test_time_embedding_rejects_reversed_times():
    params = Parameters()
    freq = init_time_frequencies(params, 4)
    with pytest.raises(ValueError):
        time_embedding(freq, 0, 2.0, 1.0)


def test_time_embedding_frequency_gradient_matches_fd():
    params = Parameters()
    freq = params.add("time_freq", np.random.default_rng(3).uniform(0.1, 1.0, size=6))
    c = np.random.default_rng(4).normal(size=6)

    def build():
        return dot(time_embedding(freq, 2, 1.0, 3.7), Value(c))

    errs = check_grads(params.items(), build)
    assert errs["time_freq"] < 1e-5
