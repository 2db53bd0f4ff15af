import numpy as np
import pytest
from scipy import stats

from graphtpp.autodiff import Value, softplus
from graphtpp.likelihood import (
    combine_nll,
    grid_rescale,
    pair_intensity,
    sample_negatives,
    stratified_times,
    survival,
    telescoped_integral,
)


# -- intensity ---------------------------------------------------------------

def test_intensity_all_zero_is_ln2():
    z = Value(np.zeros(4))
    lam = pair_intensity(z, z, z, z)
    assert lam.item() == pytest.approx(np.log(2.0), abs=1e-12)


def test_intensity_deep_negative_tail_positive():
    a = Value(np.array([5.0, 5.0]))
    b = Value(np.array([-5.0, 0.0]))  # dot = -25, twice -> -50
    lam = pair_intensity(a, b, a, b)
    assert lam.item() > 0.0
    assert lam.item() == pytest.approx(np.exp(-50.0), rel=1e-6)


def test_intensity_dynamic_scaling_is_quadratic():
    rng = np.random.default_rng(0)
    su, sv = Value(rng.normal(size=3)), Value(rng.normal(size=3))
    du, dv = Value(rng.normal(size=3)), Value(rng.normal(size=3))
    c = 2.5
    scaled = pair_intensity(su, sv, Value(c * du.data), Value(c * dv.data))
    direct = softplus(float(su.data @ sv.data) + c * c * float(du.data @ dv.data))
    assert scaled.item() == pytest.approx(direct, rel=1e-12)


def test_intensity_positive_randomized():
    rng = np.random.default_rng(1)
    for _ in range(200):
        vecs = [Value(rng.normal(scale=3.0, size=4)) for _ in range(4)]
        assert pair_intensity(*vecs).item() > 0.0


def test_intensity_rejects_nonfinite():
    bad = Value(np.array([np.inf, 0.0]))
    ok = Value(np.zeros(2))
    with pytest.raises(ValueError):
        pair_intensity(bad, ok, ok, ok)


# -- survival ------------------------------------------------------------------

def test_survival_constant_rate_closed_form():
    s = survival(lambda t: 2.0, 1.0, 1.5, grid_points=64)
    assert s == pytest.approx(np.exp(-1.0), abs=1e-6)


def test_survival_zero_interval_is_one():
    assert survival(lambda t: 123.0, 4.0, 4.0) == 1.0


def test_survival_linear_rate_matches_quadratic_compensator():
    s = survival(lambda t: t, 0.0, 2.0, grid_points=1000)
    assert s == pytest.approx(np.exp(-2.0), abs=1e-4)


def test_survival_monotone_nonincreasing():
    ends = np.linspace(0.0, 3.0, 20)
    vals = [survival(lambda t: 0.7 + 0.1 * t, 0.0, e, grid_points=200) for e in ends]
    assert vals[0] == 1.0
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_survival_rejects_reversed_interval():
    with pytest.raises(ValueError):
        survival(lambda t: 1.0, 2.0, 1.0)


# -- stratified sampling and telescoping sum ---------------------------------------

def test_stratified_times_sorted_in_interval():
    rng = np.random.default_rng(2)
    for _ in range(100):
        ts = stratified_times(rng, 3.0, 7.0, int(rng.integers(2, 50)))
        assert np.all(np.diff(ts) > 0)
        assert ts[0] >= 3.0 and ts[-1] <= 7.0


def test_stratified_times_need_two():
    with pytest.raises(ValueError):
        stratified_times(np.random.default_rng(0), 0.0, 1.0, 1)


def test_telescoped_constant_equals_span():
    times = np.linspace(2.0, 4.0, 9)
    c = 1.7
    out = telescoped_integral(times, lambda t: c)
    assert out == pytest.approx(c * (times[-1] - times[0]))


def test_telescoped_two_samples_single_term():
    times = np.array([1.0, 1.5])
    out = telescoped_integral(times, lambda t: t)
    assert out == pytest.approx(0.5 * 1.5)


def test_telescoped_estimator_mean_matches_stratified_expectation():
    # E[t_N - t_1] = span * (N-1)/N under one-draw-per-stratum sampling
    rng = np.random.default_rng(3)
    n, span, c, reps = 64, 2.0, 3.0, 10_000
    acc = 0.0
    for _ in range(reps):
        times = stratified_times(rng, 1.0, 1.0 + span, n)
        acc += telescoped_integral(times, lambda t: c)
    mean = acc / reps
    expected = c * span * (n - 1) / n
    assert abs(mean - expected) / expected < 0.02


def test_telescoped_integral_works_with_values():
    lam = Value(2.0)
    times = np.linspace(0.0, 1.0, 5)
    out = telescoped_integral(times, lambda t: lam * 1.0)
    out.backward()
    assert out.item() == pytest.approx(2.0 * (times[-1] - times[0]))
    assert lam.grad == pytest.approx(times[-1] - times[0])


# -- negative sampling ----------------------------------------------------------------

def test_negatives_distinct_and_exclude_positive():
    rng = np.random.default_rng(4)
    for _ in range(100):
        negs = sample_negatives(rng, positive=7, n_items=50, n=10)
        assert len(negs) == len(set(negs)) == 10
        assert 7 not in negs
        assert all(0 <= i < 50 for i in negs)


def test_negatives_forced_choice():
    rng = np.random.default_rng(5)
    assert sample_negatives(rng, positive=0, n_items=2, n=1) == [1]


def test_negatives_too_many_rejected():
    with pytest.raises(ValueError):
        sample_negatives(np.random.default_rng(0), 0, 10, 10)


def test_negatives_uniform_chi_square():
    rng = np.random.default_rng(6)
    n_items, draws = 20, 100_000
    counts = np.zeros(n_items)
    for _ in range(draws // 5):
        for i in sample_negatives(rng, positive=3, n_items=n_items, n=5):
            counts[i] += 1
    counts = np.delete(counts, 3)
    _, p = stats.chisquare(counts)
    assert p > 0.01


# -- loss combination ------------------------------------------------------------------

def test_combine_nll_empty_batch_rejected():
    with pytest.raises(ValueError):
        combine_nll([], [])


def test_combine_nll_signs():
    loss = combine_nll([Value(1.0), Value(2.0)], [Value(0.5)])
    assert loss.item() == pytest.approx(-(1.0 + 2.0) + 0.5)


def test_combine_nll_monotone_in_log_terms():
    base = combine_nll([Value(1.0)], [Value(0.7)])
    better = combine_nll([Value(2.0)], [Value(0.7)])
    assert better.item() < base.item()


def test_grid_rescale():
    assert grid_rescale(2, 3, 3) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        grid_rescale(2, 3, 0)


def test_single_event_homogeneous_nll_closed_form():
    # one event with frozen rate lam* over an interval of length delta:
    # loss = -log lam* + lam* * delta, the MC term approaching the integral
    rng = np.random.default_rng(7)
    lam_star, delta, n = 1.7, 2.0, 2000
    times = stratified_times(rng, 10.0, 10.0 + delta, n)
    integral = telescoped_integral(times, lambda t: lam_star)
    loss = combine_nll([Value(np.log(lam_star))], [Value(integral)])
    assert loss.item() == pytest.approx(-np.log(lam_star) + lam_star * delta, rel=2e-3)


def test_likelihood_dominance_on_homogeneous_data():
    # data generated at rate lam*: expected nll is minimized near lam*
    rng = np.random.default_rng(8)
    lam_star, horizon = 2.0, 500.0
    n_events = rng.poisson(lam_star * horizon)

    def nll(rate):
        return -(n_events * np.log(rate) - rate * horizon)

    assert nll(lam_star) < nll(2 * lam_star)
    assert nll(lam_star) < nll(0.5 * lam_star)
