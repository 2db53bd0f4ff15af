"""Intensity evaluation, survival integrals, and the Monte Carlo pieces of
the training objective.

The per-pair intensity is softplus of the steady dot product plus the
dynamic dot product. The survival integral is composite trapezoid; the
likelihood's non-happened term is the telescoping sum over a sorted
stratified-uniform timestamp set, with the total intensity over all pairs
estimated from the positive pair plus a negative sample, rescaled to the
full user x item grid.
"""

from __future__ import annotations

import numpy as np

from graphtpp.autodiff import Value, dot


def pair_intensity(steady_u: Value, steady_v: Value,
                   dyn_u: Value, dyn_v: Value) -> Value:
    """softplus(steady_u . steady_v + dyn_u . dyn_v), always positive."""
    score = dot(steady_u, steady_v) + dot(dyn_u, dyn_v)
    if not np.isfinite(score.data):
        raise ValueError("non-finite intensity input")
    return score.softplus()


def survival(intensity_at, t_start: float, t_end: float, grid_points: int = 256) -> float:
    """exp(-integral of the intensity over [t_start, t_end]) by composite
    trapezoid on `grid_points` nodes. `intensity_at(t)` returns a float."""
    if t_end < t_start:
        raise ValueError(f"survival interval reversed: [{t_start}, {t_end}]")
    if t_end == t_start:
        return 1.0
    ts = np.linspace(t_start, t_end, max(2, grid_points))
    lam = np.array([float(intensity_at(t)) for t in ts])
    return float(np.exp(-np.trapezoid(lam, ts)))


def stratified_times(rng: np.random.Generator, t_start: float, t_end: float,
                     n: int) -> np.ndarray:
    """n sorted timestamps, one uniform draw per equal sub-interval.

    Stratification keeps the telescoping estimator's variance below plain
    i.i.d. sampling while preserving its mean.
    """
    if n < 2:
        raise ValueError("need at least 2 sample timestamps")
    if not t_end > t_start:
        raise ValueError(f"empty sampling interval [{t_start}, {t_end}]")
    width = (t_end - t_start) / n
    return t_start + (np.arange(n) + rng.random(n)) * width


def telescoped_integral(times: np.ndarray, intensity_at):
    """Sum over k>=2 of (t_k - t_{k-1}) * intensity_at(t_k).

    Works with Value-returning or float-returning evaluators; the result
    type follows the evaluator.
    """
    if len(times) < 2:
        raise ValueError("telescoping sum needs at least 2 timestamps")
    total = None
    for prev, cur in zip(times[:-1], times[1:]):
        term = intensity_at(float(cur)) * float(cur - prev)
        total = term if total is None else total + term
    return total


def sample_negatives(rng: np.random.Generator, positive: int, n_items: int,
                     n: int) -> list[int]:
    """n distinct item ids, uniform without replacement, never the positive."""
    if n >= n_items:
        raise ValueError(f"cannot draw {n} negatives from {n_items} items")
    pool = np.delete(np.arange(n_items), positive)
    return [int(i) for i in rng.choice(pool, size=n, replace=False)]


def grid_rescale(n_users: int, n_items: int, sampled_pairs: int) -> float:
    """Scale a sampled-pair intensity sum up to the full U x V double sum."""
    if sampled_pairs <= 0:
        raise ValueError("need at least one sampled pair")
    return (n_users * n_items) / sampled_pairs


def combine_nll(log_intensities: list, integral_terms: list) -> Value:
    """-(sum of event log-intensities - sum of interval integral estimates)."""
    if not log_intensities:
        raise ValueError("batch must contain at least one interaction")
    happened = log_intensities[0]
    for term in log_intensities[1:]:
        happened = happened + term
    loss = -happened
    for term in integral_terms:
        loss = loss + term
    return loss
