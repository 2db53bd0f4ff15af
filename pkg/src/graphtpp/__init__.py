"""Temporal point process model over user-item interaction networks.

Combines per-snapshot graph aggregation (steady embeddings), attention over
each user's long-range interaction history (dynamic embeddings), and a
softplus intensity trained by maximum likelihood with Monte Carlo estimation
of the survival integral.
"""

from graphtpp.autodiff import Adam, Parameters, Value, softplus
from graphtpp.data import TemporalNetwork, chrono_split, parse_interactions

__all__ = [
    "Adam",
    "Parameters",
    "Value",
    "softplus",
    "TemporalNetwork",
    "chrono_split",
    "parse_interactions",
]
