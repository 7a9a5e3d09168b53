"""Distributed metric index for exact range and k-nearest-neighbour search."""

from .coordinator import DIMS, DIMSConfig, QueryAnswer, QueryPlan
from .metric import Metric, MetricKind, MetricObject, validate_metric

__all__ = [
    "DIMS",
    "DIMSConfig",
    "Metric",
    "MetricKind",
    "MetricObject",
    "QueryAnswer",
    "QueryPlan",
    "validate_metric",
]
