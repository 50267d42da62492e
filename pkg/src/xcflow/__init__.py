"""Cross curvature flow on a periodic slab with a gauge-fixed time stepper."""

from __future__ import annotations

from .chart import ChartSpec, MetricField, TensorField, make_chart

__version__ = "0.1.0"

__all__ = [
    "ChartSpec",
    "MetricField",
    "TensorField",
    "make_chart",
    "__version__",
]
