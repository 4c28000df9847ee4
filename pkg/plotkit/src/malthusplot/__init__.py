"""Batch renderer turning malthus-bench CSV output into figures."""

from .charts import render_fairness_panel, render_throughput_chart
from .tables import SeriesTable

__all__ = ["SeriesTable", "render_fairness_panel", "render_throughput_chart"]
