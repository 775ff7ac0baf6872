"""Report generation - CSV tables, JSON run summaries and SVG plots"""
from .report_generator import ReportGenerator, complex_columns
from .plotting import PlotSpec, emit_plot, fitted_slope

__all__ = ["ReportGenerator", "complex_columns", "PlotSpec", "emit_plot", "fitted_slope"]
