"""Figure renderers for thermal shallow water run outputs."""

from .io import SchemaError, fit_order, read_convergence, read_snapshot, read_timeseries
from .plots import FigureSpec, plot_convergence, plot_field, plot_timeseries

__all__ = [
    "FigureSpec", "SchemaError", "fit_order", "plot_convergence", "plot_field",
    "plot_timeseries", "read_convergence", "read_snapshot", "read_timeseries",
]
