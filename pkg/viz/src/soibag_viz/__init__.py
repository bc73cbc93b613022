"""Offline figure rendering for soibag run logs and reports."""

from .errors import MissingRecords, UnknownPlotKind, VizError
from .plots import PLOT_KINDS, PlotJob, build_figure, load_records, render

__version__ = "0.1.0"

__all__ = [
    "MissingRecords",
    "UnknownPlotKind",
    "VizError",
    "PLOT_KINDS",
    "PlotJob",
    "build_figure",
    "load_records",
    "render",
    "__version__",
]
