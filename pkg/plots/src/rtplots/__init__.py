"""Success-plot rendering for exported tracker evaluation reports."""

from .render import (DEFAULT_SUBSETS, PlotSpec, ReportError, ReportRef,
                     build_figure, load_report_curves, render)

__all__ = ["DEFAULT_SUBSETS", "PlotSpec", "ReportError", "ReportRef",
           "build_figure", "load_report_curves", "render"]
