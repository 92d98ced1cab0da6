"""Figure rendering for odefilt CSV outputs.

Consumes only the CSV files emitted by the ``odefilt`` CLI (trace CSVs from
``infer``/``sweep rho`` and surface CSVs from ``sweep surface``); no in-process
coupling to the solver package.
"""

from odefilt_plots.render import (
    PlotJob,
    SchemaError,
    plot_convergence,
    plot_likelihood_surface,
    read_surface,
    read_trace,
)

__all__ = [
    "PlotJob",
    "SchemaError",
    "plot_convergence",
    "plot_likelihood_surface",
    "read_surface",
    "read_trace",
]
