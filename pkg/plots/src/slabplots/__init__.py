"""slabplots: batch figures from radslab CSV/JSON exports.

Consumes only the documented file formats (run CSV, study CSV/JSON, regime
table JSON, layer profile CSV); rendering is read-only over the inputs and
reruns are byte-identical.
"""

from .render import FIGURE_KINDS, PlotSpec, SchemaError, render

__all__ = ["PlotSpec", "render", "SchemaError", "FIGURE_KINDS"]

__version__ = "0.1.0"
