"""Publication-style figures from clgsim CSV/JSON outputs.

This package is strictly read-only over the data contract: it consumes the
CSV and JSON files written by the `clg` driver (and the FigureSpec JSON
files emitted by `clg plot-data`) and renders images.  It has no other
coupling to the simulator.
"""

from .render import FIGURE_KINDS, SchemaError, render_figure

__version__ = "0.1.0"
__all__ = ["FIGURE_KINDS", "SchemaError", "render_figure", "__version__"]
