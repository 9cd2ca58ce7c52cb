"""Figure rendering for renyiqmc sweep and analysis outputs."""

from .figspec import KINDS, FigureSpec, normalize_kind
from .io import (
    PlotsError,
    curve_arrays,
    load_analysis,
    load_summary,
    load_sweep_summaries,
    summary_quantity,
)
from .render import (
    crossing_marker,
    plot_collapse,
    plot_crossing,
    plot_phase_diagram,
    residual_spread,
)

__version__ = "0.1.0"

__all__ = [
    "KINDS",
    "FigureSpec",
    "PlotsError",
    "crossing_marker",
    "curve_arrays",
    "load_analysis",
    "load_summary",
    "load_sweep_summaries",
    "normalize_kind",
    "plot_collapse",
    "plot_crossing",
    "plot_phase_diagram",
    "residual_spread",
    "summary_quantity",
    "__version__",
]
